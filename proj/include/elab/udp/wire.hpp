#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>

namespace elab::udp {

// Little-endian wire layout, fixed sizes, CRC32 over all preceding bytes.
//
// State datagram (environment -> agent), 50 bytes:
//   0   magic "ELB"
//   3   version (1)
//   4   cycle index, u32
//   8   8 state floats, f32 each
//   40  reward, f32
//   44  done, u8
//   45  flags, u8 (coordinator bits; 0 in plain cycles)
//   46  crc32, u32
//
// Action datagram (agent -> environment), 24 bytes:
//   0   magic "ELB"
//   3   version (1)
//   4   cycle index, u32 (echo of the request)
//   8   3 raw-action floats, f32 each
//   20  crc32, u32

constexpr uint8_t kVersion = 1;
constexpr size_t kStateDatagramSize = 50;
constexpr size_t kActionDatagramSize = 24;

uint32_t crc32(std::span<const uint8_t> data);

struct StateDatagram {
  uint32_t cycle = 0;
  std::array<float, 8> state{};
  float reward = 0.0f;
  uint8_t done = 0;
  uint8_t flags = 0;
};

struct ActionDatagram {
  uint32_t cycle = 0;
  std::array<float, 3> action{};
};

enum class DecodeError { None, Size, Magic, Version, Crc };

std::array<uint8_t, kStateDatagramSize> encode_state(const StateDatagram& d);
std::array<uint8_t, kActionDatagramSize> encode_action(const ActionDatagram& d);

std::optional<StateDatagram> decode_state(std::span<const uint8_t> bytes,
                                          DecodeError* error = nullptr);
std::optional<ActionDatagram> decode_action(std::span<const uint8_t> bytes,
                                            DecodeError* error = nullptr);

}  // namespace elab::udp

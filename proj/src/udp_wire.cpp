#include "elab/udp/wire.hpp"

#include <bit>
#include <cstring>

namespace elab::udp {

namespace {

constexpr uint8_t kMagic[3] = {'E', 'L', 'B'};

struct Crc32Table {
  uint32_t t[256];
  constexpr Crc32Table() : t{} {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
  }
};
constexpr Crc32Table kCrcTable;

void put_u32(uint8_t* p, uint32_t v) {
  p[0] = static_cast<uint8_t>(v);
  p[1] = static_cast<uint8_t>(v >> 8);
  p[2] = static_cast<uint8_t>(v >> 16);
  p[3] = static_cast<uint8_t>(v >> 24);
}

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

void put_f32(uint8_t* p, float v) { put_u32(p, std::bit_cast<uint32_t>(v)); }
float get_f32(const uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

bool check_header(std::span<const uint8_t> bytes, DecodeError* error) {
  if (std::memcmp(bytes.data(), kMagic, 3) != 0) {
    if (error) *error = DecodeError::Magic;
    return false;
  }
  if (bytes[3] != kVersion) {
    if (error) *error = DecodeError::Version;
    return false;
  }
  return true;
}

bool check_crc(std::span<const uint8_t> bytes, DecodeError* error) {
  const size_t n = bytes.size();
  const uint32_t expected = get_u32(bytes.data() + n - 4);
  if (crc32(bytes.subspan(0, n - 4)) != expected) {
    if (error) *error = DecodeError::Crc;
    return false;
  }
  return true;
}

}  // namespace

uint32_t crc32(std::span<const uint8_t> data) {
  uint32_t c = 0xFFFFFFFFu;
  for (uint8_t b : data) c = kCrcTable.t[(c ^ b) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::array<uint8_t, kStateDatagramSize> encode_state(const StateDatagram& d) {
  std::array<uint8_t, kStateDatagramSize> out{};
  std::memcpy(out.data(), kMagic, 3);
  out[3] = kVersion;
  put_u32(out.data() + 4, d.cycle);
  for (int i = 0; i < 8; ++i) put_f32(out.data() + 8 + 4 * i, d.state[i]);
  put_f32(out.data() + 40, d.reward);
  out[44] = d.done;
  out[45] = d.flags;
  put_u32(out.data() + 46, crc32(std::span(out.data(), 46)));
  return out;
}

std::array<uint8_t, kActionDatagramSize> encode_action(const ActionDatagram& d) {
  std::array<uint8_t, kActionDatagramSize> out{};
  std::memcpy(out.data(), kMagic, 3);
  out[3] = kVersion;
  put_u32(out.data() + 4, d.cycle);
  for (int i = 0; i < 3; ++i) put_f32(out.data() + 8 + 4 * i, d.action[i]);
  put_u32(out.data() + 20, crc32(std::span(out.data(), 20)));
  return out;
}

std::optional<StateDatagram> decode_state(std::span<const uint8_t> bytes, DecodeError* error) {
  if (error) *error = DecodeError::None;
  if (bytes.size() != kStateDatagramSize) {
    if (error) *error = DecodeError::Size;
    return std::nullopt;
  }
  if (!check_header(bytes, error) || !check_crc(bytes, error)) return std::nullopt;
  StateDatagram d;
  d.cycle = get_u32(bytes.data() + 4);
  for (int i = 0; i < 8; ++i) d.state[i] = get_f32(bytes.data() + 8 + 4 * i);
  d.reward = get_f32(bytes.data() + 40);
  d.done = bytes[44];
  d.flags = bytes[45];
  return d;
}

std::optional<ActionDatagram> decode_action(std::span<const uint8_t> bytes, DecodeError* error) {
  if (error) *error = DecodeError::None;
  if (bytes.size() != kActionDatagramSize) {
    if (error) *error = DecodeError::Size;
    return std::nullopt;
  }
  if (!check_header(bytes, error) || !check_crc(bytes, error)) return std::nullopt;
  ActionDatagram d;
  d.cycle = get_u32(bytes.data() + 4);
  for (int i = 0; i < 3; ++i) d.action[i] = get_f32(bytes.data() + 8 + 4 * i);
  return d;
}

}  // namespace elab::udp

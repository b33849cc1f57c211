#pragma once

#include <atomic>
#include <functional>
#include <optional>
#include <string>

#include "elab/udp/wire.hpp"

namespace elab::udp {

// Thin RAII wrapper over one bound UDP socket. Addresses are "host:port".
class UdpSocket {
 public:
  explicit UdpSocket(const std::string& listen_addr);
  ~UdpSocket();
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  void set_peer(const std::string& peer_addr);
  void send(std::span<const uint8_t> bytes);           // to the configured peer
  void send_to_last_sender(std::span<const uint8_t> bytes);

  // Blocks up to timeout_ms; returns the received byte count or -1 on timeout.
  int receive(std::span<uint8_t> buffer, int timeout_ms);

  std::string local_address() const;  // actual bound address (resolves port 0)

 private:
  int fd_ = -1;
  struct Impl;
  Impl* impl_;
};

struct LinkCounters {
  long sent = 0;
  long received = 0;
  long fallbacks = 0;
  long stale = 0;          // wrong cycle index
  long crc_drops = 0;
  long version_drops = 0;
  long malformed = 0;      // size/magic/pad failures
  long duplicates = 0;     // agent side: repeated request index
};

// Environment-side endpoint: one outstanding request per cycle, hard
// deadline, fallback on miss.
class EnvEndpoint {
 public:
  EnvEndpoint(const std::string& listen_addr, const std::string& peer_addr, int deadline_ms);

  // Sends the state and waits for the matching action. nullopt means the
  // deadline passed (or only undecodable/stale datagrams arrived in time);
  // the caller substitutes the start-point fallback action. A positive
  // deadline_override_ms replaces the configured deadline for this request.
  std::optional<ActionDatagram> request_action(const StateDatagram& state,
                                               int deadline_override_ms = -1);

  const LinkCounters& counters() const { return counters_; }
  std::string local_address() const { return socket_.local_address(); }

 private:
  UdpSocket socket_;
  int deadline_ms_;
  LinkCounters counters_;
};

// Agent-side endpoint: replies to every valid state datagram via the
// handler; duplicate requests are answered from a one-entry reply cache so
// the handler (and any experience buffering inside it) runs once per index.
class AgentLoop {
 public:
  using Handler = std::function<std::array<float, 3>(const StateDatagram&)>;

  AgentLoop(const std::string& listen_addr, Handler handler);

  void run(const std::atomic<bool>& stop);
  void run_cycles(long max_replies, const std::atomic<bool>& stop);

  const LinkCounters& counters() const { return counters_; }
  std::string local_address() const { return socket_.local_address(); }

  // Test hook: artificial per-cycle reply delay in milliseconds.
  std::function<int(uint32_t)> delay_hook;

 private:
  UdpSocket socket_;
  Handler handler_;
  LinkCounters counters_;
  bool have_last_ = false;
  uint32_t last_cycle_ = 0;
  std::array<uint8_t, kActionDatagramSize> last_reply_{};
};

}  // namespace elab::udp

#include "elab/udp/link.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <stdexcept>
#include <thread>

#include "elab/core/errors.hpp"

namespace elab::udp {

namespace {

sockaddr_in parse_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ConfigError("UDP address must be host:port, got " + addr);
  const std::string host = addr.substr(0, colon);
  const int port = std::stoi(addr.substr(colon + 1));
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<uint16_t>(port));
  if (inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1)
    throw ConfigError("cannot parse UDP host " + host);
  return sa;
}

std::string addr_to_string(const sockaddr_in& sa) {
  char host[INET_ADDRSTRLEN];
  inet_ntop(AF_INET, &sa.sin_addr, host, sizeof(host));
  return std::string(host) + ":" + std::to_string(ntohs(sa.sin_port));
}

}  // namespace

struct UdpSocket::Impl {
  sockaddr_in peer{};
  bool have_peer = false;
  sockaddr_in last_sender{};
  bool have_sender = false;
};

UdpSocket::UdpSocket(const std::string& listen_addr) : impl_(new Impl) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw std::runtime_error("socket() failed");
  const sockaddr_in sa = parse_addr(listen_addr);
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) != 0) {
    ::close(fd_);
    throw std::runtime_error("bind(" + listen_addr + ") failed: " + std::strerror(errno));
  }
}

UdpSocket::~UdpSocket() {
  if (fd_ >= 0) ::close(fd_);
  delete impl_;
}

void UdpSocket::set_peer(const std::string& peer_addr) {
  impl_->peer = parse_addr(peer_addr);
  impl_->have_peer = true;
}

void UdpSocket::send(std::span<const uint8_t> bytes) {
  if (!impl_->have_peer) throw std::runtime_error("UDP send without a configured peer");
  const ssize_t n = ::sendto(fd_, bytes.data(), bytes.size(), 0,
                             reinterpret_cast<const sockaddr*>(&impl_->peer), sizeof(impl_->peer));
  if (n != static_cast<ssize_t>(bytes.size()))
    throw std::runtime_error(std::string("sendto failed: ") + std::strerror(errno));
}

void UdpSocket::send_to_last_sender(std::span<const uint8_t> bytes) {
  if (!impl_->have_sender) throw std::runtime_error("no datagram received yet");
  const ssize_t n =
      ::sendto(fd_, bytes.data(), bytes.size(), 0,
               reinterpret_cast<const sockaddr*>(&impl_->last_sender), sizeof(impl_->last_sender));
  if (n != static_cast<ssize_t>(bytes.size()))
    throw std::runtime_error(std::string("sendto failed: ") + std::strerror(errno));
}

int UdpSocket::receive(std::span<uint8_t> buffer, int timeout_ms) {
  pollfd pfd{fd_, POLLIN, 0};
  const int rc = ::poll(&pfd, 1, timeout_ms);
  if (rc == 0) return -1;
  if (rc < 0) throw std::runtime_error(std::string("poll failed: ") + std::strerror(errno));
  sockaddr_in from{};
  socklen_t from_len = sizeof(from);
  const ssize_t n = ::recvfrom(fd_, buffer.data(), buffer.size(), 0,
                               reinterpret_cast<sockaddr*>(&from), &from_len);
  if (n < 0) throw std::runtime_error(std::string("recvfrom failed: ") + std::strerror(errno));
  impl_->last_sender = from;
  impl_->have_sender = true;
  return static_cast<int>(n);
}

std::string UdpSocket::local_address() const {
  sockaddr_in sa{};
  socklen_t len = sizeof(sa);
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len) != 0)
    throw std::runtime_error("getsockname failed");
  return addr_to_string(sa);
}

EnvEndpoint::EnvEndpoint(const std::string& listen_addr, const std::string& peer_addr,
                         int deadline_ms)
    : socket_(listen_addr), deadline_ms_(deadline_ms) {
  socket_.set_peer(peer_addr);
}

std::optional<ActionDatagram> EnvEndpoint::request_action(const StateDatagram& state,
                                                          int deadline_override_ms) {
  using Clock = std::chrono::steady_clock;
  const auto bytes = encode_state(state);
  const int deadline_ms = deadline_override_ms > 0 ? deadline_override_ms : deadline_ms_;
  const auto deadline = Clock::now() + std::chrono::milliseconds(deadline_ms);
  socket_.send(bytes);
  counters_.sent += 1;

  std::array<uint8_t, 256> buf{};
  while (true) {
    const auto now = Clock::now();
    const auto left_us =
        std::chrono::duration_cast<std::chrono::microseconds>(deadline - now).count();
    if (left_us <= 0) break;
    const int remaining = static_cast<int>((left_us + 999) / 1000);  // round up for poll()
    const int n = socket_.receive(buf, remaining);
    if (n < 0) break;  // timeout
    DecodeError err;
    const auto reply = decode_action(std::span(buf.data(), static_cast<size_t>(n)), &err);
    if (!reply) {
      switch (err) {
        case DecodeError::Crc: counters_.crc_drops += 1; break;
        case DecodeError::Version: counters_.version_drops += 1; break;
        default: counters_.malformed += 1; break;
      }
      continue;
    }
    if (reply->cycle != state.cycle) {
      counters_.stale += 1;  // old reply still in flight; drop silently
      continue;
    }
    counters_.received += 1;
    return reply;
  }
  counters_.fallbacks += 1;
  return std::nullopt;
}

AgentLoop::AgentLoop(const std::string& listen_addr, Handler handler)
    : socket_(listen_addr), handler_(std::move(handler)) {}

void AgentLoop::run(const std::atomic<bool>& stop) { run_cycles(-1, stop); }

void AgentLoop::run_cycles(long max_replies, const std::atomic<bool>& stop) {
  std::array<uint8_t, 256> buf{};
  long replies = 0;
  while (!stop.load(std::memory_order_relaxed) && (max_replies < 0 || replies < max_replies)) {
    const int n = socket_.receive(buf, 50);
    if (n < 0) continue;
    DecodeError err;
    const auto request = decode_state(std::span(buf.data(), static_cast<size_t>(n)), &err);
    if (!request) {
      switch (err) {
        case DecodeError::Crc: counters_.crc_drops += 1; break;
        case DecodeError::Version: counters_.version_drops += 1; break;
        default: counters_.malformed += 1; break;
      }
      continue;
    }
    counters_.received += 1;
    if (have_last_ && request->cycle == last_cycle_) {
      // Duplicate request: idempotent resend, the handler is not re-run.
      counters_.duplicates += 1;
      socket_.send_to_last_sender(last_reply_);
      counters_.sent += 1;
      continue;
    }
    const std::array<float, 3> action = handler_(*request);
    if (delay_hook) {
      const int delay = delay_hook(request->cycle);
      if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
    ActionDatagram reply;
    reply.cycle = request->cycle;
    reply.action = action;
    last_reply_ = encode_action(reply);
    last_cycle_ = request->cycle;
    have_last_ = true;
    socket_.send_to_last_sender(last_reply_);
    counters_.sent += 1;
    replies += 1;
  }
}

}  // namespace elab::udp

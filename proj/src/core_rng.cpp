#include "elab/core/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "elab/core/errors.hpp"

namespace elab {

uint64_t fnv1a64(std::string_view data) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

RngStream::RngStream(uint64_t master_seed, std::string_view name) {
  const uint64_t tag = fnv1a64(name);
  std::seed_seq seq{static_cast<uint32_t>(master_seed), static_cast<uint32_t>(master_seed >> 32),
                    static_cast<uint32_t>(tag), static_cast<uint32_t>(tag >> 32)};
  engine_.seed(seq);
}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::gaussian() {
  // Box-Muller, cosine branch only; u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

size_t RngStream::uniform_index(size_t n) {
  if (n == 0) throw ContractError("uniform_index: n must be positive");
  return static_cast<size_t>(uniform() * static_cast<double>(n));
}

std::string RngStream::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void RngStream::restore(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  if (is.fail()) throw ContractError("RngStream::restore: malformed engine state");
}

}  // namespace elab

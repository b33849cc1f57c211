#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace elab {

uint64_t fnv1a64(std::string_view data);

// One named stream of a master seed. Gaussian draws are stateless (two
// uniforms per draw, no cached spare), so the full stream state is the
// mt19937_64 engine state and serializes losslessly as text.
class RngStream {
 public:
  RngStream() : RngStream(0, "default") {}
  RngStream(uint64_t master_seed, std::string_view name);

  double uniform();                 // [0, 1)
  double gaussian();                // standard normal
  double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }
  size_t uniform_index(size_t n);   // {0, ..., n-1}
  // Uniform integer in [lo, hi] inclusive.
  long uniform_int(long lo, long hi) {
    return lo + static_cast<long>(uniform_index(static_cast<size_t>(hi - lo + 1)));
  }

  std::string serialize() const;
  void restore(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

}  // namespace elab

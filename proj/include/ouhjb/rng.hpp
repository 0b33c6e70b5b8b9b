#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ouhjb {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Derives a decorrelated stream id for (seed, index). Used to give every
// simulated path its own generator so results do not depend on how paths
// are split across threads.
inline std::uint64_t stream_id(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (index + 1));
  splitmix64(s);
  return splitmix64(s);
}

// Per-path normal generator with an explicit Box-Muller transform, so the
// draw sequence is fixed by (seed, index) alone.
class PathStream {
 public:
  PathStream(std::uint64_t seed, std::uint64_t index)
      : gen_(stream_id(seed, index)) {}

  double uniform() {  // (0, 1]
    return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ouhjb

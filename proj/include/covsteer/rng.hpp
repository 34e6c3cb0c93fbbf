#pragma once

#include <cmath>
#include <cstdint>

namespace covsteer {

// Counter-derived pseudo-random stream.  Each Monte Carlo trial gets its own
// generator seeded from (master seed, trial index) so results do not depend on
// how trials are scheduled across threads, and the normal transform is spelled
// out explicitly so streams are reproducible across platforms and compilers.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on (0, 1]; never returns 0 so log() below is safe.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller, caching the second draw.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Mixes a master seed with a stream index into a well separated 64-bit seed.
inline std::uint64_t derive_stream_seed(std::uint64_t master, std::uint64_t index) {
  SplitMix64 mixer(master ^ (0x6a09e667f3bcc909ULL + index * 0x9e3779b97f4a7c15ULL));
  mixer.next_u64();
  return mixer.next_u64();
}

}  // namespace covsteer

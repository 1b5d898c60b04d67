#ifndef LOCALEL_RANDOM_HPP
#define LOCALEL_RANDOM_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

#include "localel/error.hpp"
#include "localel/numerics.hpp"

namespace localel {

/// Counter-based generator (Philox4x32-10). A stream is addressed by
/// (seed, stream_id); draws are a pure function of (seed, stream_id, counter),
/// so replications can be generated in any order or on any thread.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_(stream_id) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }

  result_type operator()() {
    if (buffered_ == 0) refill();
    const std::uint64_t hi = block_[4 - buffered_];
    const std::uint64_t lo = block_[5 - buffered_];
    buffered_ -= 2;
    return (hi << 32) | lo;
  }

  /// Uniform on the open interval (0, 1) with 53 bits of resolution.
  double uniform() {
    const std::uint64_t bits = (*this)() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  void refill() {
    std::array<std::uint32_t, 4> ctr = {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                                        static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{0xD2511F53} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    block_ = ctr;
    buffered_ = 4;
    ++counter_;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int buffered_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct NormalComponent {
  double mean = 0.0;
  double sd = 1.0;
};

inline Vector sample_normal(RngStream& rng, double mean, double sd, std::size_t n) {
  if (!(sd > 0.0)) throw Error(ErrorKind::InvalidArgument, "sample_normal needs sd > 0");
  Vector out(n);
  for (double& v : out) v = mean + sd * rng.normal();
  return out;
}

/// Two-component Gaussian mixture: each draw comes from comp2 with probability c.
inline Vector sample_mixture(RngStream& rng, double c, NormalComponent comp1, NormalComponent comp2, std::size_t n) {
  if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorKind::InvalidArgument, "mixture probability must lie in [0, 1]");
  if (!(comp1.sd > 0.0 && comp2.sd > 0.0)) throw Error(ErrorKind::InvalidArgument, "mixture sd must be positive");
  Vector out(n);
  for (double& v : out) {
    // The selector is drawn even when c is 0 or 1 so the normal stream stays aligned.
    const bool second = rng.uniform() < c;
    const NormalComponent& comp = second ? comp2 : comp1;
    v = comp.mean + comp.sd * rng.normal();
  }
  return out;
}

}  // namespace localel

#endif  // LOCALEL_RANDOM_HPP

#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace smile {

/// One splitmix64 output step starting from state x.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// xoshiro256++ stream with Box-Muller normals. All draws are computed from
/// explicit integer and floating-point formulas, so identical seeds produce
/// identical streams on every platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) {
      sm += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = sm;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      w = z ^ (z >> 31);
    }
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Rejection sampling, exactly unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("below(0)");
    const std::uint64_t threshold = (-n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller; pairs are generated together and the
  /// second value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), u1 < 1
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  Eigen::VectorXd normal_vector(int d) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = normal();
    return v;
  }

  /// Uniform direction on the (d-1)-sphere.
  Eigen::VectorXd unit_vector(int d) {
    Eigen::VectorXd v = normal_vector(d);
    double n = v.norm();
    while (n == 0.0) {  // probability ~0, but keep the contract exact
      v = normal_vector(d);
      n = v.norm();
    }
    return v / n;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Substream derivation rule (documented in the README):
//   stream_seed(seed, substream) = mix64(mix64(seed) ^ (substream + 1) * 0x9E3779B97F4A7C15)
// Chains use substream = chain index; the constants below reserve auxiliary
// streams that never collide with realistic chain counts.
inline RngStream make_stream(std::uint64_t seed, std::uint64_t substream) {
  return RngStream(mix64(mix64(seed) ^ (substream + 1) * 0x9e3779b97f4a7c15ULL));
}

inline constexpr std::uint64_t kSetupSubstream = 0xffffffff00000001ULL;      // target/noise construction
inline constexpr std::uint64_t kBootstrapSubstream = 0xffffffff00000002ULL;  // metric bootstrap

}  // namespace smile

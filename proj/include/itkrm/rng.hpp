#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace itkrm {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// xoshiro256** keyed by (seed, stream, index). Any (seed, stream, index)
/// triple yields the same sequence no matter which thread draws it, so per
/// signal streams make parallel and serial generation bit-identical.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0) {
    std::uint64_t k = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
    k = splitmix64(k ^ stream);
    k = splitmix64(k ^ (index * 0xd1342543de82ef95ULL));
    for (auto& s : state_) {
      k = splitmix64(k);
      s = k;
    }
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire's nearly divisionless method.
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  double sign() { return ((*this)() >> 63) ? -1.0 : 1.0; }

  /// Standard normal via the polar method; no cached spare so draws depend
  /// only on the engine state.
  double normal() {
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
  }

  Eigen::VectorXd gaussian_vector(Eigen::Index n, double std_dev = 1.0) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = std_dev * normal();
    return v;
  }

  Eigen::VectorXd unit_vector(Eigen::Index n) {
    for (;;) {
      Eigen::VectorXd v = gaussian_vector(n);
      const double nv = v.norm();
      if (nv > 0.0) return v / nv;
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

/// Stream tags so different consumers of one experiment seed never share draws.
namespace streams {
inline constexpr std::uint64_t kSignals = 1;
inline constexpr std::uint64_t kInitDictionary = 2;
inline constexpr std::uint64_t kCandidates = 3;
inline constexpr std::uint64_t kGenerating = 4;
inline constexpr std::uint64_t kImageNoise = 5;
inline constexpr std::uint64_t kConstruction = 6;
}  // namespace streams

/// Combines an iteration number into a stream tag.
inline constexpr std::uint64_t stream_for(std::uint64_t tag, std::uint64_t iteration) {
  return splitmix64(tag * 0x100000001b3ULL + iteration);
}

}  // namespace itkrm

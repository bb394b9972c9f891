#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

#include "riskadj/stats.hpp"

namespace riskadj {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Named substream tags; all pipeline randomness derives from one master seed
/// through (tag, index) keys so results are replicate-identical regardless of
/// evaluation order or thread count.
namespace stream {
inline constexpr std::uint64_t timepoints = 1;
inline constexpr std::uint64_t covariate_scale = 2;
inline constexpr std::uint64_t re_variances = 3;
inline constexpr std::uint64_t program_effects = 4;
inline constexpr std::uint64_t subject = 5;
inline constexpr std::uint64_t block_plan = 6;
inline constexpr std::uint64_t replicate = 7;
inline constexpr std::uint64_t validation = 8;
inline constexpr std::uint64_t mi_jitter = 9;
}  // namespace stream

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index = 0) {
  std::uint64_t s = master;
  std::uint64_t h = splitmix64(s);
  s = h ^ (tag * 0x9e3779b97f4a7c15ULL);
  h = splitmix64(s);
  s = h ^ (index * 0xd1b54a32d192ed03ULL);
  return splitmix64(s);
}

/// Deterministic RNG: mt19937_64 (sequence pinned by the standard) with
/// hand-rolled inverse-CDF draws so byte-identical output does not depend on
/// library distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  static Rng substream(std::uint64_t master, std::uint64_t tag, std::uint64_t index = 0) {
    return Rng(derive_seed(master, tag, index));
  }

  /// Uniform on (0, 1), never exactly 0 or 1.
  double uniform01() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  /// Integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform01() * static_cast<double>(n)) % n;
  }

  double normal() { return norm_quantile(uniform01()); }

  double normal(double mu, double sd) { return mu + sd * normal(); }

  double exponential(double rate) { return -std::log(uniform01()) / rate; }

  VectorXd normal_vector(Eigen::Index n) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// MVN draw given mean and a Cholesky factor L (Sigma = L L^T).
  VectorXd mvn(const VectorXd& mu, const MatrixXd& chol_L) {
    return mu + chol_L * normal_vector(mu.size());
  }

  /// Sample k of n indices without replacement (Fisher-Yates prefix).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(uniform_int(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace riskadj

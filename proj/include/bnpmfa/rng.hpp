#pragma once

// Counter-based random substreams. Every draw in a sweep is taken from a
// generator keyed by (root seed, iteration, step, index), so results do not
// depend on how work is split across threads.

#include "bnpmfa/core.hpp"

#include <cstdint>
#include <limits>
#include <random>

namespace bnpmfa {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Hashes a sequence of words into one seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a = 0, std::uint64_t b = 0,
                                           std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(root);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (c + 0x85157af5ULL));
  return h;
}

/// xoshiro256** seeded through splitmix64. Satisfies
/// UniformRandomBitGenerator so it plugs into <random> distributions.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : s_) {
      x += 0x9e3779b97f4a7c15ULL;
      s = splitmix64(x);
    }
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on (0, 1).
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(*this); }

  Vector normal_vector(Eigen::Index k) {
    Vector v(k);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Eigen::Index i = 0; i < k; ++i) v(i) = nd(*this);
    return v;
  }

  double gamma(double shape, double scale = 1.0) { return std::gamma_distribution<double>(shape, scale)(*this); }

  /// Inverse-gamma with density proportional to x^{-shape-1} exp(-scale/x).
  double inverse_gamma(double shape, double scale) { return scale / gamma(shape, 1.0); }

  double chi_squared(double df) { return gamma(0.5 * df, 2.0); }

  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(*this));
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4]{};
};

/// Step tags for substream derivation.
enum class StepTag : std::uint64_t {
  kInit = 1,
  kLatent = 2,
  kLoadings = 3,
  kVariance = 4,
  kMean = 5,
  kCovariance = 6,
  kMembership = 7,
};

inline Rng substream(std::uint64_t seed, long iteration, StepTag tag, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(tag), index));
}

// ---------------------------------------------------------------------------
// Multivariate draws used by several conditionals.

/// Draw from N(mean, P^{-1}) given the Cholesky factor of the precision P.
inline Vector draw_normal_precision(const Vector& mean, const Eigen::LLT<Matrix>& precision_llt, Rng& rng) {
  Vector e = rng.normal_vector(mean.size());
  return mean + precision_llt.matrixU().solve(e);
}

/// Draw from N(mean, S) given the Cholesky factor of S.
inline Vector draw_normal_covariance(const Vector& mean, const Eigen::LLT<Matrix>& cov_llt, Rng& rng) {
  Vector e = rng.normal_vector(mean.size());
  return mean + cov_llt.matrixL() * e;
}

/// Wishart(scale = S, df) draw via the Bartlett decomposition, where
/// `scale_llt` is the Cholesky factor of S.
inline Matrix draw_wishart(const Eigen::LLT<Matrix>& scale_llt, double df, Rng& rng) {
  const Eigen::Index q = scale_llt.matrixLLT().rows();
  if (!(df > static_cast<double>(q) - 1.0)) throw NumericalError("Wishart degrees of freedom too small");
  Matrix A = Matrix::Zero(q, q);
  for (Eigen::Index i = 0; i < q; ++i) {
    A(i, i) = std::sqrt(rng.chi_squared(df - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = rng.normal();
  }
  Matrix LA = scale_llt.matrixL() * A;
  return LA * LA.transpose();
}

/// Inverse-Wishart IW(Phi, df) with density proportional to
/// |S|^{-(df+q+1)/2} exp(-tr(Phi S^{-1})/2), so E[S] = Phi/(df-q-1).
inline Matrix draw_inverse_wishart(const Matrix& phi, double df, Rng& rng) {
  const Eigen::Index q = phi.rows();
  Eigen::LLT<Matrix> phi_llt(phi);
  if (phi_llt.info() != Eigen::Success) throw NumericalError("inverse-Wishart scale is not positive definite");
  Matrix phi_inv = phi_llt.solve(Matrix::Identity(q, q));
  phi_inv = 0.5 * (phi_inv + phi_inv.transpose());
  Eigen::LLT<Matrix> inv_llt(phi_inv);
  if (inv_llt.info() != Eigen::Success) throw NumericalError("inverse-Wishart scale is ill-conditioned");
  Matrix wishart = draw_wishart(inv_llt, df, rng);
  Eigen::LLT<Matrix> w_llt(wishart);
  if (w_llt.info() != Eigen::Success) throw NumericalError("Wishart draw is not positive definite");
  Matrix out = w_llt.solve(Matrix::Identity(q, q));
  return 0.5 * (out + out.transpose());
}

/// Index drawn from unnormalised log-weights, after max-subtraction.
inline std::size_t sample_log_categorical(const std::vector<double>& log_w, Rng& rng) {
  double mx = -INFINITY;
  for (double v : log_w) mx = std::max(mx, v);
  if (!std::isfinite(mx)) throw NumericalError("categorical weights are all zero or non-finite");
  double total = 0.0;
  std::vector<double> w(log_w.size());
  for (std::size_t k = 0; k < log_w.size(); ++k) {
    w[k] = std::exp(log_w[k] - mx);
    total += w[k];
  }
  double u = rng.uniform() * total;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (u < w[k]) return k;
    u -= w[k];
  }
  for (std::size_t k = w.size(); k-- > 0;)
    if (w[k] > 0) return k;
  return w.size() - 1;
}

}  // namespace bnpmfa

#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner. Nothing here calls the code under test for the value
// it is checking.

#include "bnpmfa/bnpmfa.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace oracle {

using namespace bnpmfa;

// ---------------------------------------------------------------------------
// Goodness of fit

/// Asymptotic Kolmogorov tail with the Stephens small-sample correction.
inline double ks_pvalue(double D, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lam = (sn + 0.12 + 0.11 / sn) * D;
  if (lam < 0.2) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lam * lam);
    s += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double D = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double F = cdf(x[k]);
    D = std::max({D, static_cast<double>(k + 1) / n - F, F - static_cast<double>(k) / n});
  }
  return D;
}

/// CDF of an unnormalised log density tabulated on [lo, hi].
class GridCdf {
 public:
  GridCdf(const std::function<double(double)>& log_density, double lo, double hi, std::size_t points = 200001)
      : lo_(lo), step_((hi - lo) / static_cast<double>(points - 1)), cum_(points, 0.0) {
    std::vector<double> l(points);
    double mx = -INFINITY;
    for (std::size_t k = 0; k < points; ++k) {
      l[k] = log_density(lo + step_ * static_cast<double>(k));
      mx = std::max(mx, l[k]);
    }
    for (std::size_t k = 1; k < points; ++k)
      cum_[k] = cum_[k - 1] + 0.5 * step_ * (std::exp(l[k - 1] - mx) + std::exp(l[k] - mx));
    const double total = cum_.back();
    for (auto& c : cum_) c /= total;
  }

  double operator()(double x) const {
    const double u = (x - lo_) / step_;
    if (u <= 0) return 0.0;
    const auto k = static_cast<std::size_t>(u);
    if (k + 1 >= cum_.size()) return 1.0;
    const double f = u - static_cast<double>(k);
    return cum_[k] + f * (cum_[k + 1] - cum_[k]);
  }

 private:
  double lo_, step_;
  std::vector<double> cum_;
};

inline double chi_square_pvalue(const std::vector<double>& observed, const std::vector<double>& probs) {
  const double n = std::accumulate(observed.begin(), observed.end(), 0.0);
  double x2 = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double e = n * probs[k];
    x2 += (observed[k] - e) * (observed[k] - e) / e;
  }
  const double df = static_cast<double>(probs.size() - 1);
  return boost::math::gamma_q(0.5 * df, 0.5 * x2);
}

inline double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * (x - mean) * (x - mean) / var;
}

// ---------------------------------------------------------------------------
// Set partitions

/// All set partitions of {0..n-1} as restricted growth strings.
inline std::vector<std::vector<int>> set_partitions(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> z(static_cast<std::size_t>(n), 0);
  std::function<void(int, int)> rec = [&](int i, int mx) {
    if (i == n) {
      out.push_back(z);
      return;
    }
    for (int l = 0; l <= mx + 1; ++l) {
      z[static_cast<std::size_t>(i)] = l;
      rec(i + 1, std::max(mx, l));
    }
  };
  if (n > 0) rec(1, 0);
  return out;
}

/// log V_n(H) by brute force. MFM sums `terms` series terms directly.
inline double brute_log_vn(const PriorConfig& c, long n, long H, int terms = 200) {
  auto log_rise = [](double a, long k) {
    double v = 0.0;
    for (long t = 0; t < k; ++t) v += std::log(a + static_cast<double>(t));
    return v;
  };
  switch (c.family) {
    case PriorFamily::DP: return static_cast<double>(H) * std::log(c.beta) - log_rise(c.beta, n);
    case PriorFamily::PY: {
      double v = 0.0;
      for (long h = 1; h < H; ++h) v += std::log(c.beta + static_cast<double>(h) * c.delta);
      return v - log_rise(c.beta + 1.0, n - 1);
    }
    case PriorFamily::MFM: {
      const double lam = c.mfm_component_prior.poisson_lambda;
      long double s = 0.0L;
      for (long m = H; m < H + terms; ++m) {
        double lt = -lam + static_cast<double>(m - 1) * std::log(lam) - std::lgamma(static_cast<double>(m));
        lt += static_cast<double>(H) * std::log(c.beta);
        for (long h = 1; h < H; ++h) lt += std::log(static_cast<double>(m - h));
        lt -= log_rise(static_cast<double>(m) * c.beta + 1.0, n - 1);
        s += std::exp(static_cast<long double>(lt));
      }
      return static_cast<double>(std::log(s));
    }
  }
  return NAN;
}

/// Largest relative difference between the sequential-urn probability of
/// every set partition of n items and the normalised closed-form pmf
/// V_n(H) prod_h (1 - delta)_{n_h - 1}.
inline double urn_vs_closed_form(const PriorConfig& c, int n) {
  const auto parts = set_partitions(n);
  std::vector<LogWeightTable> tables;
  for (int k = 1; k <= n; ++k) tables.emplace_back(c, k);

  std::vector<double> closed;
  for (const auto& z : parts) {
    PartitionState p(z);
    double v = brute_log_vn(c, n, p.clusters());
    for (int nh : p.counts)
      for (int t = 0; t < nh - 1; ++t) v += std::log(1.0 - c.delta + t);
    closed.push_back(std::exp(v));
  }
  const double total = std::accumulate(closed.begin(), closed.end(), 0.0);

  double worst = 0.0;
  for (std::size_t u = 0; u < parts.size(); ++u) {
    const auto& z = parts[u];
    double logp = 0.0;
    std::vector<int> counts{1};
    for (int k = 1; k < n; ++k) {
      // item k joins the first k items, so the weights use n = k + 1
      const std::vector<int> nb(counts.size(), 0);
      const auto w = urn_log_weights(counts, nb, c, tables[static_cast<std::size_t>(k)]);
      double norm = -INFINITY;
      for (double x : w) norm = log_sum_exp(norm, x);
      const auto label = static_cast<std::size_t>(z[static_cast<std::size_t>(k)]);
      logp += w[label] - norm;
      if (label == counts.size()) counts.push_back(1);
      else ++counts[label];
    }
    const double exact = closed[u] / total;
    worst = std::max(worst, std::abs(std::exp(logp) - exact) / exact);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// ARI

inline double ari_pair_loop(const std::vector<int>& a, const std::vector<int>& b) {
  double A = 0, B = 0, C = 0, D = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      if (sa && sb) ++A;
      else if (sa) ++B;
      else if (sb) ++C;
      else ++D;
    }
  const double N = A + B + C + D;
  const double chance = (A + B) * (A + C) + (C + D) * (B + D);
  return (N * (A + D) - chance) / (N * N - chance);
}

/// 100 random instances, n <= 300. Returns the largest absolute difference
/// between the fast ARI and the pair loop.
inline double ari_oracle_sweep(std::uint64_t seed, int instances = 100) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    const auto n = 2 + rng.uniform_index(299);
    const auto ka = 1 + rng.uniform_index(8), kb = 1 + rng.uniform_index(8);
    std::vector<int> a(n), b(n);
    for (auto& l : a) l = static_cast<int>(rng.uniform_index(ka));
    for (auto& l : b) l = static_cast<int>(rng.uniform_index(kb));
    const double slow = ari_pair_loop(a, b);
    if (std::isnan(slow)) continue;
    worst = std::max(worst, std::abs(ari(a, b) - slow));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Conditional samplers on q = 1 toys

struct Check {
  std::string name;
  double statistic = NAN;
  double pvalue = NAN;
  bool pass = false;
};

inline ExpressionMatrix toy_expression(const Matrix& values) {
  std::vector<std::string> genes, spots;
  for (Eigen::Index j = 0; j < values.rows(); ++j) genes.push_back("g" + std::to_string(j + 1));
  for (Eigen::Index i = 0; i < values.cols(); ++i) spots.push_back("s" + std::to_string(i + 1));
  return ExpressionMatrix(values, genes, spots);
}

/// p = 3, q = 1, n = 3, two clusters.
struct ScalarToy {
  ExpressionMatrix X;
  ChainState s;
  HyperParams hp;

  ScalarToy() {
    Matrix x(3, 3);
    x << 1.0, -0.4, 2.1,  //
        -1.3, 0.8, -2.2,  //
        0.6, 0.1, 1.4;
    X = toy_expression(x);
    s.partition = PartitionState(std::vector<int>{0, 1, 0});
    s.factors.Y = Matrix(1, 3);
    s.factors.Y << 0.7, -1.1, 2.0;
    s.params.W = Matrix(3, 1);
    s.params.W << 0.8, -1.2, 0.5;
    s.params.lambda = Vector(3);
    s.params.lambda << 0.5, 1.5, 0.7;
    s.params.mu = Matrix(2, 1);
    s.params.mu << 1.0, -1.5;
    s.params.sigma.assign(Matrix::Constant(1, 1, 2.0));
    hp.q = 1;
    hp.tau_w = 1.3;
    hp.tau_mu = 0.8;
    hp.a = 1.5;
    hp.b = 0.7;
  }
};

inline Check ks_check(const std::string& name, const std::vector<double>& draws, const GridCdf& cdf) {
  Check c{name};
  c.statistic = ks_statistic(draws, [&](double x) { return cdf(x); });
  c.pvalue = ks_pvalue(c.statistic, draws.size());
  c.pass = c.pvalue > 0.001;
  return c;
}

inline Check check_latent(std::uint64_t seed, std::size_t draws = 100000) {
  ScalarToy t;
  const std::size_t i = 0;
  const int h = t.s.partition.z[i];
  auto logp = [&](double y) {
    double v = log_normal_pdf(y, t.s.params.mu(h, 0), t.s.params.sigma.value()(0, 0));
    for (Eigen::Index j = 0; j < 3; ++j) v += log_normal_pdf(t.X.values(j, 0), t.s.params.W(j, 0) * y, t.s.params.lambda(j));
    return v;
  };
  GridCdf cdf(logp, -15, 15);
  Rng rng(seed);
  std::vector<double> x(draws);
  LatentStep step(t.s, t.X);
  for (auto& v : x) v = step.draw(i, h, rng)(0);
  return ks_check("latent factors y_i", x, cdf);
}

inline Check check_loadings(std::uint64_t seed, std::size_t draws = 100000) {
  ScalarToy t;
  const std::size_t j = 1;
  const double s2 = t.s.params.lambda(1);
  auto logp = [&](double w) {
    double v = log_normal_pdf(w, 0.0, s2 / t.hp.tau_w);
    for (Eigen::Index i = 0; i < 3; ++i) v += log_normal_pdf(t.X.values(1, i), w * t.s.factors.Y(0, i), s2);
    return v;
  };
  GridCdf cdf(logp, -15, 15);
  Rng rng(seed);
  std::vector<double> x(draws);
  LoadingStep step(t.s, t.X, t.hp.tau_w);
  for (auto& v : x) v = step.draw(j, s2, rng)(0);
  return ks_check("loadings w_j", x, cdf);
}

inline Check check_variance(std::uint64_t seed, std::size_t draws = 100000) {
  ScalarToy t;
  const std::size_t j = 2;
  const double w = t.s.params.W(2, 0);
  auto logp = [&](double s2) -> double {
    if (s2 <= 0) return -INFINITY;
    double v = -(t.hp.a + 1.0) * std::log(s2) - t.hp.b / s2;  // IG(a, b)
    v += log_normal_pdf(w, 0.0, s2 / t.hp.tau_w);
    for (Eigen::Index i = 0; i < 3; ++i) v += log_normal_pdf(t.X.values(2, i), w * t.s.factors.Y(0, i), s2);
    return v;
  };
  GridCdf cdf(logp, 0.0, 80.0, 800001);
  Rng rng(seed);
  std::vector<double> x(draws);
  for (auto& v : x) v = sample_sigma2(j, t.s, t.X, t.hp, rng);
  return ks_check("residual variances sigma_j^2", x, cdf);
}

inline Check check_mean(std::uint64_t seed, std::size_t draws = 100000) {
  ScalarToy t;
  const int h = 0;
  const double S = t.s.params.sigma.value()(0, 0);
  auto logp = [&](double m) {
    double v = log_normal_pdf(m, 0.0, S / t.hp.tau_mu);
    for (std::size_t i = 0; i < 3; ++i)
      if (t.s.partition.z[i] == h) v += log_normal_pdf(t.s.factors.Y(0, static_cast<Eigen::Index>(i)), m, S);
    return v;
  };
  GridCdf cdf(logp, -15, 15);
  Rng rng(seed);
  std::vector<double> x(draws);
  for (auto& v : x) v = sample_mu(h, t.s, t.hp.tau_mu, rng)(0);
  return ks_check("cluster means mu_h", x, cdf);
}

inline Check check_covariance(std::uint64_t seed, std::size_t draws = 100000) {
  ScalarToy t;
  auto logp = [&](double S) -> double {
    if (S <= 0) return -INFINITY;
    double v = -std::log(S);  // Jeffreys, q = 1
    for (Eigen::Index i = 0; i < 3; ++i)
      v += log_normal_pdf(t.s.factors.Y(0, i), t.s.params.mu(t.s.partition.z[static_cast<std::size_t>(i)], 0), S);
    for (Eigen::Index h = 0; h < t.s.params.mu.rows(); ++h) v += log_normal_pdf(t.s.params.mu(h, 0), 0.0, S / t.hp.tau_mu);
    return v;
  };
  GridCdf cdf(logp, 0.0, 400.0, 2000001);
  Rng rng(seed);
  std::vector<double> x(draws);
  for (auto& v : x) v = sample_sigma(t.s, t.hp.tau_mu, rng)(0, 0);
  return ks_check("latent covariance Sigma", x, cdf);
}

/// Membership of spot 1 on a path graph; exact probabilities from the
/// printed weights with V_n evaluated by brute-force series.
inline Check check_membership(std::uint64_t seed, std::size_t draws = 100000) {
  Matrix x = Matrix::Zero(2, 4);
  auto X = toy_expression(x);
  ChainState s;
  s.partition = PartitionState(std::vector<int>{0, 0, 1, 1});
  s.factors.Y = Matrix(1, 4);
  s.factors.Y << -1.0, 0.3, 1.2, 0.9;
  s.params.W = Matrix::Ones(2, 1);
  s.params.lambda = Vector::Ones(2);
  s.params.mu = Matrix(2, 1);
  s.params.mu << -0.5, 1.0;
  s.params.sigma.assign(Matrix::Constant(1, 1, 1.5));
  HyperParams hp;
  hp.q = 1;
  hp.tau_mu = 0.8;
  auto prior = PriorConfig::mfm(1.0, 0.7);
  AdjacencyGraph g(4, {{0, 1}, {1, 2}, {2, 3}});
  LogWeightTable table(prior, 4);

  const std::size_t i = 1;
  const double y = 0.3, S = 1.5;
  // spot 1 removed: counts (1, 2); neighbours: spot 0 in cluster 0, spot 2 in cluster 1
  std::vector<double> logw = {
      std::log(1.0 + 1.0) + 0.7 * 1 + 1.0 + log_normal_pdf(y, -0.5, S),
      std::log(2.0 + 1.0) + 0.7 * 1 + 1.0 + log_normal_pdf(y, 1.0, S),
      brute_log_vn(prior, 4, 3) - brute_log_vn(prior, 4, 2) + 1.0 + log_normal_pdf(y, 0.0, (1.0 + 1.0 / hp.tau_mu) * S),
  };
  double norm = -INFINITY;
  for (double v : logw) norm = log_sum_exp(norm, v);
  std::vector<double> probs;
  for (double v : logw) probs.push_back(std::exp(v - norm));

  Rng rng(seed);
  std::vector<double> counts(3, 0.0);
  for (std::size_t k = 0; k < draws; ++k) {
    ChainState c = s;
    counts[static_cast<std::size_t>(sample_z(i, c, g, prior, hp, table, rng))] += 1.0;
  }
  Check c{"memberships z_i"};
  c.pvalue = chi_square_pvalue(counts, probs);
  c.statistic = counts[2] / static_cast<double>(draws);
  c.pass = c.pvalue > 0.001;
  return c;
}

inline std::vector<Check> conditional_checks(std::uint64_t seed, std::size_t draws = 100000) {
  return {check_latent(derive_seed(seed, 1), draws),     check_loadings(derive_seed(seed, 2), draws),
          check_variance(derive_seed(seed, 3), draws),   check_mean(derive_seed(seed, 4), draws),
          check_covariance(derive_seed(seed, 5), draws), check_membership(derive_seed(seed, 6), draws)};
}

// ---------------------------------------------------------------------------
// Identifiability

struct InvarianceRun {
  double deviation = NAN;
  double max_condition_used = 0.0;
};

inline Matrix well_conditioned(int q, double max_cond, Rng& rng, double* cond_out = nullptr) {
  for (;;) {
    Matrix M(q, q);
    for (int r = 0; r < q; ++r) M.row(r) = rng.normal_vector(q).transpose();
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto sv = svd.singularValues();
    const double cond = sv(0) / sv(q - 1);
    if (cond < max_cond) {
      if (cond_out) *cond_out = cond;
      return M;
    }
  }
}

inline InvarianceRun invariance_experiment(std::uint64_t seed, int q = 3, int n = 20, int partitions = 10,
                                           int transforms = 20,
                                           ScatterCoefficient form = ScatterCoefficient::Printed) {
  Rng rng(seed);
  Matrix Y0(q, n);
  for (int i = 0; i < n; ++i) Y0.col(i) = rng.normal_vector(q);
  std::vector<PartitionState> parts;
  for (int k = 0; k < partitions; ++k) {
    const auto H = 1 + rng.uniform_index(4);
    std::vector<int> z(static_cast<std::size_t>(n));
    for (auto& l : z) l = static_cast<int>(rng.uniform_index(H));
    parts.emplace_back(z);
  }
  InvarianceRun out;
  out.deviation = 0.0;
  for (int t = 0; t < transforms; ++t) {
    double cond = 0;
    const Matrix M = well_conditioned(q, 100.0, rng, &cond);
    out.max_condition_used = std::max(out.max_condition_used, cond);
    out.deviation = std::max(out.deviation, invariance_check(Y0, M, parts, 1.0, form));
  }
  return out;
}

}  // namespace oracle

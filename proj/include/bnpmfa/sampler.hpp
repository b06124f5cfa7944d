#pragma once

// Collapsed Gibbs sampler for the mixture of factor analysers with an
// MRF-constrained Gibbs-type prior on memberships.
//
// One sweep updates, in order: latent factors y_i, loading rows w_j,
// residual variances sigma_j^2, cluster means mu_h, the shared latent
// covariance Sigma, and finally memberships z_i one spot at a time.

#include "bnpmfa/core.hpp"
#include "bnpmfa/gibbs_priors.hpp"
#include "bnpmfa/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

namespace bnpmfa {

enum class InitKind { Random, Kmeans, Single };

inline InitKind parse_init(const std::string& s) {
  if (s == "random") return InitKind::Random;
  if (s == "kmeans") return InitKind::Kmeans;
  if (s == "single") return InitKind::Single;
  throw ConfigError("sampler.init: unknown initialisation '" + s + "' (expected random, kmeans or single)");
}

struct SamplerConfig {
  long iterations = 2000;
  long burn_in = 1000;
  long thin = 1;
  std::uint64_t seed = 1;
  InitKind init = InitKind::Kmeans;
  int init_clusters = 5;
  int parallel_width = 1;
  bool random_scan = false;

  void validate() const {
    if (iterations < 1) throw ConfigError("sampler.iterations must be >= 1");
    if (burn_in < 0 || burn_in >= iterations) throw ConfigError("sampler.burn_in must lie in [0, iterations)");
    if (thin < 1) throw ConfigError("sampler.thin must be >= 1");
    if (init_clusters < 1) throw ConfigError("sampler.init_clusters must be >= 1");
    if (parallel_width < 1) throw ConfigError("sampler.parallel_width must be >= 1");
  }
};

inline constexpr double kLog2Pi = 1.8378770664093454836;

/// Splits [0, count) into `width` contiguous chunks run on separate threads.
/// Every index draws from its own substream, so the result is independent
/// of `width`.
inline void parallel_for(std::size_t count, int width, const std::function<void(std::size_t)>& body) {
  if (width <= 1 || count < 2) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  const auto w = std::min<std::size_t>(static_cast<std::size_t>(width), count);
  std::vector<std::jthread> workers;
  workers.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    const std::size_t lo = count * t / w, hi = count * (t + 1) / w;
    workers.emplace_back([lo, hi, &body] {
      for (std::size_t k = lo; k < hi; ++k) body(k);
    });
  }
}

// ---------------------------------------------------------------------------
// Conditional updates

/// Shared pieces of the y_i conditional: precision W' L^-1 W + Sigma^-1 is
/// the same for every spot.
class LatentStep {
 public:
  LatentStep(const ChainState& s, const ExpressionMatrix& X) {
    const auto& W = s.params.W;
    Matrix w_scaled = s.params.lambda.cwiseInverse().asDiagonal() * W;  // L^-1 W
    Matrix sigma_inv = s.params.sigma.inverse();
    Matrix precision = W.transpose() * w_scaled + sigma_inv;
    precision_.compute(0.5 * (precision + precision.transpose()));
    if (precision_.info() != Eigen::Success) throw NumericalError("latent factor precision is not positive definite");
    data_term_ = w_scaled.transpose() * X.values;       // q x n
    prior_term_ = sigma_inv * s.params.mu.transpose();  // q x H
  }

  [[nodiscard]] Vector mean(std::size_t i, int h) const {
    return precision_.solve(data_term_.col(static_cast<Eigen::Index>(i)) + prior_term_.col(h));
  }
  [[nodiscard]] Matrix covariance() const {
    const auto q = data_term_.rows();
    return precision_.solve(Matrix::Identity(q, q));
  }

  Vector draw(std::size_t i, int h, Rng& rng) const { return draw_normal_precision(mean(i, h), precision_, rng); }

 private:
  Eigen::LLT<Matrix> precision_;
  Matrix data_term_;
  Matrix prior_term_;
};

/// y_i ~ N(mu*, Sigma*), Sigma* = (W' L^-1 W + Sigma^-1)^-1,
/// mu* = Sigma*(W' L^-1 x_i + Sigma^-1 mu_h).
inline Vector sample_y(std::size_t i, const ChainState& s, const ExpressionMatrix& X, Rng& rng) {
  return LatentStep(s, X).draw(i, s.partition.z[i], rng);
}

/// Shared pieces of the w_j conditional: A = YY' + tau_w I.
class LoadingStep {
 public:
  LoadingStep(const ChainState& s, const ExpressionMatrix& X, double tau_w) {
    const auto& Y = s.factors.Y;
    Matrix A = Y * Y.transpose();
    A.diagonal().array() += tau_w;
    a_llt_.compute(A);
    if (a_llt_.info() != Eigen::Success) throw NumericalError("loading precision is not positive definite");
    means_ = a_llt_.solve(Y * X.values.transpose());  // q x p
  }

  [[nodiscard]] Vector mean(std::size_t j) const { return means_.col(static_cast<Eigen::Index>(j)); }

  /// Draw from N(A^-1 Y x_j', sigma_j^2 A^-1).
  Vector draw(std::size_t j, double sigma2, Rng& rng) const {
    Vector e = rng.normal_vector(means_.rows());
    return mean(j) + std::sqrt(sigma2) * Vector(a_llt_.matrixU().solve(e));
  }

 private:
  Eigen::LLT<Matrix> a_llt_;
  Matrix means_;
};

inline Vector sample_w_row(std::size_t j, const ChainState& s, const ExpressionMatrix& X, double tau_w, Rng& rng) {
  return LoadingStep(s, X, tau_w).draw(j, s.params.lambda(static_cast<Eigen::Index>(j)), rng);
}

struct InverseGammaParams {
  double shape;
  double scale;
};

/// a* = (q+n)/2 + a, b* = ((x_j - w_j Y)(x_j - w_j Y)' + tau_w |w_j|^2)/2 + b.
inline InverseGammaParams sigma2_posterior(std::size_t j, const ChainState& s, const ExpressionMatrix& X,
                                           const HyperParams& hp) {
  const auto jj = static_cast<Eigen::Index>(j);
  const auto& Y = s.factors.Y;
  Eigen::RowVectorXd w = s.params.W.row(jj);
  const double rss = (X.values.row(jj) - w * Y).squaredNorm();
  const double q = static_cast<double>(Y.rows()), n = static_cast<double>(Y.cols());
  return {0.5 * (q + n) + hp.a, 0.5 * (rss + hp.tau_w * w.squaredNorm()) + hp.b};
}

inline double sample_sigma2(std::size_t j, const ChainState& s, const ExpressionMatrix& X, const HyperParams& hp,
                            Rng& rng) {
  auto ig = sigma2_posterior(j, s, X, hp);
  return rng.inverse_gamma(ig.shape, ig.scale);
}

/// Sum of y_i over members of each cluster (q x H).
inline Matrix cluster_sums(const ChainState& s) {
  Matrix sums = Matrix::Zero(s.params.sigma.dim(), s.partition.clusters());
  for (std::size_t i = 0; i < s.partition.size(); ++i)
    sums.col(s.partition.z[i]) += s.factors.Y.col(static_cast<Eigen::Index>(i));
  return sums;
}

/// mu_h ~ N(sum_{z_i=h} y_i / (n_h + tau_mu), Sigma / (n_h + tau_mu)).
inline Vector sample_mu_given_sum(const Vector& sum, int n_h, const ChainState& s, double tau_mu, Rng& rng) {
  if (n_h <= 0) throw NumericalError("sample_mu on an empty cluster");
  const double k = static_cast<double>(n_h) + tau_mu;
  Vector e = rng.normal_vector(sum.size());
  return sum / k + (s.params.sigma.llt().matrixL() * e) / std::sqrt(k);
}

inline Vector sample_mu(int h, const ChainState& s, double tau_mu, Rng& rng) {
  if (h < 0 || h >= s.partition.clusters()) throw NumericalError("sample_mu: cluster out of range");
  Vector sum = Vector::Zero(s.params.sigma.dim());
  for (std::size_t i = 0; i < s.partition.size(); ++i)
    if (s.partition.z[i] == h) sum += s.factors.Y.col(static_cast<Eigen::Index>(i));
  return sample_mu_given_sum(sum, s.partition.counts[static_cast<std::size_t>(h)], s, tau_mu, rng);
}

/// Phi = sum_h [sum_{z_i=h} (y_i - mu_h)(y_i - mu_h)' + tau_mu mu_h mu_h'].
inline Matrix sigma_scale(const ChainState& s, double tau_mu) {
  const auto q = s.params.sigma.dim();
  Matrix centered(q, static_cast<Eigen::Index>(s.partition.size()));
  for (std::size_t i = 0; i < s.partition.size(); ++i)
    centered.col(static_cast<Eigen::Index>(i)) =
        s.factors.Y.col(static_cast<Eigen::Index>(i)) - s.params.mu.row(s.partition.z[i]).transpose();
  Matrix phi = centered * centered.transpose();
  phi += tau_mu * s.params.mu.transpose() * s.params.mu;
  return 0.5 * (phi + phi.transpose());
}

/// Sigma ~ IW(Phi, n + H).
inline Matrix sample_sigma(const ChainState& s, double tau_mu, Rng& rng) {
  const double df = static_cast<double>(s.partition.size() + static_cast<std::size_t>(s.partition.clusters()));
  return draw_inverse_wishart(sigma_scale(s, tau_mu), df, rng);
}

/// Per-sweep state of the membership update. Keeps L^-1 mu_h for each
/// cluster so each spot costs O(q^2 + qH).
class MembershipStep {
 public:
  MembershipStep(ChainState& s, const AdjacencyGraph& graph, const PriorConfig& prior, const HyperParams& hp,
                 const LogWeightTable& table)
      : s_(s), graph_(graph), prior_(prior), hp_(hp), table_(table) {
    const auto& L = s_.params.sigma.llt().matrixL();
    whitened_mu_ = L.solve(s_.params.mu.transpose());  // q x H
    const double q = static_cast<double>(s_.params.sigma.dim());
    log_norm_ = -0.5 * q * kLog2Pi - 0.5 * s_.params.sigma.log_det();
    const double c = 1.0 + 1.0 / hp_.tau_mu;
    log_norm_new_ = log_norm_ - 0.5 * q * std::log(c);
    new_scale_ = c;
  }

  /// Log weights over existing clusters (spot removed) plus a new cluster.
  /// Spot i must already be detached.
  std::vector<double> log_weights(std::size_t i, const Vector& white_y) const {
    const auto H = static_cast<std::size_t>(s_.partition.clusters());
    std::vector<int> nbr(H, 0);
    for (auto j : graph_.neighbors(i)) {
      const int l = s_.partition.z[j];
      if (l >= 0) ++nbr[static_cast<std::size_t>(l)];
    }
    auto w = urn_log_weights(s_.partition.counts, nbr, prior_, table_);
    for (std::size_t h = 0; h < H; ++h)
      w[h] += log_norm_ - 0.5 * (white_y - whitened_mu_.col(static_cast<Eigen::Index>(h))).squaredNorm();
    w[H] += log_norm_new_ - 0.5 * white_y.squaredNorm() / new_scale_;
    return w;
  }

  /// Removes spot i from its cluster, dropping the cluster if it empties.
  void detach(std::size_t i) {
    const int h = s_.partition.z[i];
    s_.partition.z[i] = -1;
    if (--s_.partition.counts[static_cast<std::size_t>(h)] == 0) drop_cluster(h);
  }

  void update(std::size_t i, Rng& rng) {
    detach(i);
    const Vector y = s_.factors.Y.col(static_cast<Eigen::Index>(i));
    const Vector white_y = s_.params.sigma.llt().matrixL().solve(y);
    const auto w = log_weights(i, white_y);
    const auto k = sample_log_categorical(w, rng);
    const auto H = static_cast<std::size_t>(s_.partition.clusters());
    if (k == H) {
      // Fresh cluster: draw its mean from N(y_i/(1+tau), Sigma/(1+tau)).
      const double kk = 1.0 + hp_.tau_mu;
      Vector e = rng.normal_vector(y.size());
      Vector mu = y / kk + (s_.params.sigma.llt().matrixL() * e) / std::sqrt(kk);
      auto& M = s_.params.mu;
      M.conservativeResize(M.rows() + 1, Eigen::NoChange);
      M.row(M.rows() - 1) = mu.transpose();
      whitened_mu_.conservativeResize(Eigen::NoChange, whitened_mu_.cols() + 1);
      whitened_mu_.col(whitened_mu_.cols() - 1) = s_.params.sigma.llt().matrixL().solve(mu);
      s_.partition.counts.push_back(0);
    }
    s_.partition.z[i] = static_cast<int>(k);
    ++s_.partition.counts[k];
  }

 private:
  void drop_cluster(int h) {
    auto& M = s_.params.mu;
    const auto H = M.rows();
    for (Eigen::Index r = h; r + 1 < H; ++r) {
      M.row(r) = M.row(r + 1);
      whitened_mu_.col(r) = whitened_mu_.col(r + 1);
    }
    M.conservativeResize(H - 1, Eigen::NoChange);
    whitened_mu_.conservativeResize(Eigen::NoChange, H - 1);
    s_.partition.counts.erase(s_.partition.counts.begin() + h);
    for (auto& l : s_.partition.z)
      if (l > h) --l;
  }

  ChainState& s_;
  const AdjacencyGraph& graph_;
  const PriorConfig& prior_;
  const HyperParams& hp_;
  const LogWeightTable& table_;
  Matrix whitened_mu_;
  double log_norm_ = 0, log_norm_new_ = 0, new_scale_ = 1;
};

/// Single membership draw for spot i (the state is updated in place).
/// Returns the new label.
inline int sample_z(std::size_t i, ChainState& s, const AdjacencyGraph& graph, const PriorConfig& prior,
                    const HyperParams& hp, const LogWeightTable& table, Rng& rng) {
  MembershipStep step(s, graph, prior, hp, table);
  step.update(i, rng);
  return s.partition.z[i];
}

/// Relabels clusters to first-appearance order and permutes mu to match.
inline void canonicalize(ChainState& s) {
  const auto remap = s.partition.canonicalize();
  Matrix mu(s.params.mu.rows(), s.params.mu.cols());
  for (auto [old_label, new_label] : remap) mu.row(new_label) = s.params.mu.row(old_label);
  s.params.mu = std::move(mu);
}

// ---------------------------------------------------------------------------
// Scores

/// sum_i log N(x_i; W y_i, Lambda).
inline double log_likelihood_data(const ChainState& s, const ExpressionMatrix& X) {
  const double n = static_cast<double>(X.spots());
  const double p = static_cast<double>(X.genes());
  Matrix resid = X.values - s.params.W * s.factors.Y;
  double v = -0.5 * n * p * kLog2Pi - 0.5 * n * s.params.lambda.array().log().sum();
  v -= 0.5 * (resid.rowwise().squaredNorm().array() / s.params.lambda.array()).sum();
  return v;
}

/// sum_i log N(y_i; mu_{z_i}, Sigma).
inline double log_likelihood_latent(const ChainState& s) {
  const auto q = static_cast<double>(s.params.sigma.dim());
  const double n = static_cast<double>(s.partition.size());
  Matrix centered(s.params.sigma.dim(), static_cast<Eigen::Index>(s.partition.size()));
  for (std::size_t i = 0; i < s.partition.size(); ++i)
    centered.col(static_cast<Eigen::Index>(i)) =
        s.factors.Y.col(static_cast<Eigen::Index>(i)) - s.params.mu.row(s.partition.z[i]).transpose();
  Matrix white = s.params.sigma.llt().matrixL().solve(centered);
  return -0.5 * n * (q * kLog2Pi + s.params.sigma.log_det()) - 0.5 * white.squaredNorm();
}

/// Complete-data log score log P(X|W,Y,Lambda) + log P(Y|z,mu,Sigma) + log P(z),
/// with P(z) the unnormalised MRF-constrained prior.
inline double complete_log_score(const ChainState& s, const ExpressionMatrix& X, const AdjacencyGraph& graph,
                                 const PriorConfig& prior, const LogWeightTable* table = nullptr) {
  return log_likelihood_data(s, X) + log_likelihood_latent(s) + log_partition_prior(s.partition, graph, prior, table);
}

// ---------------------------------------------------------------------------
// Initialisation

namespace detail {

/// Leading q left singular vectors and values of X via a randomised range
/// finder with power iterations.
inline std::pair<Matrix, Vector> top_singular(const Matrix& X, int q, Rng& rng) {
  const auto p = X.rows(), n = X.cols();
  const auto k = std::min<Eigen::Index>(std::min(p, n), q + 10);
  Matrix omega(n, k);
  for (Eigen::Index c = 0; c < k; ++c) omega.col(c) = rng.normal_vector(n);
  Matrix Q = Eigen::HouseholderQR<Matrix>(X * omega).householderQ() * Matrix::Identity(p, k);
  for (int it = 0; it < 4; ++it) {
    Matrix Z = Eigen::HouseholderQR<Matrix>(X.transpose() * Q).householderQ() * Matrix::Identity(n, k);
    Q = Eigen::HouseholderQR<Matrix>(X * Z).householderQ() * Matrix::Identity(p, k);
  }
  Matrix B = Q.transpose() * X;  // k x n
  Eigen::JacobiSVD<Matrix> svd(B, Eigen::ComputeThinU);
  Matrix U = Q * svd.matrixU().leftCols(q);
  Vector s = svd.singularValues().head(q);
  return {U, s};
}

/// Lloyd's k-means with k-means++ seeding on the columns of P.
inline std::vector<int> kmeans(const Matrix& P, int k, Rng& rng, int max_iter = 100) {
  const auto n = static_cast<std::size_t>(P.cols());
  k = std::min<int>(k, static_cast<int>(n));
  Matrix centers(P.rows(), k);
  centers.col(0) = P.col(static_cast<Eigen::Index>(rng.uniform_index(n)));
  std::vector<double> d2(n, INFINITY);
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (P.col(static_cast<Eigen::Index>(i)) - centers.col(c - 1)).squaredNorm());
      total += d2[i];
    }
    double u = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    centers.col(c) = P.col(static_cast<Eigen::Index>(pick));
  }
  std::vector<int> z(n, 0);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = INFINITY;
      for (int c = 0; c < k; ++c) {
        const double d = (P.col(static_cast<Eigen::Index>(i)) - centers.col(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (z[i] != best) {
        z[i] = best;
        changed = true;
      }
    }
    Matrix sums = Matrix::Zero(P.rows(), k);
    std::vector<int> cnt(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.col(z[i]) += P.col(static_cast<Eigen::Index>(i));
      ++cnt[static_cast<std::size_t>(z[i])];
    }
    for (int c = 0; c < k; ++c)
      if (cnt[static_cast<std::size_t>(c)] > 0) centers.col(c) = sums.col(c) / cnt[static_cast<std::size_t>(c)];
    if (!changed && it > 0) break;
  }
  return z;
}

}  // namespace detail

/// Starting state. W comes from the leading principal directions of X, Y
/// from the ridge projection (W' L^-1 W + I)^-1 W' L^-1 x_i, z from the
/// chosen rule, mu from cluster means of Y and Sigma from the pooled
/// within-cluster covariance.
inline ChainState initialize(const ExpressionMatrix& X, const HyperParams& hp, const SamplerConfig& cfg) {
  const int q = hp.q;
  if (q >= X.genes()) throw ConfigError("hyper.q must be smaller than the gene count");
  if (q >= X.spots()) throw ConfigError("hyper.q must be smaller than the spot count");
  Rng rng = substream(cfg.seed, 0, StepTag::kInit);
  const auto n = X.spots();
  const double nd = static_cast<double>(n);

  auto [U, sv] = detail::top_singular(X.values, q, rng);
  Matrix W = U * (sv / std::sqrt(nd)).asDiagonal();
  Matrix scores = (std::sqrt(nd) * sv.cwiseInverse()).asDiagonal() * (U.transpose() * X.values);
  Matrix resid = X.values - W * scores;
  Vector lambda = resid.rowwise().squaredNorm() / nd;
  const double floor = std::max(1e-6, 1e-3 * lambda.mean());
  lambda = lambda.cwiseMax(floor);

  Matrix wl = lambda.cwiseInverse().asDiagonal() * W;
  Matrix prec = W.transpose() * wl + Matrix::Identity(q, q);
  Matrix Y = prec.llt().solve(wl.transpose() * X.values);

  std::vector<int> z;
  switch (cfg.init) {
    case InitKind::Single: z.assign(static_cast<std::size_t>(n), 0); break;
    case InitKind::Random:
      z.resize(static_cast<std::size_t>(n));
      for (auto& l : z) l = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(cfg.init_clusters)));
      break;
    case InitKind::Kmeans: {
      // Unwhitened principal scores keep the relative spread of the
      // components, which is where the cluster separation lives.
      const Matrix P = U.transpose() * X.values;
      z = detail::kmeans(P, cfg.init_clusters, rng);
      break;
    }
  }

  ChainState s;
  s.partition = PartitionState(std::move(z));
  const int H = s.partition.clusters();
  s.factors.Y = std::move(Y);
  s.params.W = std::move(W);
  s.params.lambda = std::move(lambda);
  Matrix sums = Matrix::Zero(q, H);
  for (Eigen::Index i = 0; i < n; ++i) sums.col(s.partition.z[static_cast<std::size_t>(i)]) += s.factors.Y.col(i);
  s.params.mu.resize(H, q);
  for (int h = 0; h < H; ++h) s.params.mu.row(h) = (sums.col(h) / s.partition.counts[static_cast<std::size_t>(h)]).transpose();
  Matrix pooled = Matrix::Zero(q, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector d = s.factors.Y.col(i) - s.params.mu.row(s.partition.z[static_cast<std::size_t>(i)]).transpose();
    pooled += d * d.transpose();
  }
  pooled /= nd;
  pooled.diagonal().array() += 1e-6;
  Eigen::LLT<Matrix> check(pooled);
  s.params.sigma.assign(check.info() == Eigen::Success ? pooled : Matrix(Matrix::Identity(q, q)));
  return s;
}

// ---------------------------------------------------------------------------
// Sweeps and chains

struct ModelContext {
  const ExpressionMatrix& X;
  const AdjacencyGraph& graph;
  const PriorConfig& prior;
  const HyperParams& hyper;
  const LogWeightTable& table;
};

/// One full sweep in the fixed order y, W, sigma^2, mu, Sigma, z.
inline void sweep(ChainState& s, const ModelContext& m, const SamplerConfig& cfg, long iteration) {
  const auto n = static_cast<std::size_t>(m.X.spots());
  const auto p = static_cast<std::size_t>(m.X.genes());
  const auto seed = cfg.seed;

  {
    LatentStep step(s, m.X);
    Matrix Y(s.factors.Y.rows(), s.factors.Y.cols());
    parallel_for(n, cfg.parallel_width, [&](std::size_t i) {
      Rng rng = substream(seed, iteration, StepTag::kLatent, i);
      Y.col(static_cast<Eigen::Index>(i)) = step.draw(i, s.partition.z[i], rng);
    });
    s.factors.Y = std::move(Y);
  }
  {
    LoadingStep step(s, m.X, m.hyper.tau_w);
    Matrix W(s.params.W.rows(), s.params.W.cols());
    parallel_for(p, cfg.parallel_width, [&](std::size_t j) {
      Rng rng = substream(seed, iteration, StepTag::kLoadings, j);
      W.row(static_cast<Eigen::Index>(j)) = step.draw(j, s.params.lambda(static_cast<Eigen::Index>(j)), rng).transpose();
    });
    s.params.W = std::move(W);
  }
  {
    Vector lambda(static_cast<Eigen::Index>(p));
    parallel_for(p, cfg.parallel_width, [&](std::size_t j) {
      Rng rng = substream(seed, iteration, StepTag::kVariance, j);
      lambda(static_cast<Eigen::Index>(j)) = sample_sigma2(j, s, m.X, m.hyper, rng);
    });
    s.params.lambda = std::move(lambda);
  }
  {
    const Matrix sums = cluster_sums(s);
    for (int h = 0; h < s.partition.clusters(); ++h) {
      Rng rng = substream(seed, iteration, StepTag::kMean, static_cast<std::uint64_t>(h));
      s.params.mu.row(h) = sample_mu_given_sum(sums.col(h), s.partition.counts[static_cast<std::size_t>(h)], s,
                                               m.hyper.tau_mu, rng)
                               .transpose();
    }
  }
  {
    Rng rng = substream(seed, iteration, StepTag::kCovariance);
    s.params.sigma.assign(sample_sigma(s, m.hyper.tau_mu, rng));
  }
  {
    MembershipStep step(s, m.graph, m.prior, m.hyper, m.table);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (cfg.random_scan) {
      Rng perm = substream(seed, iteration, StepTag::kMembership, n);
      for (std::size_t k = n; k > 1; --k) std::swap(order[k - 1], order[perm.uniform_index(k)]);
    }
    for (auto i : order) {
      Rng rng = substream(seed, iteration, StepTag::kMembership, i);
      step.update(i, rng);
    }
  }
  canonicalize(s);
}

/// Runs `iterations` sweeps from the configured start and records z and the
/// complete log score every `thin` sweeps after burn-in.
inline ChainTrace run_chain(const ExpressionMatrix& X, const AdjacencyGraph& graph, const PriorConfig& prior,
                            const HyperParams& hyper, const SamplerConfig& cfg,
                            const std::function<void(long, const ChainState&)>& on_sweep = {}) {
  prior.validate();
  hyper.validate();
  cfg.validate();
  if (graph.size() != static_cast<std::size_t>(X.spots())) throw ConfigError("graph size differs from spot count");

  const LogWeightTable table(prior, static_cast<long>(X.spots()));
  const ModelContext ctx{X, graph, prior, hyper, table};
  ChainState s = initialize(X, hyper, cfg);

  ChainTrace trace;
  trace.burn_in = cfg.burn_in;
  trace.thin = cfg.thin;
  trace.seed = cfg.seed;
  for (long it = 1; it <= cfg.iterations; ++it) {
    try {
      sweep(s, ctx, cfg, it);
      s.check(X);
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(it) + ": " + e.what());
    }
    if (on_sweep) on_sweep(it, s);
    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
      TraceRecord r;
      r.iteration = it;
      r.H = s.partition.clusters();
      r.z = s.partition.z;
      r.log_score = complete_log_score(s, X, graph, prior, &table);
      trace.iterations.push_back(std::move(r));
    }
  }
  trace.final_state = std::move(s);
  return trace;
}

}  // namespace bnpmfa

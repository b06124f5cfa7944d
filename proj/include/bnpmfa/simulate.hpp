#pragma once

// Synthetic spatial datasets: Potts label fields on square or offset
// triangular lattices, and expression generated by the factor model.

#include "bnpmfa/core.hpp"
#include "bnpmfa/ingest.hpp"
#include "bnpmfa/rng.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace bnpmfa {

enum class LatticeKind { Square, Triangle };

struct Lattice {
  LatticeKind kind = LatticeKind::Square;
  int m = 40;  ///< m x m spots
};

/// Integer lattice positions; spot k sits at (k mod m, k div m). Triangle
/// lattices use the offset-row convention of the triangle6 neighbour rule.
inline SpatialCoords lattice_coords(const Lattice& l) {
  if (l.m < 1) throw ConfigError("sim.m must be >= 1");
  SpatialCoords c;
  c.coords.resize(static_cast<Eigen::Index>(l.m) * l.m, 2);
  for (int r = 0; r < l.m; ++r)
    for (int col = 0; col < l.m; ++col) {
      const auto k = static_cast<Eigen::Index>(r) * l.m + col;
      c.coords(k, 0) = col;
      c.coords(k, 1) = r;
    }
  return c;
}

inline NeighborRule lattice_rule(const Lattice& l) {
  return l.kind == LatticeKind::Square ? NeighborRule{Square4{}} : NeighborRule{Triangle6{}};
}

enum class SignalKind { Strong, Weak, Custom };

struct SimConfig {
  Lattice lattice;
  int H0 = 3;
  double potts_d = 1.0;
  int potts_sweeps = 500;
  int p = 2000;
  int q = 10;
  SignalKind signal = SignalKind::Strong;
  double mu_scale = 5.0;     ///< used when signal == Custom
  double sigma_scale = 8.0;  ///< used when signal == Custom
  std::uint64_t seed = 1;

  /// (mean scale s, covariance scale c): mu_h = s e_h, Sigma = c I.
  [[nodiscard]] std::pair<double, double> signal_scales() const {
    switch (signal) {
      case SignalKind::Strong: return {5.0, 8.0};
      case SignalKind::Weak: return {3.0, 6.0};
      case SignalKind::Custom: return {mu_scale, sigma_scale};
    }
    return {mu_scale, sigma_scale};
  }

  void validate() const {
    if (H0 < 1) throw ConfigError("sim.H0 must be >= 1");
    if (q < 1) throw ConfigError("sim.q must be >= 1");
    if (p <= q) throw ConfigError("sim.p must exceed sim.q");
    if (potts_sweeps < 1) throw ConfigError("sim.potts_sweeps must be >= 1");
    if (potts_d < 0 || !std::isfinite(potts_d)) throw ConfigError("sim.potts_d must be finite and >= 0");
    if (H0 > q) throw ConfigError("sim.H0 must not exceed sim.q (means are scaled unit vectors)");
    if (signal == SignalKind::Custom && !(sigma_scale > 0)) throw ConfigError("sim.sigma_scale must be > 0");
  }
};

struct SimDataset {
  ExpressionMatrix X;
  SpatialCoords coords;
  std::vector<int> truth;  ///< 0-based labels
  Matrix W;                ///< p x q
  Vector lambda;           ///< p
  Matrix mu;               ///< H0 x q
  Matrix sigma;            ///< q x q
  Matrix Y;                ///< q x n
  Matrix noise;            ///< p x n, exactly X - W Y
};

/// Gibbs sweeps of the H0-state Potts model
/// P(z_i = h | rest) proportional to exp(d * #neighbours labelled h),
/// starting from i.i.d. uniform labels.
inline std::vector<int> potts_pattern(const AdjacencyGraph& graph, int H0, double potts_d, int sweeps, Rng& rng) {
  if (H0 < 1) throw ConfigError("potts_pattern: H0 must be >= 1");
  const auto n = graph.size();
  std::vector<int> z(n);
  for (auto& l : z) l = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(H0)));
  std::vector<double> logw(static_cast<std::size_t>(H0));
  for (int s = 0; s < sweeps; ++s)
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(logw.begin(), logw.end(), 0.0);
      for (auto j : graph.neighbors(i)) logw[static_cast<std::size_t>(z[j])] += potts_d;
      z[i] = static_cast<int>(sample_log_categorical(logw, rng));
    }
  return z;
}

/// X = W Y + eps with eps_ji ~ N(0, lambda_j). The returned noise is
/// recomputed as X - W Y so the decomposition holds exactly in floating point.
inline std::pair<Matrix, Matrix> draw_observations(const Matrix& W, const Vector& lambda, const Matrix& Y, Rng& rng) {
  if (W.rows() != lambda.size() || W.cols() != Y.rows()) throw ConfigError("draw_observations: dimension mismatch");
  if ((lambda.array() < 0).any()) throw ConfigError("draw_observations: negative noise variance");
  Matrix raw(W.rows(), Y.cols());
  for (Eigen::Index i = 0; i < Y.cols(); ++i)
    for (Eigen::Index j = 0; j < W.rows(); ++j) raw(j, i) = std::sqrt(lambda(j)) * rng.normal();
  const Matrix signal = W * Y;
  Matrix X = signal + raw;
  Matrix noise = X - signal;
  return {std::move(X), std::move(noise)};
}

/// Draws expression for given labels: y_i ~ N(s e_{z_i}, c I),
/// w_jl ~ N(0, 1), sigma_j^2 ~ IG(2, 1), x_i = W y_i + eps_i.
inline SimDataset generate_expression(const SimConfig& cfg, std::vector<int> truth, SpatialCoords coords, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(truth.size());
  const auto [s, c] = cfg.signal_scales();
  int H = 0;
  for (int l : truth) H = std::max(H, l + 1);
  if (H > cfg.q) throw ConfigError("sim: label count exceeds latent dimension");

  SimDataset d;
  d.mu = Matrix::Zero(H, cfg.q);
  for (int h = 0; h < H; ++h) d.mu(h, h) = s;
  d.sigma = c * Matrix::Identity(cfg.q, cfg.q);
  const double sd = std::sqrt(c);

  d.Y.resize(cfg.q, n);
  for (Eigen::Index i = 0; i < n; ++i) d.Y.col(i) = d.mu.row(truth[static_cast<std::size_t>(i)]).transpose() + sd * rng.normal_vector(cfg.q);
  d.W.resize(cfg.p, cfg.q);
  for (Eigen::Index j = 0; j < cfg.p; ++j) d.W.row(j) = rng.normal_vector(cfg.q).transpose();
  d.lambda.resize(cfg.p);
  for (Eigen::Index j = 0; j < cfg.p; ++j) d.lambda(j) = rng.inverse_gamma(2.0, 1.0);

  auto [X, noise] = draw_observations(d.W, d.lambda, d.Y, rng);
  d.noise = std::move(noise);

  std::vector<std::string> genes, spots;
  for (int j = 0; j < cfg.p; ++j) genes.push_back("g" + std::to_string(j + 1));
  for (Eigen::Index i = 0; i < n; ++i) spots.push_back("s" + std::to_string(i + 1));
  d.X = ExpressionMatrix(std::move(X), std::move(genes), std::move(spots));
  d.coords = std::move(coords);
  d.truth = std::move(truth);
  return d;
}

/// Full pipeline: lattice, Potts labels, then expression.
inline SimDataset generate_dataset(const SimConfig& cfg) {
  cfg.validate();
  auto coords = lattice_coords(cfg.lattice);
  auto graph = build_graph(coords, lattice_rule(cfg.lattice));
  Rng potts_rng(derive_seed(cfg.seed, 1));
  auto z = potts_pattern(graph, cfg.H0, cfg.potts_d, cfg.potts_sweeps, potts_rng);
  Rng expr_rng(derive_seed(cfg.seed, 2));
  return generate_expression(cfg, std::move(z), std::move(coords), expr_rng);
}

}  // namespace bnpmfa

#pragma once

// Gibbs-type partition priors (DP, PY, MFM), the MRF subgraph modifier and
// the sequential urn weights that the membership update builds on.

#include "bnpmfa/core.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace bnpmfa {

/// log of the ascending factorial (a)_k = a (a+1) ... (a+k-1), a > 0.
inline double log_rising(double a, double k) {
  if (k == 0) return 0.0;
  return std::lgamma(a + k) - std::lgamma(a);
}

inline double log_sum_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

namespace detail {

/// log of one MFM series term p(m) beta^H prod_{h<H}(m-h) / (m beta + 1)_{n-1}.
inline double mfm_log_term(const PriorConfig& c, long n, long H, long m) {
  const double lp = c.mfm_component_prior.log_pmf(m);
  if (lp == -INFINITY) return -INFINITY;
  double v = lp + static_cast<double>(H) * std::log(c.beta);
  v += std::lgamma(static_cast<double>(m)) - std::lgamma(static_cast<double>(m - H + 1));  // prod_{h=1}^{H-1} (m-h)
  v -= log_rising(static_cast<double>(m) * c.beta + 1.0, static_cast<double>(n - 1));
  return v;
}

inline double mfm_log_vn(const PriorConfig& c, long n, long H, double tol) {
  if (!c.mfm_component_prior.is_poisson()) {
    double acc = -INFINITY;
    const auto M = static_cast<long>(c.mfm_component_prior.pmf.size());
    for (long m = H; m <= M; ++m) acc = log_sum_exp(acc, mfm_log_term(c, n, H, m));
    return acc;
  }
  // Shifted Poisson: every later term ratio is bounded by lambda/(m-H+1),
  // which gives a geometric bound on the tail.
  const double lambda = c.mfm_component_prior.poisson_lambda;
  const double log_tol = std::log(tol);
  double acc = -INFINITY;
  constexpr long kMaxTerms = 10'000'000;
  for (long m = H; m < H + kMaxTerms; ++m) {
    acc = log_sum_exp(acc, mfm_log_term(c, n, H, m));
    const long next = m + 1;
    const double rho = lambda / static_cast<double>(next - H + 1);
    if (rho < 1.0) {
      const double log_tail = mfm_log_term(c, n, H, next) - std::log1p(-rho);
      if (log_tail < log_tol + acc) return acc;
    }
  }
  throw NumericalError("MFM weight series did not converge");
}

}  // namespace detail

/// log V_n(H) for the configured family.
inline double log_vn(const PriorConfig& c, long n, long H, double truncation_tol = 1e-12) {
  if (H < 1 || H > n) throw ConfigError("log_vn: need 1 <= H <= n");
  c.validate();
  switch (c.family) {
    case PriorFamily::DP:
      return static_cast<double>(H) * std::log(c.beta) - log_rising(c.beta, static_cast<double>(n));
    case PriorFamily::PY: {
      double v = 0.0;
      for (long h = 1; h < H; ++h) {
        const double f = c.beta + static_cast<double>(h) * c.delta;
        if (f <= 0.0) return -INFINITY;
        v += std::log(f);
      }
      return v - log_rising(c.beta + 1.0, static_cast<double>(n - 1));
    }
    case PriorFamily::MFM:
      return detail::mfm_log_vn(c, n, H, truncation_tol);
  }
  return -INFINITY;
}

/// Memoised log V_n(H) for one n. Values for H <= h_max are computed up
/// front; larger H are evaluated on demand, so the table is safe to share.
class LogWeightTable {
 public:
  LogWeightTable() = default;
  LogWeightTable(const PriorConfig& c, long n, long h_max = 64, double truncation_tol = 1e-12)
      : config_(c), n_(n), tol_(truncation_tol) {
    c.validate();
    const long top = std::min(n, h_max);
    log_v_.resize(static_cast<std::size_t>(top) + 1, -INFINITY);
    for (long H = 1; H <= top; ++H) log_v_[static_cast<std::size_t>(H)] = log_vn(c, n, H, tol_);
  }

  [[nodiscard]] double operator()(long H) const {
    if (H >= 1 && static_cast<std::size_t>(H) < log_v_.size()) return log_v_[static_cast<std::size_t>(H)];
    return log_vn(config_, n_, H, tol_);
  }

  [[nodiscard]] long n() const { return n_; }
  [[nodiscard]] PriorFamily family() const { return config_.family; }
  [[nodiscard]] double truncation_tol() const { return tol_; }

 private:
  PriorConfig config_;
  long n_ = 0;
  double tol_ = 1e-12;
  std::vector<double> log_v_;
};

/// log psi(G_h) = n_h g_h + d |E_h|.
inline double log_psi(std::size_t subgraph_edges, std::size_t n_h, double g_h, double d) {
  return static_cast<double>(n_h) * g_h + d * static_cast<double>(subgraph_edges);
}

/// Number of graph edges with both endpoints in each cluster.
inline std::vector<std::size_t> within_cluster_edges(const PartitionState& z, const AdjacencyGraph& graph) {
  std::vector<std::size_t> e(static_cast<std::size_t>(z.clusters()), 0);
  for (std::size_t i = 0; i < graph.size(); ++i)
    for (auto j : graph.neighbors(i))
      if (i < j && z.z[i] == z.z[j]) ++e[static_cast<std::size_t>(z.z[i])];
  return e;
}

/// Unnormalised log prior mass of a partition under the MRF-constrained
/// Gibbs-type prior: log V_n(H) + sum_h [log psi(G_h) + log (1-delta)_{n_h-1}].
inline double log_partition_prior(const PartitionState& z, const AdjacencyGraph& graph, const PriorConfig& c,
                                  const LogWeightTable* table = nullptr) {
  if (graph.size() != z.size()) throw ConfigError("partition and graph sizes differ");
  const long n = static_cast<long>(z.size());
  const long H = z.clusters();
  double v = table && table->n() == n ? (*table)(H) : log_vn(c, n, H);
  const auto edges = within_cluster_edges(z, graph);
  for (int h = 0; h < H; ++h) {
    const auto nh = static_cast<std::size_t>(z.counts[static_cast<std::size_t>(h)]);
    v += log_psi(edges[static_cast<std::size_t>(h)], nh, c.g(h), c.mrf_d);
    v += log_rising(1.0 - c.delta, static_cast<double>(nh) - 1.0);
  }
  return v;
}

/// Prior-only urn log-weights for one spot given everyone else.
///
/// `counts` are the cluster sizes with the spot removed (all > 0),
/// `neighbors_in` the number of the spot's neighbours in each cluster and
/// `n` the total spot count including the spot. Entry h < H is
/// log(n_{h,-i} - delta) + d * neighbours_h + g_h; entry H is the new
/// cluster, log V_n(H+1) - log V_n(H) + g for a fresh cluster.
inline std::vector<double> urn_log_weights(const std::vector<int>& counts, const std::vector<int>& neighbors_in,
                                           const PriorConfig& c, const LogWeightTable& table) {
  const auto H = counts.size();
  std::vector<double> w(H + 1);
  for (std::size_t h = 0; h < H; ++h) {
    const double size_term = static_cast<double>(counts[h]) - c.delta;
    if (!(size_term > 0.0)) throw NumericalError("urn weight n_{h,-i} - delta must be positive");
    w[h] = std::log(size_term) + c.mrf_d * static_cast<double>(neighbors_in[h]) + c.g(static_cast<int>(h));
  }
  const long Hl = static_cast<long>(H);
  w[H] = table(Hl + 1) - table(Hl) + c.g(static_cast<int>(H));
  return w;
}

/// Urn weights for spot i of a full partition. Spot i is taken out of its
/// cluster; if that empties the cluster it is dropped. `cluster_of_entry[k]`
/// maps entry k back to the original label (-1 for a new cluster).
struct UrnWeights {
  std::vector<double> log_w;
  std::vector<int> cluster_of_entry;
};

inline UrnWeights urn_log_weights(std::size_t i, const PartitionState& z, const AdjacencyGraph& graph,
                                  const PriorConfig& c, const LogWeightTable& table) {
  std::vector<int> counts = z.counts;
  --counts[static_cast<std::size_t>(z.z[i])];
  std::vector<int> nbr(counts.size(), 0);
  for (auto j : graph.neighbors(i)) ++nbr[static_cast<std::size_t>(z.z[j])];

  UrnWeights out;
  std::vector<int> kept_counts, kept_nbr;
  for (std::size_t h = 0; h < counts.size(); ++h) {
    if (counts[h] == 0) continue;
    kept_counts.push_back(counts[h]);
    kept_nbr.push_back(nbr[h]);
    out.cluster_of_entry.push_back(static_cast<int>(h));
  }
  out.log_w = urn_log_weights(kept_counts, kept_nbr, c, table);
  out.cluster_of_entry.push_back(-1);
  return out;
}

}  // namespace bnpmfa

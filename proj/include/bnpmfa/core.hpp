#pragma once

// Domain types shared by every part of the clustering engine.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace bnpmfa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors. The CLI maps each kind to its own exit code.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class Container>
std::optional<std::string> first_duplicate(const Container& ids) {
  std::unordered_set<std::string> seen;
  seen.reserve(ids.size());
  for (const auto& id : ids)
    if (!seen.insert(id).second) return id;
  return std::nullopt;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// p x n observed profile. Rows are genes, columns are spots.
struct ExpressionMatrix {
  Matrix values;
  std::vector<std::string> gene_ids;
  std::vector<std::string> spot_ids;

  ExpressionMatrix() = default;
  ExpressionMatrix(Matrix v, std::vector<std::string> genes, std::vector<std::string> spots)
      : values(std::move(v)), gene_ids(std::move(genes)), spot_ids(std::move(spots)) {
    validate();
  }

  [[nodiscard]] Eigen::Index genes() const { return values.rows(); }
  [[nodiscard]] Eigen::Index spots() const { return values.cols(); }

  void validate() const {
    if (values.rows() < 1) throw ConfigError("expression matrix needs at least one gene");
    if (values.cols() < 2) throw ConfigError("expression matrix needs at least two spots");
    if (static_cast<Eigen::Index>(gene_ids.size()) != values.rows())
      throw ConfigError("gene_ids length does not match row count");
    if (static_cast<Eigen::Index>(spot_ids.size()) != values.cols())
      throw ConfigError("spot_ids length does not match column count");
    if (!values.allFinite()) throw ConfigError("expression matrix contains non-finite values");
    if (auto d = detail::first_duplicate(gene_ids)) throw ConfigError("duplicate gene id '" + *d + "'");
    if (auto d = detail::first_duplicate(spot_ids)) throw ConfigError("duplicate spot id '" + *d + "'");
  }
};

/// n x 2 spot positions, row order follows the paired expression matrix.
struct SpatialCoords {
  Eigen::MatrixX2d coords;

  [[nodiscard]] Eigen::Index size() const { return coords.rows(); }
};

/// Undirected neighbour graph over spots 0..n-1 (no self-loops).
///
/// Stored as sorted adjacency lists; `edges()` enumerates each unordered
/// pair once with i < j.
class AdjacencyGraph {
 public:
  AdjacencyGraph() = default;
  explicit AdjacencyGraph(std::size_t n) : adj_(n) {}

  AdjacencyGraph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) : adj_(n) {
    for (auto [a, b] : edges) add_edge(a, b);
    finalize();
  }

  /// Adds {a, b}; duplicates are removed by finalize().
  void add_edge(std::size_t a, std::size_t b) {
    if (a >= adj_.size() || b >= adj_.size()) throw ConfigError("edge endpoint out of range");
    if (a == b) return;
    adj_[a].push_back(b);
    adj_[b].push_back(a);
  }

  void finalize() {
    for (auto& list : adj_) {
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
    }
  }

  [[nodiscard]] std::size_t size() const { return adj_.size(); }
  [[nodiscard]] const std::vector<std::size_t>& neighbors(std::size_t i) const { return adj_[i]; }
  [[nodiscard]] std::size_t degree(std::size_t i) const { return adj_[i].size(); }

  [[nodiscard]] std::size_t edge_count() const {
    std::size_t total = 0;
    for (const auto& list : adj_) total += list.size();
    return total / 2;
  }

  [[nodiscard]] bool has_edge(std::size_t a, std::size_t b) const {
    const auto& list = adj_[a];
    return std::binary_search(list.begin(), list.end(), b);
  }

  [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < adj_.size(); ++i)
      for (auto j : adj_[i])
        if (i < j) out.emplace_back(i, j);
    return out;
  }

  friend bool operator==(const AdjacencyGraph&, const AdjacencyGraph&) = default;

 private:
  std::vector<std::vector<std::size_t>> adj_;
};

/// Cluster labels. Internally labels are 0-based (0..H-1); they are written
/// out 1-based.
struct PartitionState {
  std::vector<int> z;
  std::vector<int> counts;

  PartitionState() = default;

  /// Builds from arbitrary integer labels and compacts them to
  /// first-appearance order.
  explicit PartitionState(std::vector<int> labels) : z(std::move(labels)) { canonicalize(); }

  [[nodiscard]] int clusters() const { return static_cast<int>(counts.size()); }
  [[nodiscard]] std::size_t size() const { return z.size(); }

  /// Relabels to order of first appearance and recomputes counts.
  /// Returns old-label -> new-label.
  std::unordered_map<int, int> canonicalize() {
    std::unordered_map<int, int> remap;
    counts.clear();
    for (auto& label : z) {
      auto [it, inserted] = remap.try_emplace(label, static_cast<int>(remap.size()));
      if (inserted) counts.push_back(0);
      label = it->second;
      ++counts[label];
    }
    return remap;
  }

  void check() const {
    long total = 0;
    for (std::size_t h = 0; h < counts.size(); ++h) {
      if (counts[h] <= 0) throw NumericalError("empty cluster " + std::to_string(h + 1));
      total += counts[h];
    }
    if (total != static_cast<long>(z.size())) throw NumericalError("cluster counts do not sum to n");
    for (int label : z)
      if (label < 0 || label >= clusters()) throw NumericalError("label outside 1..H");
  }

  friend bool operator==(const PartitionState&, const PartitionState&) = default;
};

/// Symmetric positive-definite q x q matrix with its Cholesky factor cached.
class SpdMatrix {
 public:
  SpdMatrix() = default;
  explicit SpdMatrix(Matrix m) { assign(std::move(m)); }

  void assign(Matrix m) {
    if (m.rows() != m.cols()) throw NumericalError("covariance must be square");
    m = 0.5 * (m + m.transpose());
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
    value_ = std::move(m);
    llt_ = std::move(llt);
    Matrix l = llt_.matrixL();
    log_det_ = 2.0 * l.diagonal().array().log().sum();
  }

  [[nodiscard]] const Matrix& value() const { return value_; }
  [[nodiscard]] const Eigen::LLT<Matrix>& llt() const { return llt_; }
  [[nodiscard]] double log_det() const { return log_det_; }
  [[nodiscard]] Eigen::Index dim() const { return value_.rows(); }

  /// Mahalanobis form v' S^{-1} v.
  [[nodiscard]] double quad(const Vector& v) const {
    Vector w = llt_.matrixL().solve(v);
    return w.squaredNorm();
  }

  [[nodiscard]] Matrix inverse() const { return llt_.solve(Matrix::Identity(dim(), dim())); }

 private:
  Matrix value_;
  Eigen::LLT<Matrix> llt_;
  double log_det_ = 0.0;
};

struct FactorModelParams {
  Matrix W;        ///< p x q loadings
  Vector lambda;   ///< length-p residual variances sigma_j^2
  Matrix mu;       ///< H x q component means, row h = mu_h
  SpdMatrix sigma; ///< q x q shared latent covariance
};

struct LatentFactors {
  Matrix Y;  ///< q x n
};

enum class PriorFamily { DP, PY, MFM };

inline const char* to_string(PriorFamily f) {
  switch (f) {
    case PriorFamily::DP: return "DP";
    case PriorFamily::PY: return "PY";
    case PriorFamily::MFM: return "MFM";
  }
  return "?";
}

inline PriorFamily parse_family(const std::string& s) {
  if (s == "DP" || s == "dp") return PriorFamily::DP;
  if (s == "PY" || s == "py") return PriorFamily::PY;
  if (s == "MFM" || s == "mfm") return PriorFamily::MFM;
  throw ConfigError("prior.family: unknown family '" + s + "' (expected DP, PY or MFM)");
}

/// Prior on the number of mixture components m >= 1 used by MFM.
/// Either a shifted Poisson (m - 1 ~ Poisson(lambda)) or an explicit pmf
/// where entry k is p(m = k + 1).
struct ComponentPrior {
  double poisson_lambda = 1.0;
  std::vector<double> pmf;

  [[nodiscard]] bool is_poisson() const { return pmf.empty(); }

  [[nodiscard]] double log_pmf(long m) const {
    if (m < 1) return -INFINITY;
    if (is_poisson())
      return -poisson_lambda + static_cast<double>(m - 1) * std::log(poisson_lambda) - std::lgamma(static_cast<double>(m));
    if (static_cast<std::size_t>(m) > pmf.size()) return -INFINITY;
    double v = pmf[static_cast<std::size_t>(m - 1)];
    return v > 0 ? std::log(v) : -INFINITY;
  }
};

struct PriorConfig {
  PriorFamily family = PriorFamily::MFM;
  double beta = 1.0;
  double delta = -1.0;
  ComponentPrior mfm_component_prior;
  double mrf_d = 0.0;
  /// g for clusters without an explicit entry in mrf_g_overrides, including
  /// every newly opened cluster.
  double mrf_g = 1.0;
  std::vector<double> mrf_g_overrides;
  bool allow_nonstandard_py = false;

  [[nodiscard]] double g(int h) const {
    if (h >= 0 && static_cast<std::size_t>(h) < mrf_g_overrides.size()) return mrf_g_overrides[h];
    return mrf_g;
  }

  /// Standard MFM configuration (delta = -beta).
  static PriorConfig mfm(double beta = 1.0, double d = 0.0) {
    PriorConfig c;
    c.family = PriorFamily::MFM;
    c.beta = beta;
    c.delta = -beta;
    c.mrf_d = d;
    return c;
  }
  static PriorConfig dp(double beta = 1.0, double d = 0.0) {
    PriorConfig c;
    c.family = PriorFamily::DP;
    c.beta = beta;
    c.delta = 0.0;
    c.mrf_d = d;
    return c;
  }
  static PriorConfig py(double beta, double delta, double d = 0.0) {
    PriorConfig c;
    c.family = PriorFamily::PY;
    c.beta = beta;
    c.delta = delta;
    c.mrf_d = d;
    return c;
  }

  void validate() const {
    if (!std::isfinite(beta) || !std::isfinite(delta)) throw ConfigError("prior.beta/prior.delta must be finite");
    if (!(delta < 1.0)) throw ConfigError("prior.delta must be < 1");
    if (!(mrf_d >= 0.0) || !std::isfinite(mrf_d)) throw ConfigError("prior.d must be finite and >= 0");
    switch (family) {
      case PriorFamily::DP:
        if (delta != 0.0) throw ConfigError("prior.delta must be 0 for DP");
        if (!(beta > 0.0)) throw ConfigError("prior.beta must be > 0 for DP");
        break;
      case PriorFamily::PY:
        if (delta < 0.0 && !allow_nonstandard_py)
          throw ConfigError("prior.delta must lie in [0, 1) for PY (pass --allow-nonstandard-py to override)");
        if (!(beta > -delta)) throw ConfigError("prior.beta must exceed -prior.delta for PY");
        break;
      case PriorFamily::MFM:
        if (!(delta < 0.0) || std::abs(delta + beta) > 1e-12)
          throw ConfigError("prior.delta must equal -prior.beta < 0 for MFM");
        if (mfm_component_prior.is_poisson()) {
          if (!(mfm_component_prior.poisson_lambda > 0.0))
            throw ConfigError("prior.mfm_lambda must be > 0");
        } else {
          double s = 0.0;
          for (double v : mfm_component_prior.pmf) {
            if (!(v >= 0.0)) throw ConfigError("prior.mfm_pmf entries must be >= 0");
            s += v;
          }
          if (std::abs(s - 1.0) > 1e-12) throw ConfigError("prior.mfm_pmf must sum to 1");
        }
        break;
    }
  }
};

struct HyperParams {
  double tau_w = 1.0;
  double tau_mu = 1.0;
  double a = 1.0;
  double b = 1.0;
  int q = 5;

  void validate() const {
    if (!(tau_w > 0)) throw ConfigError("hyper.tau_w must be > 0");
    if (!(tau_mu > 0)) throw ConfigError("hyper.tau_mu must be > 0");
    if (!(a > 0)) throw ConfigError("hyper.a must be > 0");
    if (!(b > 0)) throw ConfigError("hyper.b must be > 0");
    if (q < 1) throw ConfigError("hyper.q must be >= 1");
  }
};

struct ChainState {
  PartitionState partition;
  LatentFactors factors;
  FactorModelParams params;

  void check(const ExpressionMatrix& X) const {
    partition.check();
    const auto q = params.sigma.dim();
    if (params.mu.rows() != partition.clusters()) throw NumericalError("mu rows differ from H");
    if (params.mu.cols() != q || factors.Y.rows() != q || params.W.cols() != q)
      throw NumericalError("latent dimension mismatch");
    if (factors.Y.cols() != X.spots() || static_cast<Eigen::Index>(partition.size()) != X.spots())
      throw NumericalError("spot count mismatch");
    if (params.W.rows() != X.genes() || params.lambda.size() != X.genes())
      throw NumericalError("gene count mismatch");
  }
};

struct TraceRecord {
  long iteration = 0;
  int H = 0;
  std::vector<int> z;
  double log_score = 0.0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct ChainTrace {
  std::vector<TraceRecord> iterations;
  long burn_in = 0;
  long thin = 1;
  std::uint64_t seed = 0;
  /// State after the last sweep; ICL is evaluated on it.
  std::optional<ChainState> final_state;

  [[nodiscard]] std::size_t spots() const { return iterations.empty() ? 0 : iterations.front().z.size(); }

  void check() const {
    if (iterations.empty()) throw ConfigError("trace has no kept iterations");
    const auto n = iterations.front().z.size();
    for (const auto& r : iterations)
      if (r.z.size() != n) throw ConfigError("trace snapshots differ in length");
  }
};

}  // namespace bnpmfa

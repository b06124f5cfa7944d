#pragma once

// Posterior partition summaries: co-clustering matrix, PPM and MAP point
// estimates, ICL, and selection of the MRF strength d.

#include "bnpmfa/core.hpp"
#include "bnpmfa/gibbs_priors.hpp"
#include "bnpmfa/metrics.hpp"
#include "bnpmfa/sampler.hpp"

#include <cmath>
#include <future>
#include <iostream>
#include <optional>
#include <vector>

namespace bnpmfa {

/// Posterior co-clustering frequencies, symmetric with unit diagonal.
struct PPM {
  Matrix values;
};

inline PPM compute_ppm(const ChainTrace& trace) {
  trace.check();
  const auto n = trace.spots();
  Matrix counts = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<std::vector<Eigen::Index>> members;
  for (const auto& r : trace.iterations) {
    int H = 0;
    for (int l : r.z) H = std::max(H, l + 1);
    members.assign(static_cast<std::size_t>(H), {});
    for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(r.z[i])].push_back(static_cast<Eigen::Index>(i));
    for (const auto& m : members)
      for (std::size_t a = 0; a < m.size(); ++a)
        for (std::size_t b = a + 1; b < m.size(); ++b) counts(m[a], m[b]) += 1.0;
  }
  PPM out;
  out.values = counts / static_cast<double>(trace.iterations.size());
  out.values.triangularView<Eigen::StrictlyLower>() = out.values.transpose();
  out.values.diagonal().setOnes();
  return out;
}

/// sum_{i<i'} (I(z_i = z_i') - PPM_ii')^2.
inline double ppm_loss(const std::vector<int>& z, const PPM& ppm) {
  const auto n = z.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = z[i] == z[j] ? 1.0 : 0.0;
      const double d = a - ppm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      loss += d * d;
    }
  return loss;
}

struct PointEstimate {
  PartitionState partition;
  std::size_t record = 0;  ///< index into trace.iterations
  double value = 0.0;      ///< loss (PPM) or log score (MAP)
};

/// Kept partition closest to the PPM in squared association distance;
/// ties go to the earliest iteration.
inline PointEstimate ppm_point_estimate(const ChainTrace& trace, const PPM& ppm) {
  trace.check();
  if (static_cast<std::size_t>(ppm.values.rows()) != trace.spots()) throw ConfigError("PPM size differs from trace");
  PointEstimate best;
  best.value = INFINITY;
  for (std::size_t u = 0; u < trace.iterations.size(); ++u) {
    const double loss = ppm_loss(trace.iterations[u].z, ppm);
    if (loss < best.value) {
      best.value = loss;
      best.record = u;
    }
  }
  best.partition = PartitionState(trace.iterations[best.record].z);
  return best;
}

/// Kept partition with the largest complete log score; ties go to the
/// earliest iteration.
inline PointEstimate map_estimate(const ChainTrace& trace) {
  trace.check();
  PointEstimate best;
  best.value = -INFINITY;
  for (std::size_t u = 0; u < trace.iterations.size(); ++u) {
    if (trace.iterations[u].log_score > best.value) {
      best.value = trace.iterations[u].log_score;
      best.record = u;
    }
  }
  best.partition = PartitionState(trace.iterations[best.record].z);
  return best;
}

/// log(n) (p q + H q + q(q+1)/2 + p).
inline double icl_penalty(long n, long p, long q, long H) {
  const double qd = static_cast<double>(q);
  return std::log(static_cast<double>(n)) *
         (static_cast<double>(p) * qd + static_cast<double>(H) * qd + qd * (qd + 1.0) / 2.0 + static_cast<double>(p));
}

/// ICL = -2 log L(complete) + penalty, evaluated at a single state.
inline double compute_icl(const ChainState& s, const ExpressionMatrix& X, const AdjacencyGraph& graph,
                          const PriorConfig& prior) {
  const double score = complete_log_score(s, X, graph, prior);
  return -2.0 * score + icl_penalty(X.spots(), X.genes(), s.params.sigma.dim(), s.partition.clusters());
}

struct ICLRecord {
  double d = 0.0;
  double icl = NAN;
  int H_hat = 0;
  std::string trace_ref;
  std::optional<std::string> error;
  std::optional<ChainTrace> trace;
};

struct DSelection {
  double best_d = NAN;
  std::vector<ICLRecord> records;
};

/// Runs one chain per grid value of d (same seed for all) and picks the
/// smallest ICL; ties go to the smaller d. Chains that abort numerically are
/// recorded with their error and left out of the argmin.
inline DSelection select_d(const ExpressionMatrix& X, const AdjacencyGraph& graph, const PriorConfig& prior_template,
                           const HyperParams& hyper, const SamplerConfig& cfg, const std::vector<double>& d_grid,
                           int workers = 1, bool keep_traces = false) {
  if (d_grid.empty()) throw ConfigError("select_d: empty d grid");
  auto run_one = [&](double d) {
    ICLRecord rec;
    rec.d = d;
    rec.trace_ref = "d=" + csv::format_double(d);
    PriorConfig prior = prior_template;
    prior.mrf_d = d;
    try {
      auto trace = run_chain(X, graph, prior, hyper, cfg);
      rec.icl = compute_icl(*trace.final_state, X, graph, prior);
      rec.H_hat = trace.final_state->partition.clusters();
      if (keep_traces) rec.trace = std::move(trace);
    } catch (const NumericalError& e) {
      rec.error = e.what();
    }
    return rec;
  };

  DSelection out;
  out.records.resize(d_grid.size());
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  for (std::size_t start = 0; start < d_grid.size(); start += w) {
    std::vector<std::future<ICLRecord>> batch;
    for (std::size_t k = start; k < std::min(d_grid.size(), start + w); ++k)
      batch.push_back(std::async(w > 1 ? std::launch::async : std::launch::deferred, run_one, d_grid[k]));
    for (std::size_t k = 0; k < batch.size(); ++k) out.records[start + k] = batch[k].get();
  }

  double best = INFINITY;
  for (const auto& r : out.records) {
    if (r.error) {
      std::cerr << "warning: d=" << r.d << " excluded: " << *r.error << "\n";
      continue;
    }
    if (std::isnan(out.best_d) || r.icl < best || (r.icl == best && r.d < out.best_d)) {
      out.best_d = r.d;
      best = r.icl;
    }
  }
  if (std::isnan(out.best_d)) throw NumericalError("select_d: every chain in the grid failed");
  return out;
}

/// Pairwise ARI between the PPM point estimates of several chains.
inline Matrix chain_agreement(const std::vector<ChainTrace>& traces) {
  if (traces.size() < 2) throw ConfigError("chain_agreement: need at least two traces");
  std::vector<std::vector<int>> est;
  for (const auto& t : traces) {
    if (t.spots() != traces.front().spots()) throw ConfigError("chain_agreement: traces cover different spot counts");
    est.push_back(ppm_point_estimate(t, compute_ppm(t)).partition.z);
  }
  const auto k = static_cast<Eigen::Index>(traces.size());
  Matrix m = Matrix::Identity(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = a + 1; b < k; ++b) m(a, b) = m(b, a) = ari(est[a], est[b]);
  return m;
}

}  // namespace bnpmfa

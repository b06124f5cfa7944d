// bnpmfa: spatial clustering with MRF-constrained Bayesian nonparametric
// mixtures of factor analysers.

#include "bnpmfa/bnpmfa.hpp"
#include "bnpmfa/config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <future>
#include <iostream>
#include <optional>
#include <random>

namespace fs = std::filesystem;
using namespace bnpmfa;

namespace {

constexpr const char* kVersion = "1.0.0";

struct GlobalFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  bool allow_nonstandard_py = false;
};

RunConfig resolve(const GlobalFlags& g) {
  RunConfig c;
  if (!g.preset.empty()) apply_preset(c, g.preset);
  if (!g.config.empty()) c = load_config(g.config, c);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.out = g.out;
  if (g.threads) c.threads = *g.threads;
  if (g.allow_nonstandard_py) c.prior.allow_nonstandard_py = true;
  finalize_config(c);
  return c;
}

void ensure_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec || !fs::is_directory(d)) throw IoError("cannot create output directory '" + d.string() + "'");
}

void write_json(const fs::path& path, const nlohmann::json& j) { csv::write_atomic(path, j.dump(2) + "\n"); }

nlohmann::json config_echo(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : c.echo()) j[k] = v;
  return j;
}

std::string icl_table(const std::vector<ICLRecord>& recs) {
  std::string out = "d,icl,H_hat\n";
  for (const auto& r : recs) {
    out += csv::format_double(r.d) + ",";
    out += r.error ? std::string("NA") : csv::format_double(r.icl);
    out += "," + std::to_string(r.H_hat) + "\n";
  }
  return out;
}

std::string matrix_csv(const Matrix& m, const std::string& prefix) {
  std::string out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out += (c ? "," : "") + prefix + std::to_string(c + 1);
  out += "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out += (c ? "," : "") + csv::format_double(m(r, c));
    out += "\n";
  }
  return out;
}

struct Prepared {
  ExpressionMatrix X;
  AdjacencyGraph graph;
};

Prepared prepare(const RunConfig& c) {
  if (c.expression.empty()) throw ConfigError("io.expression is required");
  if (c.coords.empty()) throw ConfigError("io.coords is required");
  auto X = read_expression(c.expression);
  auto coords = read_coords(c.coords, X.spot_ids);
  if (c.ingest.normalize) X = log_normalize(X);
  if (c.ingest.n_hvg) X = select_hvg(X, *c.ingest.n_hvg);
  if (X.genes() <= c.hyper.q) throw ConfigError("hyper.q must be smaller than the gene count");
  auto graph = build_graph(coords, c.ingest.neighbor_rule);
  return {std::move(X), std::move(graph)};
}

/// Concatenates the kept iterations of several chains.
ChainTrace pool(const std::vector<ChainTrace>& traces) {
  ChainTrace all;
  for (const auto& t : traces) all.iterations.insert(all.iterations.end(), t.iterations.begin(), t.iterations.end());
  all.check();
  return all;
}

/// Writes PPM and MAP labels, H_hat and chain agreement from traces.
nlohmann::json write_summaries(const std::vector<ChainTrace>& traces, const std::vector<std::string>& spot_ids,
                               const fs::path& out) {
  const auto pooled = pool(traces);
  if (pooled.spots() != spot_ids.size()) throw ConfigError("trace length differs from the spot count");
  const auto ppm = compute_ppm(pooled);
  const auto est = ppm_point_estimate(pooled, ppm);
  const auto map = map_estimate(pooled);
  csv::write_atomic(out / "labels_ppm.csv", format_labels(est.partition.z, spot_ids));
  csv::write_atomic(out / "labels_map.csv", format_labels(map.partition.z, spot_ids));

  nlohmann::json s;
  s["n_spots"] = spot_ids.size();
  s["n_chains"] = traces.size();
  s["kept_iterations"] = pooled.iterations.size();
  s["H_hat"] = est.partition.clusters();
  s["H_map"] = map.partition.clusters();
  s["ppm_loss"] = est.value;
  s["map_log_score"] = map.value;
  if (traces.size() >= 2) {
    const auto agree = chain_agreement(traces);
    csv::write_atomic(out / "chain_agreement.csv", matrix_csv(agree, "chain"));
    double lo = 1.0, hi = -1.0;
    for (Eigen::Index a = 0; a < agree.rows(); ++a)
      for (Eigen::Index b = a + 1; b < agree.cols(); ++b) {
        lo = std::min(lo, agree(a, b));
        hi = std::max(hi, agree(a, b));
      }
    s["chain_agreement_min"] = lo;
    s["chain_agreement_max"] = hi;
  }
  return s;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& c) {
  ensure_dir(c.out);
  for (int r = 0; r < c.sim_replicates; ++r) {
    SimConfig sc = c.sim;
    fs::path dir = c.out;
    if (c.sim_replicates > 1) {
      sc.seed = derive_seed(c.seed, 1, static_cast<std::uint64_t>(r));
      dir /= "rep" + std::to_string(r + 1);
      ensure_dir(dir);
    }
    const auto d = generate_dataset(sc);
    write_expression(dir / "expression.csv", d.X);
    csv::write_atomic(dir / "coords.csv", format_coords(d.coords, d.X.spot_ids));
    csv::write_atomic(dir / "truth.csv", format_labels(d.truth, d.X.spot_ids));
    const auto H = static_cast<int>(cluster_count(d.truth));
    if (H < sc.H0) std::cerr << dir.string() << ": Potts pattern kept " << H << " of " << sc.H0 << " states\n";

    nlohmann::json p;
    p["seed"] = sc.seed;
    p["lattice"] = sc.lattice.kind == LatticeKind::Square ? "square" : "triangle";
    p["m"] = sc.lattice.m;
    p["n"] = d.X.spots();
    p["p"] = sc.p;
    p["q"] = sc.q;
    p["H0"] = sc.H0;
    p["H_truth"] = H;
    p["potts_d"] = sc.potts_d;
    p["potts_sweeps"] = sc.potts_sweeps;
    const auto [s, cs] = sc.signal_scales();
    p["mu_scale"] = s;
    p["sigma_scale"] = cs;
    p["mu"] = detail::matrix_to_json(d.mu);
    p["Sigma"] = detail::matrix_to_json(d.sigma);
    p["lambda"] = std::vector<double>(d.lambda.data(), d.lambda.data() + d.lambda.size());
    write_json(dir / "params.json", p);
  }
  return 0;
}

int cmd_fit(RunConfig c) {
  auto [X, graph] = prepare(c);
  ensure_dir(c.out);
  const auto k = static_cast<std::size_t>(c.n_chains);
  std::vector<ChainTrace> traces(k);

  auto run = [&](std::size_t chain) {
    SamplerConfig sc = c.sampler;
    sc.seed = derive_seed(c.seed, 2, chain);
    try {
      return run_chain(X, graph, c.prior, c.hyper, sc);
    } catch (const NumericalError& e) {
      throw NumericalError("chain " + std::to_string(chain + 1) + ": " + e.what());
    }
  };
  const auto w = static_cast<std::size_t>(c.threads);
  for (std::size_t start = 0; start < k; start += w) {
    std::vector<std::future<ChainTrace>> batch;
    for (std::size_t ch = start; ch < std::min(k, start + w); ++ch)
      batch.push_back(std::async(w > 1 ? std::launch::async : std::launch::deferred, run, ch));
    for (std::size_t b = 0; b < batch.size(); ++b) traces[start + b] = batch[b].get();
  }

  std::string icl = "chain,d,icl,H_hat\n";
  for (std::size_t ch = 0; ch < k; ++ch) {
    const auto& t = traces[ch];
    const auto tag = std::to_string(ch + 1);
    csv::write_atomic(c.out / ("trace_chain" + tag + ".jsonl"), format_trace(t));
    write_json(c.out / ("state_chain" + tag + ".json"), to_json(*t.final_state));
    icl += tag + "," + csv::format_double(c.prior.mrf_d) + "," +
           csv::format_double(compute_icl(*t.final_state, X, graph, c.prior)) + "," +
           std::to_string(t.final_state->partition.clusters()) + "\n";
  }
  csv::write_atomic(c.out / "icl.csv", icl);

  auto summary = write_summaries(traces, X.spot_ids, c.out);
  write_json(c.out / "summary.json", summary);

  nlohmann::json m;
  m["command"] = "fit";
  m["version"] = kVersion;
  m["seed"] = c.seed;
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t ch = 0; ch < k; ++ch) seeds.push_back(derive_seed(c.seed, 2, ch));
  m["chain_seeds"] = seeds;
  m["config"] = config_echo(c);
  m["n_spots"] = X.spots();
  m["n_genes"] = X.genes();
  m["n_edges"] = graph.edge_count();
  write_json(c.out / "manifest.json", m);
  std::cout << "H_hat " << summary["H_hat"].get<int>() << "\n";
  return 0;
}

int cmd_select_d(const RunConfig& c) {
  auto [X, graph] = prepare(c);
  ensure_dir(c.out);
  SamplerConfig sc = c.sampler;
  sc.seed = derive_seed(c.seed, 3);
  const auto sel = select_d(X, graph, c.prior, c.hyper, sc, c.d_grid, c.threads, c.keep_grid_traces);
  csv::write_atomic(c.out / "icl.csv", icl_table(sel.records));
  csv::write_atomic(c.out / "best_d.txt", csv::format_double(sel.best_d) + "\n");
  if (c.keep_grid_traces)
    for (const auto& r : sel.records)
      if (r.trace) {
        const auto dir = c.out / ("d_" + csv::format_double(r.d));
        ensure_dir(dir);
        csv::write_atomic(dir / "trace.jsonl", format_trace(*r.trace));
        auto s = write_summaries({*r.trace}, X.spot_ids, dir);
        write_json(dir / "summary.json", s);
      }

  nlohmann::json m;
  m["command"] = "select-d";
  m["version"] = kVersion;
  m["seed"] = c.seed;
  m["chain_seed"] = sc.seed;
  m["config"] = config_echo(c);
  write_json(c.out / "manifest.json", m);
  std::cout << "best_d " << csv::format_double(sel.best_d) << "\n";
  return 0;
}

int cmd_summarize(const RunConfig& c) {
  if (c.traces.empty()) throw ConfigError("io.traces is required");
  if (c.expression.empty()) throw ConfigError("io.expression is required (spot ids)");
  auto t = csv::read_table(c.expression);
  if (t.header.size() < 2) throw IoError(c.expression.string() + ": header must name spots");
  std::vector<std::string> spots(t.header.begin() + 1, t.header.end());
  std::vector<ChainTrace> traces;
  for (const auto& p : c.traces) traces.push_back(read_trace(p));
  ensure_dir(c.out);
  auto s = write_summaries(traces, spots, c.out);
  write_json(c.out / "summary.json", s);
  std::cout << "H_hat " << s["H_hat"].get<int>() << "\n";
  return 0;
}

int cmd_ari(const std::string& truth_path, const std::string& est_path) {
  auto [ids, truth] = read_labels(truth_path);
  auto est = read_labels(est_path, ids);
  std::printf("%.6f\n", ari(truth, est));
  return 0;
}

/// Random nonsingular M with condition number below the configured cap.
Matrix random_transform(int q, double max_cond, Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Matrix M(q, q);
    for (int r = 0; r < q; ++r) M.row(r) = rng.normal_vector(q).transpose();
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto sv = svd.singularValues();
    if (sv(q - 1) > 0 && sv(0) / sv(q - 1) < max_cond) return M;
  }
  throw NumericalError("could not draw a well-conditioned transform");
}

int cmd_check_identifiability(const RunConfig& c) {
  const auto& id = c.ident;
  Rng rng(derive_seed(c.seed, 4));
  Matrix Y0(id.q, id.n);
  for (int i = 0; i < id.n; ++i) Y0.col(i) = rng.normal_vector(id.q);
  std::vector<PartitionState> parts;
  for (int k = 0; k < id.partitions; ++k) {
    const auto H = 1 + rng.uniform_index(4);
    std::vector<int> z(static_cast<std::size_t>(id.n));
    for (auto& l : z) l = static_cast<int>(rng.uniform_index(H));
    parts.emplace_back(std::move(z));
  }
  double worst = 0.0;
  for (int t = 0; t < id.transforms; ++t)
    worst = std::max(worst, invariance_check(Y0, random_transform(id.q, id.max_condition, rng), parts, id.tau, id.form));
  std::printf("%.3e\n", worst);
  if (worst > id.tolerance) {
    std::cerr << "deviation " << worst << " exceeds tolerance " << id.tolerance << "\n";
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial clustering with MRF-constrained nonparametric mixtures of factor analysers"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "Config file (key = value or JSON)")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Starting settings: real, sim-desk or sim-full");
  app.add_option("--seed", g.seed, "Root seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Concurrent chains or grid points")->check(CLI::PositiveNumber);
  app.add_flag("--allow-nonstandard-py", g.allow_nonstandard_py, "Permit PY parameters outside the standard ranges");

  std::string expr, coords;
  std::vector<std::string> traces;
  auto add_io = [&](CLI::App* sub) {
    sub->add_option("--expression", expr, "Expression CSV (overrides io.expression)");
    sub->add_option("--coords", coords, "Coordinates CSV (overrides io.coords)");
  };
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic lattice dataset");
  auto* fit = app.add_subcommand("fit", "Run chains and write point estimates");
  add_io(fit);
  auto* sel = app.add_subcommand("select-d", "Choose the MRF strength d by ICL over a grid");
  add_io(sel);
  auto* sum = app.add_subcommand("summarize", "Summaries from saved trace files");
  sum->add_option("--expression", expr, "Expression CSV providing spot ids");
  sum->add_option("traces", traces, "Trace files (overrides io.traces)");
  std::string truth_path, est_path;
  auto* ari_cmd = app.add_subcommand("ari", "Adjusted Rand index between two label files");
  ari_cmd->add_option("truth", truth_path, "Reference labels (spot_id,label)")->required();
  ari_cmd->add_option("estimate", est_path, "Estimated labels (spot_id,label)")->required();
  auto* ident = app.add_subcommand("check-identifiability", "Invariance of partition scores under linear maps");

  for (auto* s : {sim, fit, sel, sum, ari_cmd, ident}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (ari_cmd->parsed()) return cmd_ari(truth_path, est_path);
    auto c = resolve(g);
    if (!expr.empty()) c.expression = expr;
    if (!coords.empty()) c.coords = coords;
    if (!traces.empty()) c.traces.assign(traces.begin(), traces.end());
    if (sim->parsed()) return cmd_simulate(c);
    if (fit->parsed()) return cmd_fit(c);
    if (sel->parsed()) return cmd_select_d(c);
    if (sum->parsed()) return cmd_summarize(c);
    if (ident->parsed()) return cmd_check_identifiability(c);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

// Run configuration for the command-line tool.
//
// Two interchangeable file formats are accepted. Flat text, one setting per
// line with dotted namespaces:
//
//   # comment
//   prior.family = MFM
//   prior.d = 1.0
//   run.d_grid = 0, 0.5, 1, 1.5
//
// or a JSON object whose nesting mirrors the dots ({"prior": {"d": 1.0}}).
// Unknown keys are rejected.

#include "bnpmfa/core.hpp"
#include "bnpmfa/identifiability.hpp"
#include "bnpmfa/ingest.hpp"
#include "bnpmfa/sampler.hpp"
#include "bnpmfa/simulate.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace bnpmfa {

struct IdentConfig {
  int q = 3;
  int n = 20;
  int partitions = 10;
  int transforms = 20;
  double max_condition = 100.0;
  double tau = 1.0;
  double tolerance = 1e-8;
  ScatterCoefficient form = ScatterCoefficient::Printed;
};

struct RunConfig {
  PriorConfig prior;
  HyperParams hyper;
  SamplerConfig sampler;
  IngestConfig ingest;
  std::string neighbor_rule_name = "square4";
  double neighbor_c0 = 1.5;
  std::size_t neighbor_k = 6;
  SimConfig sim;
  int sim_replicates = 1;
  IdentConfig ident;

  std::uint64_t seed = 1;
  int n_chains = 1;
  int threads = 1;
  std::vector<double> d_grid{0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5};
  bool keep_grid_traces = false;

  std::filesystem::path expression;
  std::filesystem::path coords;
  std::vector<std::filesystem::path> traces;
  std::filesystem::path out = ".";

  /// Every setting as key = value, in a fixed order. Used for the manifest.
  [[nodiscard]] std::vector<std::pair<std::string, std::string>> echo() const;

  void validate() const {
    prior.validate();
    hyper.validate();
    sampler.validate();
    if (n_chains < 1) throw ConfigError("run.n_chains must be >= 1");
    if (threads < 1) throw ConfigError("run.threads must be >= 1");
    if (d_grid.empty()) throw ConfigError("run.d_grid must not be empty");
    for (double d : d_grid)
      if (!(d >= 0) || !std::isfinite(d)) throw ConfigError("run.d_grid entries must be finite and >= 0");
    if (neighbor_c0 <= 0) throw ConfigError("ingest.c0 must be > 0");
    if (neighbor_k < 1) throw ConfigError("ingest.k must be >= 1");
    if (sim_replicates < 1) throw ConfigError("sim.replicates must be >= 1");
    if (ident.q < 1 || ident.n <= ident.q) throw ConfigError("ident.n must exceed ident.q >= 1");
    if (ident.partitions < 2) throw ConfigError("ident.partitions must be >= 2");
    if (ident.transforms < 1) throw ConfigError("ident.transforms must be >= 1");
    if (!(ident.max_condition > 1)) throw ConfigError("ident.max_condition must be > 1");
    if (!(ident.tau > 0)) throw ConfigError("ident.tau must be > 0");
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

inline double to_real(const std::string& key, const std::string& v) {
  auto d = csv::parse_double(v);
  if (!d) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return *d;
}

template <class Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto s = trim(v);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (const auto& f : csv::split_line(v)) out.push_back(trim(f));
  return out;
}

inline std::vector<double> to_reals(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& f : to_list(v)) out.push_back(to_real(key, f));
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + csv::format_double(v[i]);
  return s;
}

inline void flatten(const nlohmann::json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    return;
  }
  if (j.is_array()) {
    std::string s;
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) s += ",";
      s += j[i].is_string() ? j[i].get<std::string>() : j[i].dump();
    }
    out[prefix] = s;
    return;
  }
  out[prefix] = j.is_string() ? j.get<std::string>() : j.dump();
}

}  // namespace config_detail

/// Parses the flat text form (or JSON when the text starts with `{`) into
/// an ordered key -> value map.
inline std::vector<std::pair<std::string, std::string>> parse_settings(const std::string& text,
                                                                       const std::string& origin = "config") {
  using namespace config_detail;
  std::vector<std::pair<std::string, std::string>> out;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(origin + ": invalid JSON: " + e.what());
    }
    std::map<std::string, std::string> flat;
    flatten(j, "", flat);
    out.assign(flat.begin(), flat.end());
    return out;
  }
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ": line " + std::to_string(lineno) + ": expected key = value");
    auto key = trim(std::string_view(body).substr(0, eq));
    auto value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ": line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// Applies one setting. Throws ConfigError naming the key on any problem.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& v) {
  using namespace config_detail;
  using Setter = std::function<void(RunConfig&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"prior.family", [](RunConfig& c, const std::string& v) { c.prior.family = parse_family(v); }},
      {"prior.beta", [](RunConfig& c, const std::string& v) { c.prior.beta = to_real("prior.beta", v); }},
      {"prior.delta", [](RunConfig& c, const std::string& v) { c.prior.delta = to_real("prior.delta", v); }},
      {"prior.mfm_lambda",
       [](RunConfig& c, const std::string& v) { c.prior.mfm_component_prior.poisson_lambda = to_real("prior.mfm_lambda", v); }},
      {"prior.mfm_pmf",
       [](RunConfig& c, const std::string& v) { c.prior.mfm_component_prior.pmf = to_reals("prior.mfm_pmf", v); }},
      {"prior.d", [](RunConfig& c, const std::string& v) { c.prior.mrf_d = to_real("prior.d", v); }},
      {"prior.g", [](RunConfig& c, const std::string& v) { c.prior.mrf_g = to_real("prior.g", v); }},
      {"prior.g_overrides",
       [](RunConfig& c, const std::string& v) { c.prior.mrf_g_overrides = to_reals("prior.g_overrides", v); }},
      {"prior.allow_nonstandard_py",
       [](RunConfig& c, const std::string& v) { c.prior.allow_nonstandard_py = to_bool("prior.allow_nonstandard_py", v); }},

      {"hyper.tau_w", [](RunConfig& c, const std::string& v) { c.hyper.tau_w = to_real("hyper.tau_w", v); }},
      {"hyper.tau_mu", [](RunConfig& c, const std::string& v) { c.hyper.tau_mu = to_real("hyper.tau_mu", v); }},
      {"hyper.a", [](RunConfig& c, const std::string& v) { c.hyper.a = to_real("hyper.a", v); }},
      {"hyper.b", [](RunConfig& c, const std::string& v) { c.hyper.b = to_real("hyper.b", v); }},
      {"hyper.q", [](RunConfig& c, const std::string& v) { c.hyper.q = to_int<int>("hyper.q", v); }},

      {"sampler.iterations",
       [](RunConfig& c, const std::string& v) { c.sampler.iterations = to_int<long>("sampler.iterations", v); }},
      {"sampler.burn_in", [](RunConfig& c, const std::string& v) { c.sampler.burn_in = to_int<long>("sampler.burn_in", v); }},
      {"sampler.thin", [](RunConfig& c, const std::string& v) { c.sampler.thin = to_int<long>("sampler.thin", v); }},
      {"sampler.init", [](RunConfig& c, const std::string& v) { c.sampler.init = parse_init(v); }},
      {"sampler.init_clusters",
       [](RunConfig& c, const std::string& v) { c.sampler.init_clusters = to_int<int>("sampler.init_clusters", v); }},
      {"sampler.parallel_width",
       [](RunConfig& c, const std::string& v) { c.sampler.parallel_width = to_int<int>("sampler.parallel_width", v); }},
      {"sampler.random_scan",
       [](RunConfig& c, const std::string& v) { c.sampler.random_scan = to_bool("sampler.random_scan", v); }},

      {"ingest.normalize", [](RunConfig& c, const std::string& v) { c.ingest.normalize = to_bool("ingest.normalize", v); }},
      {"ingest.n_hvg",
       [](RunConfig& c, const std::string& v) {
         if (v.empty() || v == "none") c.ingest.n_hvg.reset();
         else c.ingest.n_hvg = to_int<std::size_t>("ingest.n_hvg", v);
       }},
      {"ingest.neighbor_rule", [](RunConfig& c, const std::string& v) { c.neighbor_rule_name = v; }},
      {"ingest.c0", [](RunConfig& c, const std::string& v) { c.neighbor_c0 = to_real("ingest.c0", v); }},
      {"ingest.k", [](RunConfig& c, const std::string& v) { c.neighbor_k = to_int<std::size_t>("ingest.k", v); }},

      {"sim.lattice",
       [](RunConfig& c, const std::string& v) {
         if (v == "square") c.sim.lattice.kind = LatticeKind::Square;
         else if (v == "triangle") c.sim.lattice.kind = LatticeKind::Triangle;
         else throw ConfigError("sim.lattice: expected square or triangle, got '" + v + "'");
       }},
      {"sim.m", [](RunConfig& c, const std::string& v) { c.sim.lattice.m = to_int<int>("sim.m", v); }},
      {"sim.H0", [](RunConfig& c, const std::string& v) { c.sim.H0 = to_int<int>("sim.H0", v); }},
      {"sim.potts_d", [](RunConfig& c, const std::string& v) { c.sim.potts_d = to_real("sim.potts_d", v); }},
      {"sim.potts_sweeps", [](RunConfig& c, const std::string& v) { c.sim.potts_sweeps = to_int<int>("sim.potts_sweeps", v); }},
      {"sim.p", [](RunConfig& c, const std::string& v) { c.sim.p = to_int<int>("sim.p", v); }},
      {"sim.q", [](RunConfig& c, const std::string& v) { c.sim.q = to_int<int>("sim.q", v); }},
      {"sim.signal",
       [](RunConfig& c, const std::string& v) {
         if (v == "strong") c.sim.signal = SignalKind::Strong;
         else if (v == "weak") c.sim.signal = SignalKind::Weak;
         else if (v == "custom") c.sim.signal = SignalKind::Custom;
         else throw ConfigError("sim.signal: expected strong, weak or custom, got '" + v + "'");
       }},
      {"sim.mu_scale", [](RunConfig& c, const std::string& v) { c.sim.mu_scale = to_real("sim.mu_scale", v); }},
      {"sim.sigma_scale", [](RunConfig& c, const std::string& v) { c.sim.sigma_scale = to_real("sim.sigma_scale", v); }},
      {"sim.replicates", [](RunConfig& c, const std::string& v) { c.sim_replicates = to_int<int>("sim.replicates", v); }},

      {"ident.q", [](RunConfig& c, const std::string& v) { c.ident.q = to_int<int>("ident.q", v); }},
      {"ident.n", [](RunConfig& c, const std::string& v) { c.ident.n = to_int<int>("ident.n", v); }},
      {"ident.partitions", [](RunConfig& c, const std::string& v) { c.ident.partitions = to_int<int>("ident.partitions", v); }},
      {"ident.transforms", [](RunConfig& c, const std::string& v) { c.ident.transforms = to_int<int>("ident.transforms", v); }},
      {"ident.max_condition",
       [](RunConfig& c, const std::string& v) { c.ident.max_condition = to_real("ident.max_condition", v); }},
      {"ident.tau", [](RunConfig& c, const std::string& v) { c.ident.tau = to_real("ident.tau", v); }},
      {"ident.tolerance", [](RunConfig& c, const std::string& v) { c.ident.tolerance = to_real("ident.tolerance", v); }},
      {"ident.coefficient",
       [](RunConfig& c, const std::string& v) {
         if (v == "printed") c.ident.form = ScatterCoefficient::Printed;
         else if (v == "integrated") c.ident.form = ScatterCoefficient::Integrated;
         else throw ConfigError("ident.coefficient: expected printed or integrated, got '" + v + "'");
       }},

      {"run.seed", [](RunConfig& c, const std::string& v) { c.seed = to_int<std::uint64_t>("run.seed", v); }},
      {"run.n_chains", [](RunConfig& c, const std::string& v) { c.n_chains = to_int<int>("run.n_chains", v); }},
      {"run.threads", [](RunConfig& c, const std::string& v) { c.threads = to_int<int>("run.threads", v); }},
      {"run.d_grid", [](RunConfig& c, const std::string& v) { c.d_grid = to_reals("run.d_grid", v); }},
      {"run.keep_grid_traces",
       [](RunConfig& c, const std::string& v) { c.keep_grid_traces = to_bool("run.keep_grid_traces", v); }},
      {"run.out", [](RunConfig& c, const std::string& v) { c.out = v; }},

      {"io.expression", [](RunConfig& c, const std::string& v) { c.expression = v; }},
      {"io.coords", [](RunConfig& c, const std::string& v) { c.coords = v; }},
      {"io.traces",
       [](RunConfig& c, const std::string& v) {
         c.traces.clear();
         for (const auto& t : to_list(v)) c.traces.emplace_back(t);
       }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(c, trim(v));
}

/// Named starting points. `real` matches the settings used for measured
/// tissue sections: 15 factors on the 2000 most variable log-normalised genes.
inline void apply_preset(RunConfig& c, const std::string& name) {
  if (name == "real") {
    c.hyper.q = 15;
    c.ingest.normalize = true;
    c.ingest.n_hvg = 2000;
  } else if (name == "sim-desk") {
    c.sim.lattice.m = 20;
    c.sim.p = 200;
    c.sim.q = 5;
    c.sim.potts_d = 2.0;
    c.sim.potts_sweeps = 10;
    c.hyper.q = 5;
    c.d_grid = {0, 0.5, 1, 1.5};
  } else if (name == "sim-full") {
    c.sim.lattice.m = 40;
    c.sim.p = 2000;
    c.sim.q = 10;
    c.hyper.q = 10;
  } else {
    throw ConfigError("--preset: unknown preset '" + name + "' (expected real, sim-desk or sim-full)");
  }
}

/// Resolves the neighbour rule from its name and parameters.
inline void finalize_config(RunConfig& c) {
  c.ingest.neighbor_rule = parse_neighbor_rule(c.neighbor_rule_name, c.neighbor_c0, c.neighbor_k);
  c.sampler.seed = c.seed;
  c.sim.seed = c.seed;
  c.validate();
}

/// Reads a config file. Relative io.* paths resolve against the file's
/// directory.
inline RunConfig load_config(const std::filesystem::path& path, RunConfig c = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  for (const auto& [k, v] : parse_settings(ss.str(), path.string())) apply_setting(c, k, v);
  const auto base = path.parent_path();
  auto resolve = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  resolve(c.expression);
  resolve(c.coords);
  for (auto& t : c.traces) resolve(t);
  return c;
}

inline std::vector<std::pair<std::string, std::string>> RunConfig::echo() const {
  using config_detail::join;
  auto f = [](double v) { return csv::format_double(v); };
  std::vector<std::pair<std::string, std::string>> e = {
      {"prior.family", to_string(prior.family)},
      {"prior.beta", f(prior.beta)},
      {"prior.delta", f(prior.delta)},
      {"prior.mfm_lambda", f(prior.mfm_component_prior.poisson_lambda)},
      {"prior.mfm_pmf", join(prior.mfm_component_prior.pmf)},
      {"prior.d", f(prior.mrf_d)},
      {"prior.g", f(prior.mrf_g)},
      {"prior.g_overrides", join(prior.mrf_g_overrides)},
      {"prior.allow_nonstandard_py", prior.allow_nonstandard_py ? "true" : "false"},
      {"hyper.tau_w", f(hyper.tau_w)},
      {"hyper.tau_mu", f(hyper.tau_mu)},
      {"hyper.a", f(hyper.a)},
      {"hyper.b", f(hyper.b)},
      {"hyper.q", std::to_string(hyper.q)},
      {"sampler.iterations", std::to_string(sampler.iterations)},
      {"sampler.burn_in", std::to_string(sampler.burn_in)},
      {"sampler.thin", std::to_string(sampler.thin)},
      {"sampler.init", sampler.init == InitKind::Kmeans ? "kmeans" : sampler.init == InitKind::Random ? "random" : "single"},
      {"sampler.init_clusters", std::to_string(sampler.init_clusters)},
      {"sampler.random_scan", sampler.random_scan ? "true" : "false"},
      {"ingest.normalize", ingest.normalize ? "true" : "false"},
      {"ingest.n_hvg", ingest.n_hvg ? std::to_string(*ingest.n_hvg) : "none"},
      {"ingest.neighbor_rule", neighbor_rule_name},
      {"ingest.c0", f(neighbor_c0)},
      {"ingest.k", std::to_string(neighbor_k)},
      {"run.seed", std::to_string(seed)},
      {"run.n_chains", std::to_string(n_chains)},
      {"run.d_grid", join(d_grid)},
  };
  return e;
}

}  // namespace bnpmfa

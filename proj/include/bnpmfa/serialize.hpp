#pragma once

// JSON encodings of chain states and trace checkpoints.
//
// Trace checkpoint files hold one JSON object per kept iteration, one per
// line:
//
//   {"iteration":1201,"H":3,"z":"1,1,2,3,...","log_score":-123456.78901234}
//
// `z` lists 1-based labels in spot order. `log_score` is written with the
// shortest decimal form that reads back to the identical double.

#include "bnpmfa/core.hpp"
#include "bnpmfa/ingest.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

namespace bnpmfa {

using json = nlohmann::json;

namespace detail {

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Matrix matrix_from_json(const json& j) {
  Matrix m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& data = j.at("data");
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data.at(r).at(c).get<double>();
  return m;
}

}  // namespace detail

inline json to_json(const ChainState& s) {
  json j;
  j["z"] = s.partition.z;
  j["Y"] = detail::matrix_to_json(s.factors.Y);
  j["W"] = detail::matrix_to_json(s.params.W);
  j["lambda"] = std::vector<double>(s.params.lambda.data(), s.params.lambda.data() + s.params.lambda.size());
  j["mu"] = detail::matrix_to_json(s.params.mu);
  j["Sigma"] = detail::matrix_to_json(s.params.sigma.value());
  return j;
}

inline ChainState chain_state_from_json(const json& j) {
  ChainState s;
  s.partition = PartitionState(j.at("z").get<std::vector<int>>());
  s.factors.Y = detail::matrix_from_json(j.at("Y"));
  s.params.W = detail::matrix_from_json(j.at("W"));
  auto lambda = j.at("lambda").get<std::vector<double>>();
  s.params.lambda = Eigen::Map<Vector>(lambda.data(), static_cast<Eigen::Index>(lambda.size()));
  s.params.mu = detail::matrix_from_json(j.at("mu"));
  s.params.sigma.assign(detail::matrix_from_json(j.at("Sigma")));
  return s;
}

inline std::string format_trace_record(const TraceRecord& r) {
  std::string z;
  for (std::size_t i = 0; i < r.z.size(); ++i) {
    if (i) z += ',';
    z += std::to_string(r.z[i] + 1);
  }
  return "{\"iteration\":" + std::to_string(r.iteration) + ",\"H\":" + std::to_string(r.H) + ",\"z\":\"" + z +
         "\",\"log_score\":" + csv::format_double(r.log_score) + "}";
}

inline TraceRecord parse_trace_record(const std::string& line) {
  const auto j = json::parse(line);
  TraceRecord r;
  r.iteration = j.at("iteration").get<long>();
  r.H = j.at("H").get<int>();
  r.log_score = j.at("log_score").get<double>();
  for (const auto& field : csv::split_line(j.at("z").get<std::string>())) {
    auto v = csv::parse_double(field);
    if (!v || *v < 1 || *v != std::floor(*v)) throw IoError("trace record has a bad label '" + field + "'");
    r.z.push_back(static_cast<int>(*v) - 1);
  }
  return r;
}

inline std::string format_trace(const ChainTrace& t) {
  std::string out;
  for (const auto& r : t.iterations) out += format_trace_record(r) + "\n";
  return out;
}

inline ChainTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace '" + path.string() + "'");
  ChainTrace t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      t.iterations.push_back(parse_trace_record(line));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (t.iterations.empty()) throw IoError(path.string() + ": trace has no records");
  t.check();
  return t;
}

}  // namespace bnpmfa

#pragma once

// Reading and writing the CSV tables, preprocessing of the expression
// matrix, and construction of the spot adjacency graph.

#include "bnpmfa/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace bnpmfa {

// ---------------------------------------------------------------------------
// CSV primitives

namespace csv {

inline std::vector<std::string> split_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_line(line);
    if (fields.size() != t.header.size())
      throw IoError(path.string() + ": row " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                    " fields, expected " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  return t;
}

/// Writes via a temporary file then renames, so readers never see a
/// partially written table.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Expression, coordinates and labels

/// Expression CSV: header `gene_id,<spot ids...>`, one gene per row.
inline ExpressionMatrix read_expression(const std::filesystem::path& path) {
  auto t = csv::read_table(path);
  if (t.header.size() < 3) throw IoError(path.string() + ": header must name at least two spots");
  std::vector<std::string> spots(t.header.begin() + 1, t.header.end());
  if (auto d = detail::first_duplicate(spots)) throw IoError(path.string() + ": duplicate spot id '" + *d + "'");
  if (t.rows.empty()) throw IoError(path.string() + ": no gene rows");

  const auto p = static_cast<Eigen::Index>(t.rows.size());
  const auto n = static_cast<Eigen::Index>(spots.size());
  Matrix values(p, n);
  std::vector<std::string> genes;
  genes.reserve(t.rows.size());
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& row = t.rows[j];
    genes.push_back(row[0]);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto v = csv::parse_double(row[i + 1]);
      if (!v || !std::isfinite(*v))
        throw IoError(path.string() + ": non-numeric value '" + row[i + 1] + "' at row " + std::to_string(j + 2) +
                      ", column " + std::to_string(i + 2));
      values(j, i) = *v;
    }
  }
  if (auto d = detail::first_duplicate(genes)) throw IoError(path.string() + ": duplicate gene id '" + *d + "'");
  return ExpressionMatrix(std::move(values), std::move(genes), std::move(spots));
}

inline std::string format_expression(const ExpressionMatrix& X) {
  std::string out = "gene_id";
  for (const auto& s : X.spot_ids) out += "," + s;
  out += "\n";
  for (Eigen::Index j = 0; j < X.genes(); ++j) {
    out += X.gene_ids[j];
    for (Eigen::Index i = 0; i < X.spots(); ++i) {
      out += ',';
      out += csv::format_double(X.values(j, i));
    }
    out += '\n';
  }
  return out;
}

inline void write_expression(const std::filesystem::path& path, const ExpressionMatrix& X) {
  csv::write_atomic(path, format_expression(X));
}

namespace detail {

inline std::unordered_map<std::string, std::size_t> index_of(const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < ids.size(); ++i) idx.emplace(ids[i], i);
  return idx;
}

/// Reports ids present on one side only.
inline void require_same_ids(const std::vector<std::string>& expected, const std::vector<std::string>& got,
                             const std::string& what) {
  auto have = index_of(got);
  auto want = index_of(expected);
  std::vector<std::string> missing, extra;
  for (const auto& id : expected)
    if (!have.count(id)) missing.push_back(id);
  for (const auto& id : got)
    if (!want.count(id)) extra.push_back(id);
  if (missing.empty() && extra.empty()) return;
  std::string msg = what + ": spot id mismatch";
  auto list = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size() && k < 10; ++k) s += (k ? ", " : "") + v[k];
    if (v.size() > 10) s += ", ...";
    return s;
  };
  if (!missing.empty()) msg += "; missing: " + list(missing);
  if (!extra.empty()) msg += "; unexpected: " + list(extra);
  throw IoError(msg);
}

}  // namespace detail

/// Coordinates CSV `spot_id,x,y`, joined by id onto `spot_order`.
inline SpatialCoords read_coords(const std::filesystem::path& path, const std::vector<std::string>& spot_order) {
  auto t = csv::read_table(path);
  if (t.header.size() != 3) throw IoError(path.string() + ": expected header spot_id,x,y");
  std::vector<std::string> ids;
  for (const auto& r : t.rows) ids.push_back(r[0]);
  if (auto d = detail::first_duplicate(ids)) throw IoError(path.string() + ": duplicate spot id '" + *d + "'");
  detail::require_same_ids(spot_order, ids, path.string());

  auto pos = detail::index_of(spot_order);
  SpatialCoords c;
  c.coords.resize(static_cast<Eigen::Index>(spot_order.size()), 2);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto row_index = static_cast<Eigen::Index>(pos.at(t.rows[r][0]));
    for (int k = 0; k < 2; ++k) {
      auto v = csv::parse_double(t.rows[r][k + 1]);
      if (!v || !std::isfinite(*v))
        throw IoError(path.string() + ": non-numeric coordinate '" + t.rows[r][k + 1] + "' for spot '" +
                      t.rows[r][0] + "'");
      c.coords(row_index, k) = *v;
    }
  }
  return c;
}

inline std::string format_coords(const SpatialCoords& c, const std::vector<std::string>& spot_ids) {
  std::string out = "spot_id,x,y\n";
  for (Eigen::Index i = 0; i < c.size(); ++i)
    out += spot_ids[i] + "," + csv::format_double(c.coords(i, 0)) + "," + csv::format_double(c.coords(i, 1)) + "\n";
  return out;
}

/// Labels CSV `spot_id,label`, joined by id onto `spot_order`. Labels are
/// kept as strings.
inline std::vector<std::string> read_labels(const std::filesystem::path& path,
                                            const std::vector<std::string>& spot_order) {
  auto t = csv::read_table(path);
  if (t.header.size() != 2) throw IoError(path.string() + ": expected header spot_id,label");
  std::vector<std::string> ids;
  for (const auto& r : t.rows) ids.push_back(r[0]);
  if (auto d = detail::first_duplicate(ids)) throw IoError(path.string() + ": duplicate spot id '" + *d + "'");
  detail::require_same_ids(spot_order, ids, path.string());
  auto pos = detail::index_of(spot_order);
  std::vector<std::string> labels(spot_order.size());
  for (const auto& r : t.rows) labels[pos.at(r[0])] = r[1];
  return labels;
}

/// Reads a labels file in its own row order; returns (spot ids, labels).
inline std::pair<std::vector<std::string>, std::vector<std::string>> read_labels(const std::filesystem::path& path) {
  auto t = csv::read_table(path);
  if (t.header.size() != 2) throw IoError(path.string() + ": expected header spot_id,label");
  std::vector<std::string> ids, labels;
  for (const auto& r : t.rows) {
    ids.push_back(r[0]);
    labels.push_back(r[1]);
  }
  if (auto d = detail::first_duplicate(ids)) throw IoError(path.string() + ": duplicate spot id '" + *d + "'");
  return {ids, labels};
}

/// Writes 0-based internal labels as 1-based.
inline std::string format_labels(const std::vector<int>& z, const std::vector<std::string>& spot_ids) {
  std::string out = "spot_id,label\n";
  for (std::size_t i = 0; i < z.size(); ++i) out += spot_ids[i] + "," + std::to_string(z[i] + 1) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Library-size log normalisation: x' = log(1 + x * median(s) / s_i) with
/// s_i the column sum.
inline ExpressionMatrix log_normalize(const ExpressionMatrix& X) {
  if ((X.values.array() < 0.0).any()) throw ConfigError("log_normalize: negative expression value");
  Vector s = X.values.colwise().sum().transpose();
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) == 0.0) throw ConfigError("log_normalize: spot '" + X.spot_ids[i] + "' has zero library size");
  std::vector<double> sorted(s.data(), s.data() + s.size());
  std::sort(sorted.begin(), sorted.end());
  const auto m = sorted.size();
  const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);

  ExpressionMatrix out = X;
  for (Eigen::Index i = 0; i < X.spots(); ++i) {
    const double scale = median / s(i);
    out.values.col(i) = (X.values.col(i).array() * scale).log1p();
  }
  return out;
}

/// Keeps the n_hvg rows with the largest sample variance. Ties go to the
/// earlier row; survivors keep their original order.
inline ExpressionMatrix select_hvg(const ExpressionMatrix& X, std::size_t n_hvg) {
  const auto p = static_cast<std::size_t>(X.genes());
  if (n_hvg > p) throw ConfigError("ingest.n_hvg (" + std::to_string(n_hvg) + ") exceeds gene count " + std::to_string(p));
  if (n_hvg == 0) throw ConfigError("ingest.n_hvg must be >= 1");
  const double n = static_cast<double>(X.spots());
  std::vector<double> var(p);
  for (std::size_t j = 0; j < p; ++j) {
    auto row = X.values.row(static_cast<Eigen::Index>(j));
    const double mean = row.mean();
    var[j] = (row.array() - mean).square().sum() / (n - 1.0);
  }
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
  order.resize(n_hvg);
  std::sort(order.begin(), order.end());

  Matrix values(static_cast<Eigen::Index>(n_hvg), X.spots());
  std::vector<std::string> genes;
  for (std::size_t k = 0; k < n_hvg; ++k) {
    values.row(static_cast<Eigen::Index>(k)) = X.values.row(static_cast<Eigen::Index>(order[k]));
    genes.push_back(X.gene_ids[order[k]]);
  }
  return ExpressionMatrix(std::move(values), std::move(genes), X.spot_ids);
}

// ---------------------------------------------------------------------------
// Neighbour graphs

struct Square4 {};
struct Square8 {};
/// Offset-row hexagonal lattice: row r is shifted right by half a spacing
/// when r is odd.
struct Triangle6 {};
struct Radius {
  double c0 = 1.0;
};
struct Knn {
  std::size_t k = 6;
};

using NeighborRule = std::variant<Square4, Square8, Triangle6, Radius, Knn>;

inline NeighborRule parse_neighbor_rule(const std::string& name, double c0 = 1.5, std::size_t k = 6) {
  if (name == "square4") return Square4{};
  if (name == "square8") return Square8{};
  if (name == "triangle6") return Triangle6{};
  if (name == "radius") return Radius{c0};
  if (name == "knn") return Knn{k};
  throw ConfigError("ingest.neighbor_rule: unknown rule '" + name + "'");
}

struct IngestConfig {
  bool normalize = false;
  std::optional<std::size_t> n_hvg;
  NeighborRule neighbor_rule = Square4{};
};

namespace detail {

inline std::vector<std::pair<long, long>> integer_grid(const SpatialCoords& c) {
  std::vector<std::pair<long, long>> g;
  g.reserve(static_cast<std::size_t>(c.size()));
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const double x = c.coords(i, 0), y = c.coords(i, 1);
    if (x != std::round(x) || y != std::round(y))
      throw ConfigError("lattice neighbour rules need integer coordinates (spot " + std::to_string(i + 1) + ")");
    g.emplace_back(static_cast<long>(x), static_cast<long>(y));
  }
  return g;
}

struct PairHash {
  std::size_t operator()(const std::pair<long, long>& v) const {
    return std::hash<long>()(v.first * 1000003L) ^ std::hash<long>()(v.second);
  }
};

inline AdjacencyGraph lattice_graph(const SpatialCoords& c, const std::vector<std::pair<long, long>>& offsets_even,
                                    const std::vector<std::pair<long, long>>& offsets_odd) {
  auto grid = integer_grid(c);
  std::unordered_map<std::pair<long, long>, std::size_t, PairHash> where;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (!where.emplace(grid[i], i).second) throw ConfigError("two spots share lattice position");
  AdjacencyGraph g(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto [x, y] = grid[i];
    const auto& offs = (y % 2 == 0) ? offsets_even : offsets_odd;
    for (auto [dx, dy] : offs) {
      auto it = where.find({x + dx, y + dy});
      if (it != where.end()) g.add_edge(i, it->second);
    }
  }
  g.finalize();
  return g;
}

}  // namespace detail

inline AdjacencyGraph build_graph(const SpatialCoords& c, const NeighborRule& rule) {
  if (c.size() == 0) throw ConfigError("build_graph: no coordinates");
  if (!c.coords.allFinite()) throw ConfigError("build_graph: non-finite coordinates");
  const auto n = static_cast<std::size_t>(c.size());

  return std::visit(
      [&](const auto& r) -> AdjacencyGraph {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, Square4>) {
          std::vector<std::pair<long, long>> o{{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
          return detail::lattice_graph(c, o, o);
        } else if constexpr (std::is_same_v<R, Square8>) {
          std::vector<std::pair<long, long>> o{{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
          return detail::lattice_graph(c, o, o);
        } else if constexpr (std::is_same_v<R, Triangle6>) {
          std::vector<std::pair<long, long>> even{{1, 0}, {-1, 0}, {-1, 1}, {0, 1}, {-1, -1}, {0, -1}};
          std::vector<std::pair<long, long>> odd{{1, 0}, {-1, 0}, {0, 1}, {1, 1}, {0, -1}, {1, -1}};
          return detail::lattice_graph(c, even, odd);
        } else if constexpr (std::is_same_v<R, Radius>) {
          if (!(r.c0 > 0)) throw ConfigError("ingest.c0 must be > 0");
          // Bucket spots into c0-sized cells; only adjacent cells can hold
          // neighbours.
          std::unordered_map<std::pair<long, long>, std::vector<std::size_t>, detail::PairHash> cells;
          auto cell_of = [&](std::size_t i) {
            return std::pair<long, long>{static_cast<long>(std::floor(c.coords(i, 0) / r.c0)),
                                         static_cast<long>(std::floor(c.coords(i, 1) / r.c0))};
          };
          for (std::size_t i = 0; i < n; ++i) cells[cell_of(i)].push_back(i);
          AdjacencyGraph g(n);
          for (std::size_t i = 0; i < n; ++i) {
            auto [cx, cy] = cell_of(i);
            for (long dx = -1; dx <= 1; ++dx)
              for (long dy = -1; dy <= 1; ++dy) {
                auto it = cells.find({cx + dx, cy + dy});
                if (it == cells.end()) continue;
                for (auto j : it->second) {
                  if (j <= i) continue;
                  const double ddx = c.coords(i, 0) - c.coords(j, 0);
                  const double ddy = c.coords(i, 1) - c.coords(j, 1);
                  if (std::sqrt(ddx * ddx + ddy * ddy) < r.c0)
                    g.add_edge(i, j);
                }
              }
          }
          g.finalize();
          return g;
        } else {
          if (r.k < 1) throw ConfigError("ingest.k must be >= 1");
          const std::size_t k = std::min(r.k, n - 1);
          std::vector<std::vector<std::size_t>> nearest(n);
          std::vector<std::pair<double, std::size_t>> d;
          for (std::size_t i = 0; i < n; ++i) {
            d.clear();
            for (std::size_t j = 0; j < n; ++j) {
              if (j == i) continue;
              d.emplace_back((c.coords.row(i) - c.coords.row(j)).squaredNorm(), j);
            }
            std::partial_sort(d.begin(), d.begin() + static_cast<long>(k), d.end());
            for (std::size_t m = 0; m < k; ++m) nearest[i].push_back(d[m].second);
            std::sort(nearest[i].begin(), nearest[i].end());
          }
          AdjacencyGraph g(n);
          for (std::size_t i = 0; i < n; ++i)
            for (auto j : nearest[i])
              if (i < j && std::binary_search(nearest[j].begin(), nearest[j].end(), i)) g.add_edge(i, j);
          g.finalize();
          return g;
        }
      },
      rule);
}

}  // namespace bnpmfa

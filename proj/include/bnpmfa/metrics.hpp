#pragma once

// Partition agreement against a reference labelling.

#include "bnpmfa/core.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

namespace bnpmfa {

namespace detail {

template <class T>
std::vector<std::size_t> dense_codes(std::span<const T> labels, std::size_t& k) {
  std::map<T, std::size_t> code;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(code.try_emplace(l, code.size()).first->second);
  k = code.size();
  return out;
}

inline std::uint64_t choose2(std::uint64_t x) { return x * (x - (x > 0 ? 1 : 0)) / 2; }

}  // namespace detail

/// Pair counts over all unordered spot pairs: A same/same, B same/different,
/// C different/same, D different/different (truth first).
struct PairCounts {
  std::uint64_t A = 0, B = 0, C = 0, D = 0;
};

/// ARI from pair counts:
/// (N(A+D) - [(A+B)(A+C) + (C+D)(B+D)]) / (N^2 - [(A+B)(A+C) + (C+D)(B+D)]),
/// N = A+B+C+D. Returns NaN when the denominator vanishes.
inline double ari_from_pair_counts(const PairCounts& k) {
  const double A = static_cast<double>(k.A), B = static_cast<double>(k.B);
  const double C = static_cast<double>(k.C), D = static_cast<double>(k.D);
  const double N = A + B + C + D;
  const double chance = (A + B) * (A + C) + (C + D) * (B + D);
  const double denom = N * N - chance;
  if (denom == 0.0) return NAN;
  return (N * (A + D) - chance) / denom;
}

/// Pair counts from the contingency table, O(n + K1 K2).
template <class A, class B>
PairCounts pair_counts(std::span<const A> truth, std::span<const B> est) {
  if (truth.size() != est.size()) throw ConfigError("ari: label vectors differ in length");
  std::size_t ka = 0, kb = 0;
  const auto ca = detail::dense_codes(truth, ka);
  const auto cb = detail::dense_codes(est, kb);
  std::vector<std::uint64_t> table(ka * kb, 0), rows(ka, 0), cols(kb, 0);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    ++table[ca[i] * kb + cb[i]];
    ++rows[ca[i]];
    ++cols[cb[i]];
  }
  std::uint64_t same_both = 0, same_a = 0, same_b = 0;
  for (auto v : table) same_both += detail::choose2(v);
  for (auto v : rows) same_a += detail::choose2(v);
  for (auto v : cols) same_b += detail::choose2(v);
  PairCounts k;
  k.A = same_both;
  k.B = same_a - same_both;
  k.C = same_b - same_both;
  k.D = detail::choose2(ca.size()) - k.A - k.B - k.C;
  return k;
}

/// Adjusted Rand index of two labellings of the same spots. Label types may
/// differ and only need ordering.
///
/// The ratio is 0/0 when both labellings are a single cluster or both are
/// all singletons; we return 1 if the set partitions coincide and 0
/// otherwise.
template <class A, class B>
double ari(std::span<const A> truth, std::span<const B> est) {
  if (truth.size() != est.size()) throw ConfigError("ari: label vectors differ in length");
  if (truth.size() < 2) throw ConfigError("ari: need at least two labels");
  const auto k = pair_counts(truth, est);
  const double v = ari_from_pair_counts(k);
  if (std::isnan(v)) return (k.B == 0 && k.C == 0) ? 1.0 : 0.0;
  return v;
}

template <class A, class B>
double ari(const std::vector<A>& truth, const std::vector<B>& est) {
  return ari(std::span<const A>(truth), std::span<const B>(est));
}

/// Number of distinct labels.
template <class T>
std::size_t cluster_count(std::span<const T> labels) {
  if (labels.empty()) throw ConfigError("cluster_count: empty label vector");
  return std::set<T>(labels.begin(), labels.end()).size();
}

template <class T>
std::size_t cluster_count(const std::vector<T>& labels) {
  return cluster_count(std::span<const T>(labels));
}

}  // namespace bnpmfa

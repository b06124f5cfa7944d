#pragma once

// Small random fixtures for the unit tests.

#include "bnpmfa/bnpmfa.hpp"

namespace toy {

using namespace bnpmfa;

inline ExpressionMatrix random_expression(std::uint64_t seed, int p, int n) {
  Rng rng(seed);
  Matrix v = Matrix::NullaryExpr(p, n, [&] { return rng.normal(); });
  std::vector<std::string> genes, spots;
  for (int j = 0; j < p; ++j) genes.push_back("g" + std::to_string(j + 1));
  for (int i = 0; i < n; ++i) spots.push_back("s" + std::to_string(i + 1));
  return ExpressionMatrix(v, genes, spots);
}

/// Every cluster 0..H-1 is used; the rest of the labels are random.
inline ChainState random_state(std::uint64_t seed, int p, int q, int n, int H) {
  Rng rng(seed);
  ChainState s;
  std::vector<int> z(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    z[static_cast<std::size_t>(i)] = i < H ? i : static_cast<int>(rng.uniform_index(static_cast<std::size_t>(H)));
  s.partition = PartitionState(z);
  s.factors.Y = Matrix::NullaryExpr(q, n, [&] { return rng.normal(); });
  s.params.W = Matrix::NullaryExpr(p, q, [&] { return rng.normal(); });
  s.params.lambda = Vector::NullaryExpr(p, [&] { return 0.1 + rng.uniform(); });
  s.params.mu = Matrix::NullaryExpr(H, q, [&] { return rng.normal(); });
  Matrix a = Matrix::NullaryExpr(q, q, [&] { return rng.normal(); });
  s.params.sigma.assign(a * a.transpose() + Matrix::Identity(q, q));
  return s;
}

inline AdjacencyGraph square_lattice(int m) {
  return build_graph(lattice_coords({LatticeKind::Square, m}), Square4{});
}

}  // namespace toy

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "gm/core.hpp"
#include "gm/graph.hpp"
#include "gm/treewidth.hpp"

namespace gm::testing {

// Vertices 1..7 are 0..6 here.
inline Graph house_graph() {
  const int e[][2] = {{1, 2}, {1, 3}, {2, 4}, {3, 4}, {3, 5}, {4, 5}, {5, 6}, {5, 7}};
  Graph g(7);
  for (const auto& p : e) g.add_edge(p[0] - 1, p[1] - 1);
  return g;
}

inline EliminationOrdering one_based(std::initializer_list<int> ids) {
  EliminationOrdering pi;
  for (int v : ids) pi.order.push_back(v - 1);
  return pi;
}

inline double rel_diff(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

inline Eigen::ArrayXd random_table(std::mt19937_64& rng, std::size_t n, double lo = 0.1, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::ArrayXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = u(rng);
  return v;
}

inline Factor random_factor(std::mt19937_64& rng, std::vector<int> scope, const std::vector<int>& cards,
                            double lo = 0.1, double hi = 1.0) {
  std::sort(scope.begin(), scope.end());
  std::vector<int> sc;
  std::size_t cells = 1;
  for (int v : scope) {
    sc.push_back(cards[static_cast<std::size_t>(v)]);
    cells *= static_cast<std::size_t>(sc.back());
  }
  return Factor(std::move(scope), std::move(sc), random_table(rng, cells, lo, hi));
}

// n in [1, max_n], cardinalities in [2, max_k], factor arity in [1, max_arity].
// Every variable gets a unary factor so no variable is left out.
inline GraphicalModel random_model(std::mt19937_64& rng, int max_n = 10, int max_k = 4, int max_arity = 3) {
  std::uniform_int_distribution<int> dn(1, max_n), dk(2, max_k);
  const int n = dn(rng);
  std::vector<int> cards(static_cast<std::size_t>(n));
  for (auto& c : cards) c = dk(rng);
  std::vector<Factor> fs;
  for (int v = 0; v < n; ++v) fs.push_back(random_factor(rng, {v}, cards));
  std::uniform_int_distribution<int> dm(0, 2 * n), da(1, std::min(max_arity, n));
  const int extra = dm(rng);
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  for (int f = 0; f < extra; ++f) {
    std::shuffle(ids.begin(), ids.end(), rng);
    fs.push_back(random_factor(rng, std::vector<int>(ids.begin(), ids.begin() + da(rng)), cards));
  }
  return GraphicalModel(cards, std::move(fs));
}

inline std::vector<Edge> random_tree_edges(std::mt19937_64& rng, int n) {
  std::vector<Edge> edges;
  for (int v = 1; v < n; ++v) {
    std::uniform_int_distribution<int> dp(0, v - 1);
    edges.push_back(make_edge(dp(rng), v));
  }
  return edges;
}

// Pairwise model on a random tree with unary factors.
inline GraphicalModel random_tree_model(std::mt19937_64& rng, int n, int max_k = 4) {
  std::uniform_int_distribution<int> dk(2, max_k);
  std::vector<int> cards(static_cast<std::size_t>(n));
  for (auto& c : cards) c = dk(rng);
  std::vector<Factor> fs;
  for (int v = 0; v < n; ++v) fs.push_back(random_factor(rng, {v}, cards));
  for (const Edge& e : random_tree_edges(rng, n)) fs.push_back(random_factor(rng, {e.first, e.second}, cards));
  return GraphicalModel(cards, std::move(fs));
}

inline Graph random_graph(std::mt19937_64& rng, int n, double p) {
  std::bernoulli_distribution b(p);
  Graph g(n);
  for (int a = 0; a < n; ++a)
    for (int c = a + 1; c < n; ++c)
      if (b(rng)) g.add_edge(a, c);
  return g;
}

inline EliminationOrdering random_ordering(std::mt19937_64& rng, int n) {
  EliminationOrdering pi;
  pi.order.resize(static_cast<std::size_t>(n));
  std::iota(pi.order.begin(), pi.order.end(), 0);
  std::shuffle(pi.order.begin(), pi.order.end(), rng);
  return pi;
}

// Full assignments in odometer order over the given cardinalities.
template <class F>
void for_each_assignment(const std::vector<int>& cards, F&& visit) {
  std::vector<int> x(cards.size(), 0);
  for (;;) {
    visit(x);
    std::size_t k = cards.size();
    for (;;) {
      if (k == 0) return;
      --k;
      if (++x[k] < cards[k]) break;
      x[k] = 0;
    }
  }
}

}  // namespace gm::testing

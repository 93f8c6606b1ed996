#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gm/graph.hpp"

namespace gm {

/// Position 0 is eliminated first.
struct EliminationOrdering {
  std::vector<int> order;

  friend bool operator==(const EliminationOrdering&,
                         const EliminationOrdering&) = default;
};

struct EliminationReport {
  int width = 0;
  std::vector<Edge> fill_edges;        // in the order they were added
  std::vector<int> per_vertex_degree;  // |N_i| at step i
  std::vector<Edge> induced_edges;     // sorted
  /// N_i at each step: later-ordered neighbours in the current graph, ascending.
  std::vector<std::vector<int>> neighborhoods;
};

EliminationReport elimination_game(const Graph& g, const EliminationOrdering& pi);
/// Throws an ordering error unless pi is a permutation of 0..n-1.
void check_permutation(const EliminationOrdering& pi, int n);

enum class OrderingCriterion { MinDegree, MinFill, Mcs };

struct TieBreak {
  enum class Kind { MaxDegree, Random, LowestId };
  Kind kind = Kind::MaxDegree;
  std::uint64_t seed = 0;

  static TieBreak max_degree() { return {Kind::MaxDegree, 0}; }
  static TieBreak lowest_id() { return {Kind::LowestId, 0}; }
  static TieBreak random(std::uint64_t seed) { return {Kind::Random, seed}; }
};

struct OrderingResult {
  EliminationOrdering ordering;
  EliminationReport report;
};

OrderingResult greedy_order(const Graph& g, OrderingCriterion criterion,
                            TieBreak tie_break = TieBreak::max_degree());

std::uint64_t splitmix64(std::uint64_t x);

enum class StopReason { Iterations, TimeBudget };

struct RandomizedResult {
  OrderingResult best;
  int iterations = 0;
  int best_iteration = 0;
  StopReason stop_reason = StopReason::Iterations;
};

inline constexpr int kDefaultRestarts = 100;
inline constexpr double kDefaultTimeBudget = 10.0;

/// Restart 0 is plain min-fill; restart k draws ties with seed splitmix64(seed + k).
/// Keeps the smallest width, earliest restart on ties.
RandomizedResult randomized_iterative_minfill(const Graph& g,
                                              int max_iters = kDefaultRestarts,
                                              double time_budget = kDefaultTimeBudget,
                                              std::uint64_t seed = 0);

struct ChordalityResult {
  bool chordal = false;
  EliminationOrdering perfect_ordering;  // set only when chordal
};

ChordalityResult is_chordal(const Graph& g);

struct TreeDecomposition {
  std::vector<std::vector<int>> clusters;  // each ascending
  std::vector<std::pair<int, int>> tree_edges;

  std::vector<std::vector<int>> separators() const;
  /// max |C| - 1
  int width() const;
};

struct DecompositionCheck {
  bool valid = true;
  std::string diagnostic;

  explicit operator bool() const noexcept { return valid; }
};

DecompositionCheck validate_decomposition(const Graph& g, const TreeDecomposition& td);
TreeDecomposition decomposition_from_ordering(const Graph& g, const EliminationOrdering& pi);
/// Leaves-to-root cluster order; each cluster emits C_i \ C_parent ascending.
EliminationOrdering ordering_from_decomposition(const TreeDecomposition& td, int root = 0);

/// Parent of each cluster (root has -1) and a root-first visiting order.
struct RootedTree {
  std::vector<int> parent;
  std::vector<int> bfs_order;
};
RootedTree root_tree(const TreeDecomposition& td, int root);

}  // namespace gm

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "gm/core.hpp"
#include "gm/treewidth.hpp"

namespace gm {

inline constexpr std::size_t kDefaultMaxCells = 100'000'000;

struct EliminationOptions {
  /// Unset: log domain for sum/max-product once n > 30, or when the factors already are.
  std::optional<bool> log_domain;
  std::size_t max_cells = kDefaultMaxCells;
  /// Retain each step's combined factor (needed for MAP backtracking).
  bool keep_trace = false;
};

struct EliminationStep {
  int variable = -1;
  /// Indices of absorbed factors: model factors first, then step k's message as n_factors + k.
  std::vector<int> absorbed;
  std::vector<int> message_scope;  // N_i
  std::size_t combined_cells = 0;
  Factor combined;  // empty unless keep_trace
};

struct EliminationTrace {
  EliminationOrdering ordering;  // the variables actually eliminated, in order
  std::vector<EliminationStep> steps;
  std::size_t max_cells = 0;
};

struct EliminationResult {
  Factor factor;  // over keep, in the working domain
  EliminationTrace trace;
};

bool default_log_domain(const GraphicalModel& m, const Semiring& s);
EliminationOrdering default_ordering(const GraphicalModel& m);

/// pi must list every free variable outside keep exactly once; entries for kept
/// or observed variables are skipped.
EliminationResult variable_elimination(const GraphicalModel& m, const Semiring& s,
                                       const EliminationOrdering& pi,
                                       std::span<const int> keep = {},
                                       const Evidence& e = {},
                                       const EliminationOptions& opts = {});

double log_partition_function(const GraphicalModel& m,
                              const std::optional<EliminationOrdering>& pi = std::nullopt,
                              const Evidence& e = {}, const EliminationOptions& opts = {});

/// Normalized linear-domain marginal over the variables in a.
Factor marginal(const GraphicalModel& m, std::span<const int> a,
                const std::optional<EliminationOrdering>& pi = std::nullopt,
                const Evidence& e = {}, const EliminationOptions& opts = {});

struct MapResult {
  std::vector<int> assignment;  // full, observed variables at their values
  double value = 0.0;           // max unnormalized probability
  double log_value = 0.0;
};

MapResult map_assignment(const GraphicalModel& m,
                         const std::optional<EliminationOrdering>& pi = std::nullopt,
                         const Evidence& e = {}, const EliminationOptions& opts = {});

/// Entropy of the model's distribution, in nats.
double entropy(const GraphicalModel& m,
               const std::optional<EliminationOrdering>& pi = std::nullopt,
               const EliminationOptions& opts = {});

struct BlockEliminationResult {
  Factor value;  // scalar
  /// Message each cluster sends to its parent (the root's entry is its final scalar).
  std::vector<Factor> messages;
  /// Cluster each model factor was assigned to.
  std::vector<int> assignment;
};

BlockEliminationResult block_elimination(const GraphicalModel& m, const TreeDecomposition& td,
                                         int root, const Semiring& s,
                                         std::size_t max_cells = kDefaultMaxCells);

/// Root-closest cluster containing each factor scope; assignment error if none does.
std::vector<int> assign_factors(const GraphicalModel& m, const TreeDecomposition& td, int root);

}  // namespace gm

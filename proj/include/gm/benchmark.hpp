#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gm/graph.hpp"
#include "gm/treewidth.hpp"

namespace gm {

enum class Heuristic { MinDegree, MinFill, Mcs, Randomized };

std::string_view heuristic_name(Heuristic h);
/// Accepts mindegree, minfill, mcs, rand.
std::optional<Heuristic> parse_heuristic(std::string_view name);
inline const std::vector<Heuristic> kAllHeuristics = {Heuristic::MinDegree, Heuristic::MinFill, Heuristic::Mcs,
                                                      Heuristic::Randomized};

/// Greedy heuristics break ties by max degree then lowest id; Randomized runs
/// randomized_iterative_minfill with the given seed and budget.
OrderingResult run_heuristic(const Graph& g, Heuristic h, std::uint64_t seed = 0,
                             int restarts = kDefaultRestarts, double time_budget = kDefaultTimeBudget);

struct BenchmarkEntry {
  std::string instance;
  Heuristic heuristic = Heuristic::MinFill;
  int width = 0;
  int fill_edges = 0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
};

struct BenchmarkReport {
  std::vector<BenchmarkEntry> entries;  // sorted by instance, then heuristic order given
  std::vector<std::string> skipped;     // "path: reason"

  /// instance,heuristic,width,fill_edges,seed (no timings, so reruns are byte-identical)
  std::string csv() const;
};

BenchmarkReport benchmark_orderings(std::vector<std::string> paths, const std::vector<Heuristic>& heuristics,
                                    std::uint64_t seed, double time_budget = kDefaultTimeBudget,
                                    int restarts = kDefaultRestarts);

}  // namespace gm

#include "gm/benchmark.hpp"

#include <algorithm>
#include <chrono>

#include "gm/io.hpp"

namespace gm {

std::string_view heuristic_name(Heuristic h) {
  switch (h) {
    case Heuristic::MinDegree: return "mindegree";
    case Heuristic::MinFill: return "minfill";
    case Heuristic::Mcs: return "mcs";
    case Heuristic::Randomized: return "rand";
  }
  return "unknown";
}

std::optional<Heuristic> parse_heuristic(std::string_view name) {
  for (Heuristic h : kAllHeuristics)
    if (heuristic_name(h) == name) return h;
  return std::nullopt;
}

OrderingResult run_heuristic(const Graph& g, Heuristic h, std::uint64_t seed, int restarts, double time_budget) {
  switch (h) {
    case Heuristic::MinDegree: return greedy_order(g, OrderingCriterion::MinDegree);
    case Heuristic::MinFill: return greedy_order(g, OrderingCriterion::MinFill);
    case Heuristic::Mcs: return greedy_order(g, OrderingCriterion::Mcs);
    case Heuristic::Randomized: return randomized_iterative_minfill(g, restarts, time_budget, seed).best;
  }
  return greedy_order(g, OrderingCriterion::MinFill);
}

std::string BenchmarkReport::csv() const {
  std::string out = "instance,heuristic,width,fill_edges,seed\n";
  for (const auto& e : entries)
    out += e.instance + ',' + std::string(heuristic_name(e.heuristic)) + ',' + std::to_string(e.width) + ',' +
           std::to_string(e.fill_edges) + ',' + std::to_string(e.seed) + '\n';
  return out;
}

BenchmarkReport benchmark_orderings(std::vector<std::string> paths, const std::vector<Heuristic>& heuristics,
                                    std::uint64_t seed, double time_budget, int restarts) {
  std::sort(paths.begin(), paths.end());
  BenchmarkReport report;
  for (const auto& path : paths) {
    Graph g;
    try {
      g = primal_graph(parse_model(read_file(path)));
    } catch (const Error& e) {
      report.skipped.push_back(path + ": " + e.what());
      continue;
    }
    for (Heuristic h : heuristics) {
      const auto start = std::chrono::steady_clock::now();
      const OrderingResult r = run_heuristic(g, h, seed, restarts, time_budget);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      report.entries.push_back({path, h, r.report.width, static_cast<int>(r.report.fill_edges.size()), secs,
                                h == Heuristic::Randomized ? seed : 0});
    }
  }
  return report;
}

}  // namespace gm

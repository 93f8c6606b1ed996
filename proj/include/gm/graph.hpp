#pragma once

#include <set>
#include <utility>
#include <vector>

namespace gm {

/// Undirected edge, always stored with first < second.
using Edge = std::pair<int, int>;

inline Edge make_edge(int a, int b) {
  return a < b ? Edge{a, b} : Edge{b, a};
}

/// Simple undirected graph on vertices 0..n-1.
class Graph {
 public:
  Graph() = default;
  explicit Graph(int num_vertices);
  Graph(int num_vertices, const std::vector<Edge>& edges);

  int num_vertices() const noexcept { return static_cast<int>(adj_.size()); }
  int num_edges() const noexcept { return num_edges_; }

  /// Self loops are ignored; parallel edges collapse.
  void add_edge(int a, int b);
  void remove_edge(int a, int b);
  bool has_edge(int a, int b) const;
  const std::set<int>& neighbors(int v) const { return adj_.at(v); }
  int degree(int v) const { return static_cast<int>(adj_.at(v).size()); }
  std::vector<Edge> edges() const;

  bool is_acyclic() const;
  bool is_connected() const;

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  std::vector<std::set<int>> adj_;
  int num_edges_ = 0;
};

Graph path_graph(int n);
Graph complete_graph(int n);
Graph cycle_graph(int n);
/// rows x cols lattice, vertex (r, c) has id r * cols + c.
Graph grid_graph(int rows, int cols);

}  // namespace gm

#include "gm/graph.hpp"

#include <numeric>
#include <stdexcept>

namespace gm {

Graph::Graph(int num_vertices) : adj_(static_cast<std::size_t>(num_vertices)) {}

Graph::Graph(int num_vertices, const std::vector<Edge>& edges)
    : Graph(num_vertices) {
  for (const auto& [a, b] : edges) add_edge(a, b);
}

void Graph::add_edge(int a, int b) {
  if (a < 0 || b < 0 || a >= num_vertices() || b >= num_vertices())
    throw std::out_of_range("Graph::add_edge: vertex out of range");
  if (a == b) return;
  if (adj_[a].insert(b).second) {
    adj_[b].insert(a);
    ++num_edges_;
  }
}

void Graph::remove_edge(int a, int b) {
  if (adj_.at(a).erase(b) != 0) {
    adj_.at(b).erase(a);
    --num_edges_;
  }
}

bool Graph::has_edge(int a, int b) const {
  if (a < 0 || a >= num_vertices()) return false;
  return adj_[a].count(b) != 0;
}

std::vector<Edge> Graph::edges() const {
  std::vector<Edge> out;
  out.reserve(static_cast<std::size_t>(num_edges_));
  for (int v = 0; v < num_vertices(); ++v)
    for (int w : adj_[v])
      if (v < w) out.emplace_back(v, w);
  return out;
}

namespace {

struct DisjointSets {
  explicit DisjointSets(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
  std::vector<int> parent;
};

}  // namespace

bool Graph::is_acyclic() const {
  DisjointSets sets(num_vertices());
  for (const auto& [a, b] : edges())
    if (!sets.unite(a, b)) return false;
  return true;
}

bool Graph::is_connected() const {
  DisjointSets sets(num_vertices());
  int components = num_vertices();
  for (const auto& [a, b] : edges())
    if (sets.unite(a, b)) --components;
  return components <= 1;
}

Graph path_graph(int n) {
  Graph g(n);
  for (int v = 0; v + 1 < n; ++v) g.add_edge(v, v + 1);
  return g;
}

Graph complete_graph(int n) {
  Graph g(n);
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) g.add_edge(a, b);
  return g;
}

Graph cycle_graph(int n) {
  Graph g = path_graph(n);
  if (n > 2) g.add_edge(n - 1, 0);
  return g;
}

Graph grid_graph(int rows, int cols) {
  Graph g(rows * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int v = r * cols + c;
      if (c + 1 < cols) g.add_edge(v, v + 1);
      if (r + 1 < rows) g.add_edge(v, v + cols);
    }
  return g;
}

}  // namespace gm

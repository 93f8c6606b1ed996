#include "gm/treewidth.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <queue>
#include <random>
#include <set>

#include "gm/core.hpp"

namespace gm {

void check_permutation(const EliminationOrdering& pi, int n) {
  if (static_cast<int>(pi.order.size()) != n)
    throw Error(ErrorCode::Ordering, "ordering has " + std::to_string(pi.order.size()) +
                                         " entries for " + std::to_string(n) + " vertices");
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int v : pi.order) {
    if (v < 0 || v >= n) throw Error(ErrorCode::Ordering, "vertex " + std::to_string(v) + " out of range");
    if (seen[static_cast<std::size_t>(v)]++)
      throw Error(ErrorCode::Ordering, "vertex " + std::to_string(v) + " repeated");
  }
}

EliminationReport elimination_game(const Graph& g, const EliminationOrdering& pi) {
  const int n = g.num_vertices();
  check_permutation(pi, n);
  Graph work = g;
  Graph induced = g;
  EliminationReport rep;
  rep.per_vertex_degree.reserve(static_cast<std::size_t>(n));
  rep.neighborhoods.reserve(static_cast<std::size_t>(n));
  for (int v : pi.order) {
    std::vector<int> nb(work.neighbors(v).begin(), work.neighbors(v).end());
    for (std::size_t a = 0; a < nb.size(); ++a)
      for (std::size_t b = a + 1; b < nb.size(); ++b)
        if (!work.has_edge(nb[a], nb[b])) {
          work.add_edge(nb[a], nb[b]);
          induced.add_edge(nb[a], nb[b]);
          rep.fill_edges.push_back(make_edge(nb[a], nb[b]));
        }
    for (int w : nb) work.remove_edge(v, w);
    rep.width = std::max(rep.width, static_cast<int>(nb.size()));
    rep.per_vertex_degree.push_back(static_cast<int>(nb.size()));
    rep.neighborhoods.push_back(std::move(nb));
  }
  rep.induced_edges = induced.edges();
  return rep;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace {

int fill_count(const Graph& g, int v) {
  const auto& nb = g.neighbors(v);
  int missing = 0;
  for (auto a = nb.begin(); a != nb.end(); ++a)
    for (auto b = std::next(a); b != nb.end(); ++b)
      if (!g.has_edge(*a, *b)) ++missing;
  return missing;
}

EliminationOrdering greedy_elimination(const Graph& g, bool min_fill, TieBreak tb) {
  const int n = g.num_vertices();
  Graph work = g;
  std::vector<char> alive(static_cast<std::size_t>(n), 1);
  std::vector<int> score(static_cast<std::size_t>(n), 0);
  auto rescore = [&](int v) {
    score[static_cast<std::size_t>(v)] = min_fill ? fill_count(work, v) : work.degree(v);
  };
  for (int v = 0; v < n; ++v) rescore(v);
  std::mt19937_64 rng(tb.seed);

  EliminationOrdering pi;
  pi.order.reserve(static_cast<std::size_t>(n));
  std::vector<int> ties;
  for (int step = 0; step < n; ++step) {
    int best = std::numeric_limits<int>::max();
    ties.clear();
    for (int v = 0; v < n; ++v) {
      if (!alive[static_cast<std::size_t>(v)]) continue;
      const int s = score[static_cast<std::size_t>(v)];
      if (s < best) {
        best = s;
        ties.assign(1, v);
      } else if (s == best) {
        ties.push_back(v);
      }
    }
    int pick = ties.front();
    if (tb.kind == TieBreak::Kind::Random && ties.size() > 1) {
      std::uniform_int_distribution<std::size_t> d(0, ties.size() - 1);
      pick = ties[d(rng)];
    } else if (tb.kind == TieBreak::Kind::MaxDegree) {
      for (int v : ties)
        if (work.degree(v) > work.degree(pick)) pick = v;
    }

    std::vector<int> nb(work.neighbors(pick).begin(), work.neighbors(pick).end());
    for (std::size_t a = 0; a < nb.size(); ++a)
      for (std::size_t b = a + 1; b < nb.size(); ++b) work.add_edge(nb[a], nb[b]);
    for (int w : nb) work.remove_edge(pick, w);
    alive[static_cast<std::size_t>(pick)] = 0;
    pi.order.push_back(pick);

    std::set<int> touched(nb.begin(), nb.end());
    if (min_fill)
      for (int w : nb)
        for (int x : work.neighbors(w)) touched.insert(x);
    for (int w : touched) rescore(w);
  }
  return pi;
}

EliminationOrdering mcs_ordering(const Graph& g, TieBreak tb) {
  const int n = g.num_vertices();
  std::vector<int> weight(static_cast<std::size_t>(n), 0);
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  std::vector<int> visit;
  visit.reserve(static_cast<std::size_t>(n));
  std::mt19937_64 rng(tb.seed);
  std::vector<int> ties;
  for (int step = 0; step < n; ++step) {
    int best = -1;
    ties.clear();
    for (int v = 0; v < n; ++v) {
      if (visited[static_cast<std::size_t>(v)]) continue;
      const int w = weight[static_cast<std::size_t>(v)];
      if (w > best) {
        best = w;
        ties.assign(1, v);
      } else if (w == best) {
        ties.push_back(v);
      }
    }
    int pick = ties.front();
    if (tb.kind == TieBreak::Kind::Random && ties.size() > 1) {
      std::uniform_int_distribution<std::size_t> d(0, ties.size() - 1);
      pick = ties[d(rng)];
    }
    visited[static_cast<std::size_t>(pick)] = 1;
    visit.push_back(pick);
    for (int w : g.neighbors(pick))
      if (!visited[static_cast<std::size_t>(w)]) ++weight[static_cast<std::size_t>(w)];
  }
  std::reverse(visit.begin(), visit.end());
  return {visit};
}

}  // namespace

OrderingResult greedy_order(const Graph& g, OrderingCriterion criterion, TieBreak tie_break) {
  EliminationOrdering pi;
  switch (criterion) {
    case OrderingCriterion::MinDegree: pi = greedy_elimination(g, false, tie_break); break;
    case OrderingCriterion::MinFill: pi = greedy_elimination(g, true, tie_break); break;
    case OrderingCriterion::Mcs: pi = mcs_ordering(g, tie_break); break;
  }
  EliminationReport rep = elimination_game(g, pi);
  return {std::move(pi), std::move(rep)};
}

RandomizedResult randomized_iterative_minfill(const Graph& g, int max_iters,
                                              double time_budget, std::uint64_t seed) {
  if (max_iters < 1) throw Error(ErrorCode::Parameter, "max_iters must be >= 1");
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  RandomizedResult out;
  out.best = greedy_order(g, OrderingCriterion::MinFill, TieBreak::max_degree());
  out.iterations = 1;
  for (int k = 1; k < max_iters; ++k) {
    const std::chrono::duration<double> elapsed = Clock::now() - start;
    if (elapsed.count() >= time_budget) {
      out.stop_reason = StopReason::TimeBudget;
      return out;
    }
    const std::uint64_t s = splitmix64(seed + static_cast<std::uint64_t>(k));
    OrderingResult r = greedy_order(g, OrderingCriterion::MinFill, TieBreak::random(s));
    ++out.iterations;
    if (r.report.width < out.best.report.width) {
      out.best = std::move(r);
      out.best_iteration = k;
    }
  }
  out.stop_reason = StopReason::Iterations;
  return out;
}

ChordalityResult is_chordal(const Graph& g) {
  OrderingResult r = greedy_order(g, OrderingCriterion::Mcs, TieBreak::lowest_id());
  ChordalityResult out;
  out.chordal = r.report.fill_edges.empty();
  if (out.chordal) out.perfect_ordering = std::move(r.ordering);
  return out;
}

std::vector<std::vector<int>> TreeDecomposition::separators() const {
  std::vector<std::vector<int>> seps;
  seps.reserve(tree_edges.size());
  for (const auto& [a, b] : tree_edges) {
    const auto& ca = clusters.at(static_cast<std::size_t>(a));
    const auto& cb = clusters.at(static_cast<std::size_t>(b));
    std::vector<int> s;
    std::set_intersection(ca.begin(), ca.end(), cb.begin(), cb.end(), std::back_inserter(s));
    seps.push_back(std::move(s));
  }
  return seps;
}

int TreeDecomposition::width() const {
  std::size_t w = 0;
  for (const auto& c : clusters) w = std::max(w, c.size());
  return static_cast<int>(w) - 1;
}

namespace {

// Tree-ness and running intersection; both depend only on the decomposition.
DecompositionCheck check_tree_structure(const TreeDecomposition& td, int num_vertices) {
  const int nc = static_cast<int>(td.clusters.size());
  for (const auto& c : td.clusters)
    for (int v : c)
      if (v < 0 || v >= num_vertices)
        throw Error(ErrorCode::Structure, "cluster vertex " + std::to_string(v) + " out of range");
  for (const auto& [a, b] : td.tree_edges)
    if (a < 0 || b < 0 || a >= nc || b >= nc)
      throw Error(ErrorCode::Structure, "tree edge refers to a missing cluster");

  if (nc > 0 && static_cast<int>(td.tree_edges.size()) != nc - 1)
    return {false, "tree: " + std::to_string(td.tree_edges.size()) + " edges for " +
                       std::to_string(nc) + " clusters"};
  Graph t(nc);
  for (const auto& [a, b] : td.tree_edges) {
    if (a == b || t.has_edge(a, b))
      return {false, "tree: self loop or repeated edge " + std::to_string(a) + "-" + std::to_string(b)};
    t.add_edge(a, b);
  }
  if (!t.is_acyclic() || !t.is_connected()) return {false, "tree: cluster graph is not a spanning tree"};

  for (int v = 0; v < num_vertices; ++v) {
    std::vector<char> has(static_cast<std::size_t>(nc), 0);
    int count = 0;
    for (int c = 0; c < nc; ++c) {
      const auto& cl = td.clusters[static_cast<std::size_t>(c)];
      if (std::binary_search(cl.begin(), cl.end(), v)) {
        has[static_cast<std::size_t>(c)] = 1;
        ++count;
      }
    }
    int inside = 0;
    for (const auto& [a, b] : td.tree_edges)
      if (has[static_cast<std::size_t>(a)] && has[static_cast<std::size_t>(b)]) ++inside;
    if (count > 0 && inside != count - 1)
      return {false, "running intersection: clusters containing vertex " + std::to_string(v) +
                         " are not connected"};
  }
  return {};
}

int covered_vertex_bound(const TreeDecomposition& td) {
  int n = 0;
  for (const auto& c : td.clusters)
    for (int v : c) n = std::max(n, v + 1);
  return n;
}

bool sorted_unique(const std::vector<int>& c) {
  return std::adjacent_find(c.begin(), c.end(), std::greater_equal<int>()) == c.end();
}

}  // namespace

DecompositionCheck validate_decomposition(const Graph& g, const TreeDecomposition& td) {
  for (const auto& c : td.clusters)
    if (!sorted_unique(c)) throw Error(ErrorCode::Structure, "cluster must be strictly ascending");
  DecompositionCheck chk = check_tree_structure(td, g.num_vertices());
  if (!chk) return chk;
  std::vector<char> covered(static_cast<std::size_t>(g.num_vertices()), 0);
  for (const auto& c : td.clusters)
    for (int v : c) covered[static_cast<std::size_t>(v)] = 1;
  for (int v = 0; v < g.num_vertices(); ++v)
    if (!covered[static_cast<std::size_t>(v)])
      return {false, "coverage: vertex " + std::to_string(v) + " is in no cluster"};
  for (const auto& [a, b] : g.edges()) {
    bool found = false;
    for (const auto& c : td.clusters)
      if (std::binary_search(c.begin(), c.end(), a) && std::binary_search(c.begin(), c.end(), b)) {
        found = true;
        break;
      }
    if (!found)
      return {false, "edge coverage: edge " + std::to_string(a) + "-" + std::to_string(b) +
                         " is in no cluster"};
  }
  return {};
}

TreeDecomposition decomposition_from_ordering(const Graph& g, const EliminationOrdering& pi) {
  const EliminationReport rep = elimination_game(g, pi);
  std::vector<std::vector<int>> candidates;
  for (std::size_t k = 0; k < pi.order.size(); ++k) {
    std::vector<int> c = rep.neighborhoods[k];
    c.push_back(pi.order[k]);
    std::sort(c.begin(), c.end());
    candidates.push_back(std::move(c));
  }
  TreeDecomposition td;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    bool maximal = true;
    for (std::size_t j = 0; j < candidates.size() && maximal; ++j) {
      if (i == j) continue;
      const auto& a = candidates[i];
      const auto& b = candidates[j];
      if (std::includes(b.begin(), b.end(), a.begin(), a.end()) &&
          (b.size() > a.size() || j < i))
        maximal = false;
    }
    if (maximal) td.clusters.push_back(candidates[i]);
  }

  struct Pair {
    int weight, a, b;
  };
  std::vector<Pair> pairs;
  const int nc = static_cast<int>(td.clusters.size());
  for (int a = 0; a < nc; ++a)
    for (int b = a + 1; b < nc; ++b) {
      const auto& ca = td.clusters[static_cast<std::size_t>(a)];
      const auto& cb = td.clusters[static_cast<std::size_t>(b)];
      std::vector<int> s;
      std::set_intersection(ca.begin(), ca.end(), cb.begin(), cb.end(), std::back_inserter(s));
      pairs.push_back({static_cast<int>(s.size()), a, b});
    }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& x, const Pair& y) { return x.weight > y.weight; });
  std::vector<int> comp(static_cast<std::size_t>(nc));
  for (int c = 0; c < nc; ++c) comp[static_cast<std::size_t>(c)] = c;
  auto find = [&](int x) {
    while (comp[static_cast<std::size_t>(x)] != x)
      x = comp[static_cast<std::size_t>(x)] = comp[static_cast<std::size_t>(comp[static_cast<std::size_t>(x)])];
    return x;
  };
  for (const Pair& p : pairs) {
    const int ra = find(p.a), rb = find(p.b);
    if (ra == rb) continue;
    comp[static_cast<std::size_t>(rb)] = ra;
    td.tree_edges.emplace_back(p.a, p.b);
  }
  return td;
}

RootedTree root_tree(const TreeDecomposition& td, int root) {
  const int nc = static_cast<int>(td.clusters.size());
  if (root < 0 || root >= nc) throw Error(ErrorCode::Structure, "root cluster out of range");
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(nc));
  for (const auto& [a, b] : td.tree_edges) {
    if (a < 0 || b < 0 || a >= nc || b >= nc)
      throw Error(ErrorCode::Structure, "tree edge refers to a missing cluster");
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& l : adj) std::sort(l.begin(), l.end());
  RootedTree rt;
  rt.parent.assign(static_cast<std::size_t>(nc), -2);
  rt.parent[static_cast<std::size_t>(root)] = -1;
  std::queue<int> q;
  q.push(root);
  while (!q.empty()) {
    const int c = q.front();
    q.pop();
    rt.bfs_order.push_back(c);
    for (int d : adj[static_cast<std::size_t>(c)])
      if (rt.parent[static_cast<std::size_t>(d)] == -2) {
        rt.parent[static_cast<std::size_t>(d)] = c;
        q.push(d);
      }
  }
  if (static_cast<int>(rt.bfs_order.size()) != nc)
    throw Error(ErrorCode::Structure, "decomposition tree is not connected");
  return rt;
}

EliminationOrdering ordering_from_decomposition(const TreeDecomposition& td, int root) {
  for (const auto& c : td.clusters)
    if (!sorted_unique(c)) throw Error(ErrorCode::Structure, "cluster must be strictly ascending");
  if (td.clusters.empty()) return {};
  const DecompositionCheck chk = check_tree_structure(td, covered_vertex_bound(td));
  if (!chk) throw Error(ErrorCode::Structure, "invalid decomposition: " + chk.diagnostic);
  const RootedTree rt = root_tree(td, root);
  EliminationOrdering pi;
  for (auto it = rt.bfs_order.rbegin(); it != rt.bfs_order.rend(); ++it) {
    const auto& c = td.clusters[static_cast<std::size_t>(*it)];
    const int p = rt.parent[static_cast<std::size_t>(*it)];
    if (p < 0) {
      pi.order.insert(pi.order.end(), c.begin(), c.end());
      continue;
    }
    const auto& cp = td.clusters[static_cast<std::size_t>(p)];
    std::set_difference(c.begin(), c.end(), cp.begin(), cp.end(), std::back_inserter(pi.order));
  }
  return pi;
}

}  // namespace gm

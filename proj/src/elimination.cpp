#include "gm/elimination.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "gm/graph.hpp"

namespace gm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool any_log(const GraphicalModel& m) {
  return std::any_of(m.factors().begin(), m.factors().end(),
                     [](const Factor& f) { return f.log_domain(); });
}

double cells_of(const std::set<int>& scope, const GraphicalModel& m) {
  double cells = 1.0;
  for (int v : scope) cells *= m.cardinality(v);
  return cells;
}

}  // namespace

bool default_log_domain(const GraphicalModel& m, const Semiring& s) {
  if (!s.supports_log_domain()) return false;
  return m.num_variables() > 30 || any_log(m);
}

EliminationOrdering default_ordering(const GraphicalModel& m) {
  return greedy_order(primal_graph(m), OrderingCriterion::MinFill).ordering;
}

EliminationResult variable_elimination(const GraphicalModel& model, const Semiring& semiring,
                                       const EliminationOrdering& pi,
                                       std::span<const int> keep, const Evidence& e,
                                       const EliminationOptions& opts) {
  const GraphicalModel m = condition(model, e);
  const int n = m.num_variables();
  const bool log_domain = opts.log_domain.value_or(default_log_domain(m, semiring));
  const Semiring s = semiring.in_domain(log_domain);

  std::vector<char> kept(static_cast<std::size_t>(n), 0);
  for (int v : keep) {
    if (v < 0 || v >= n) throw Error(ErrorCode::Query, "query variable " + std::to_string(v) + " unknown");
    if (m.is_observed(v))
      throw Error(ErrorCode::Query, "query variable " + std::to_string(v) + " is observed");
    kept[static_cast<std::size_t>(v)] = 1;
  }

  // Which variables pi must eliminate, and in what order.
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  EliminationTrace trace;
  for (int v : pi.order) {
    if (v < 0 || v >= n) throw Error(ErrorCode::Ordering, "ordering names unknown variable " + std::to_string(v));
    if (seen[static_cast<std::size_t>(v)]++)
      throw Error(ErrorCode::Ordering, "ordering repeats variable " + std::to_string(v));
    if (!kept[static_cast<std::size_t>(v)] && !m.is_observed(v)) trace.ordering.order.push_back(v);
  }
  for (int v = 0; v < n; ++v)
    if (!seen[static_cast<std::size_t>(v)] && !kept[static_cast<std::size_t>(v)] && !m.is_observed(v))
      throw Error(ErrorCode::Ordering, "ordering misses variable " + std::to_string(v));

  struct Entry {
    int id;
    Factor f;
  };
  std::vector<Entry> pool;
  pool.reserve(m.factors().size());
  for (std::size_t k = 0; k < m.factors().size(); ++k) {
    const Factor& f = m.factors()[k];
    pool.push_back({static_cast<int>(k), log_domain ? f.to_log() : f.to_linear()});
  }
  int next_id = static_cast<int>(m.factors().size());

  for (std::size_t step = 0; step < trace.ordering.order.size(); ++step) {
    const int v = trace.ordering.order[step];
    EliminationStep st;
    st.variable = v;
    std::set<int> scope{v};
    std::vector<Entry> absorbed;
    std::vector<Entry> rest;
    for (Entry& en : pool) {
      if (en.f.contains(v)) {
        st.absorbed.push_back(en.id);
        scope.insert(en.f.scope().begin(), en.f.scope().end());
        absorbed.push_back(std::move(en));
      } else {
        rest.push_back(std::move(en));
      }
    }
    pool = std::move(rest);
    const double cells = cells_of(scope, m);
    if (cells > static_cast<double>(opts.max_cells))
      throw Error(ErrorCode::Capacity,
                  "eliminating variable " + std::to_string(v) + " needs a table of " +
                      std::to_string(static_cast<long double>(cells)) + " cells with |N_i| = " +
                      std::to_string(scope.size() - 1) + " (cap " + std::to_string(opts.max_cells) + ")");

    Factor combined = Factor::constant({v}, {m.cardinality(v)}, s.one(), log_domain);
    for (const Entry& en : absorbed) combined = combine(combined, en.f, s);
    Factor message = eliminate_var(combined, v, s);

    st.message_scope = message.scope();
    st.combined_cells = combined.size();
    trace.max_cells = std::max(trace.max_cells, combined.size());
    if (opts.keep_trace) st.combined = std::move(combined);
    trace.steps.push_back(std::move(st));
    pool.push_back({next_id++, std::move(message)});
  }

  Factor result = Factor::scalar(s.one(), log_domain);
  for (const Entry& en : pool) result = combine(result, en.f, s);
  std::vector<int> keep_vars(keep.begin(), keep.end());
  std::vector<int> keep_cards;
  for (int v : keep_vars) keep_cards.push_back(m.cardinality(v));
  result = extend(result, keep_vars, keep_cards, s);
  return {std::move(result), std::move(trace)};
}

double log_partition_function(const GraphicalModel& m, const std::optional<EliminationOrdering>& pi,
                              const Evidence& e, const EliminationOptions& opts) {
  const GraphicalModel c = condition(m, e);
  const EliminationOrdering order = pi ? *pi : default_ordering(c);
  const EliminationResult r =
      variable_elimination(c, Semiring::sum_product(), order, {}, {}, opts);
  const double z = r.factor.values()(0);
  return r.factor.log_domain() ? z : std::log(z);
}

Factor marginal(const GraphicalModel& m, std::span<const int> a,
                const std::optional<EliminationOrdering>& pi, const Evidence& e,
                const EliminationOptions& opts) {
  if (a.empty()) throw Error(ErrorCode::Query, "marginal query set is empty");
  const GraphicalModel c = condition(m, e);
  for (int v : a)
    if (v >= 0 && v < c.num_variables() && c.is_observed(v))
      throw Error(ErrorCode::Query, "query variable " + std::to_string(v) + " is observed");
  const EliminationOrdering order = pi ? *pi : default_ordering(c);
  const EliminationResult r =
      variable_elimination(c, Semiring::sum_product(), order, a, {}, opts);
  return normalize(r.factor, Semiring::sum_product()).to_linear();
}

MapResult map_assignment(const GraphicalModel& m, const std::optional<EliminationOrdering>& pi,
                         const Evidence& e, const EliminationOptions& opts) {
  const GraphicalModel c = condition(m, e);
  const EliminationOrdering order = pi ? *pi : default_ordering(c);
  EliminationOptions o = opts;
  o.keep_trace = true;
  const EliminationResult r = variable_elimination(c, Semiring::max_product(), order, {}, {}, o);

  MapResult out;
  out.assignment.assign(static_cast<std::size_t>(c.num_variables()), 0);
  for (const auto& [var, value] : c.evidence().assignments)
    out.assignment[static_cast<std::size_t>(var)] = value;
  for (auto it = r.trace.steps.rbegin(); it != r.trace.steps.rend(); ++it) {
    const Factor& f = it->combined;
    const int v = it->variable;
    double best = -kInf;
    int arg = 0;
    for (int x = 0; x < c.cardinality(v); ++x) {
      out.assignment[static_cast<std::size_t>(v)] = x;
      const double val = f.at(out.assignment);
      if (val > best) {
        best = val;
        arg = x;
      }
    }
    out.assignment[static_cast<std::size_t>(v)] = arg;
  }
  const double val = r.factor.values()(0);
  if (r.factor.log_domain()) {
    out.log_value = val;
    out.value = std::exp(val);
  } else {
    out.value = val;
    out.log_value = std::log(val);
  }
  return out;
}

double entropy(const GraphicalModel& m, const std::optional<EliminationOrdering>& pi,
               const EliminationOptions& opts) {
  const double log_z = log_partition_function(m, pi, {}, opts);
  if (log_z == -kInf) throw Error(ErrorCode::InconsistentEvidence, "model has zero mass");

  std::map<std::vector<int>, Factor> marginals;
  double expected = 0.0;
  for (const Factor& f : m.factors()) {
    const Factor lf = f.to_log();
    if (f.scope().empty()) {
      expected += lf.values()(0);
      continue;
    }
    auto it = marginals.find(f.scope());
    if (it == marginals.end())
      it = marginals.emplace(f.scope(), marginal(m, f.scope(), pi, {}, opts)).first;
    const Eigen::ArrayXd& p = it->second.values();
    for (Eigen::Index k = 0; k < p.size(); ++k)
      if (p(k) > 0.0) expected += p(k) * lf.values()(k);
  }
  return log_z - expected;
}

std::vector<int> assign_factors(const GraphicalModel& m, const TreeDecomposition& td, int root) {
  const RootedTree rt = root_tree(td, root);
  std::vector<int> where;
  where.reserve(m.factors().size());
  for (std::size_t k = 0; k < m.factors().size(); ++k) {
    const auto& scope = m.factors()[k].scope();
    int home = -1;
    for (int c : rt.bfs_order) {
      const auto& cl = td.clusters[static_cast<std::size_t>(c)];
      if (std::includes(cl.begin(), cl.end(), scope.begin(), scope.end())) {
        home = c;
        break;
      }
    }
    if (home < 0)
      throw Error(ErrorCode::Assignment,
                  "factor " + std::to_string(k) + " has a scope contained in no cluster");
    where.push_back(home);
  }
  return where;
}

BlockEliminationResult block_elimination(const GraphicalModel& m, const TreeDecomposition& td,
                                         int root, const Semiring& semiring,
                                         std::size_t max_cells) {
  bool log_domain = any_log(m);
  const Semiring s = semiring.in_domain(log_domain);
  const RootedTree rt = root_tree(td, root);
  BlockEliminationResult out;
  out.assignment = assign_factors(m, td, root);

  std::vector<char> in_cluster(static_cast<std::size_t>(m.num_variables()), 0);
  for (const auto& c : td.clusters)
    for (int v : c) {
      if (v < 0 || v >= m.num_variables())
        throw Error(ErrorCode::Assignment, "cluster names unknown variable " + std::to_string(v));
      in_cluster[static_cast<std::size_t>(v)] = 1;
    }
  for (int v : m.free_variables())
    if (!in_cluster[static_cast<std::size_t>(v)])
      throw Error(ErrorCode::Assignment, "variable " + std::to_string(v) + " is in no cluster");

  const std::size_t nc = td.clusters.size();
  std::vector<Factor> inbox(nc, Factor::scalar(s.one(), log_domain));
  out.messages.assign(nc, Factor());
  for (std::size_t k = 0; k < m.factors().size(); ++k) {
    auto& slot = inbox[static_cast<std::size_t>(out.assignment[k])];
    const Factor& f = m.factors()[k];
    slot = combine(slot, log_domain ? f.to_log() : f.to_linear(), s);
  }

  for (auto it = rt.bfs_order.rbegin(); it != rt.bfs_order.rend(); ++it) {
    const auto c = static_cast<std::size_t>(*it);
    const auto& cl = td.clusters[c];
    const int p = rt.parent[c];
    std::vector<int> drop;
    if (p < 0) {
      drop = cl;
    } else {
      const auto& cp = td.clusters[static_cast<std::size_t>(p)];
      std::set_difference(cl.begin(), cl.end(), cp.begin(), cp.end(), std::back_inserter(drop));
    }
    std::vector<int> free_drop, free_cards;
    for (int v : drop)
      if (!m.is_observed(v)) {
        free_drop.push_back(v);
        free_cards.push_back(m.cardinality(v));
      }
    double cells = 1.0;
    std::set<int> scope(inbox[c].scope().begin(), inbox[c].scope().end());
    scope.insert(free_drop.begin(), free_drop.end());
    for (int v : scope) cells *= m.cardinality(v);
    if (cells > static_cast<double>(max_cells))
      throw Error(ErrorCode::Capacity, "cluster " + std::to_string(c) + " table exceeds the cell cap");
    Factor f = extend(inbox[c], free_drop, free_cards, s);
    f = eliminate_vars(std::move(f), free_drop, s);
    if (p >= 0) {
      auto& parent_slot = inbox[static_cast<std::size_t>(p)];
      parent_slot = combine(parent_slot, f, s);
    } else {
      out.value = f;
    }
    out.messages[c] = std::move(f);
  }
  return out;
}

}  // namespace gm

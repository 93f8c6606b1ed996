#include "gm/message_passing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <tuple>

#include "gm/elimination.hpp"

namespace gm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_max(const Semiring& s) {
  if (s.log_domain())
    throw Error(ErrorCode::DomainFlag, "message passing runs on linear-domain potentials");
  if (s.kind() == SemiringKind::SumProduct) return false;
  if (s.kind() == SemiringKind::MaxProduct) return true;
  throw Error(ErrorCode::Parameter,
              "message passing supports the sum-product and max-product semirings only");
}

void normalize_in_place(Eigen::VectorXd& v, bool max_norm) {
  const double z = max_norm ? v.maxCoeff() : v.sum();
  if (!(z > 0.0) || !std::isfinite(z))
    throw Error(ErrorCode::InconsistentEvidence, "message has zero or infinite mass");
  v /= z;
}

// Index of the message that flows into v along edge e.
std::size_t incoming_index(const PairwiseModel& pm, int v, int e) {
  return static_cast<std::size_t>(pm.edges[static_cast<std::size_t>(e)].second == v ? 2 * e : 2 * e + 1);
}

Eigen::VectorXd cavity(const PairwiseModel& pm, const MessageStore& st, int v, int skip_edge) {
  Eigen::VectorXd h = pm.unary[static_cast<std::size_t>(v)];
  for (const auto& [w, e] : pm.incident[static_cast<std::size_t>(v)])
    if (e != skip_edge) h = h.cwiseProduct(st.messages[incoming_index(pm, v, e)]);
  return h;
}

// Message from `from` along edge e, before normalization.
Eigen::VectorXd compute_message(const PairwiseModel& pm, const MessageStore& st, int from, int e,
                                bool max_mode) {
  const Eigen::VectorXd h = cavity(pm, st, from, e);
  const Eigen::MatrixXd& psi = pm.pairwise[static_cast<std::size_t>(e)];
  const bool forward = pm.edges[static_cast<std::size_t>(e)].first == from;
  if (!max_mode) return forward ? Eigen::VectorXd(psi.transpose() * h) : Eigen::VectorXd(psi * h);
  if (forward) return (psi.array().colwise() * h.array()).colwise().maxCoeff().transpose();
  return (psi.array().rowwise() * h.transpose().array()).rowwise().maxCoeff();
}

void send(const PairwiseModel& pm, MessageStore& st, int from, int e, bool max_mode) {
  Eigen::VectorXd m = compute_message(pm, st, from, e, max_mode);
  normalize_in_place(m, max_mode);
  const int to = pm.edges[static_cast<std::size_t>(e)].first == from
                     ? pm.edges[static_cast<std::size_t>(e)].second
                     : pm.edges[static_cast<std::size_t>(e)].first;
  st.messages[incoming_index(pm, to, e)] = std::move(m);
}

}  // namespace

PairwiseModel to_pairwise(const GraphicalModel& m) {
  PairwiseModel pm;
  const int n = m.num_variables();
  pm.cards = m.cardinalities();
  pm.observed.assign(static_cast<std::size_t>(n), 0);
  pm.observed_value.assign(static_cast<std::size_t>(n), -1);
  for (const auto& [var, value] : m.evidence().assignments) {
    pm.observed[static_cast<std::size_t>(var)] = 1;
    pm.observed_value[static_cast<std::size_t>(var)] = value;
  }
  for (int v = 0; v < n; ++v) pm.unary.push_back(Eigen::VectorXd::Ones(pm.cards[static_cast<std::size_t>(v)]));

  std::map<Edge, Eigen::MatrixXd> pairs;
  for (const Factor& raw : m.factors()) {
    const Factor f = raw.to_linear();
    const auto& vals = f.values();
    if (f.arity() > 2)
      throw Error(ErrorCode::Arity, "factor of arity " + std::to_string(f.arity()) +
                                        " in a pairwise-only algorithm");
    if (f.arity() == 0) {
      pm.log_constant += std::log(vals(0));
    } else if (f.arity() == 1) {
      auto& u = pm.unary[static_cast<std::size_t>(f.scope()[0])];
      u = u.cwiseProduct(Eigen::VectorXd(vals.matrix()));
    } else {
      const int ra = f.cards()[0], rb = f.cards()[1];
      Eigen::MatrixXd mat(ra, rb);
      for (int a = 0; a < ra; ++a)
        for (int b = 0; b < rb; ++b) mat(a, b) = vals(a * rb + b);
      const Edge key{f.scope()[0], f.scope()[1]};
      auto it = pairs.find(key);
      if (it == pairs.end())
        pairs.emplace(key, std::move(mat));
      else
        it->second = it->second.cwiseProduct(mat);
    }
  }
  pm.incident.resize(static_cast<std::size_t>(n));
  for (auto& [edge, mat] : pairs) {
    const int e = static_cast<int>(pm.edges.size());
    pm.edges.push_back(edge);
    pm.pairwise.push_back(std::move(mat));
    pm.incident[static_cast<std::size_t>(edge.first)].emplace_back(edge.second, e);
    pm.incident[static_cast<std::size_t>(edge.second)].emplace_back(edge.first, e);
  }
  for (auto& inc : pm.incident) std::sort(inc.begin(), inc.end());
  return pm;
}

GraphicalModel to_graphical_model(const PairwiseModel& pm) {
  std::vector<Factor> factors;
  Evidence ev;
  for (int v = 0; v < pm.num_vertices(); ++v) {
    const auto i = static_cast<std::size_t>(v);
    if (pm.observed[i]) {
      ev.assignments[v] = pm.observed_value[i];
      continue;
    }
    factors.emplace_back(std::vector<int>{v}, std::vector<int>{pm.cards[i]}, pm.unary[i].array());
  }
  for (std::size_t e = 0; e < pm.edges.size(); ++e) {
    const auto [a, b] = pm.edges[e];
    const Eigen::MatrixXd& mat = pm.pairwise[e];
    Eigen::ArrayXd vals(mat.size());
    for (Eigen::Index r = 0; r < mat.rows(); ++r)
      for (Eigen::Index c = 0; c < mat.cols(); ++c) vals(r * mat.cols() + c) = mat(r, c);
    factors.emplace_back(std::vector<int>{a, b},
                         std::vector<int>{pm.cards[static_cast<std::size_t>(a)],
                                          pm.cards[static_cast<std::size_t>(b)]},
                         std::move(vals));
  }
  if (pm.log_constant != 0.0) factors.push_back(Factor::scalar(std::exp(pm.log_constant)));
  std::vector<DiscreteVariable> vars;
  for (int v = 0; v < pm.num_vertices(); ++v) vars.push_back({v, pm.cards[static_cast<std::size_t>(v)]});
  return GraphicalModel(std::move(vars), std::move(factors), ModelKind::Markov, std::move(ev));
}

MessageStore initial_messages(const PairwiseModel& pm) {
  MessageStore st;
  st.messages.reserve(2 * pm.edges.size());
  for (const auto& [a, b] : pm.edges) {
    st.messages.push_back(Eigen::VectorXd::Ones(pm.cards[static_cast<std::size_t>(b)]));
    st.messages.push_back(Eigen::VectorXd::Ones(pm.cards[static_cast<std::size_t>(a)]));
  }
  return st;
}

PseudoMarginals beliefs_from_messages(const PairwiseModel& pm, const MessageStore& st,
                                      const Semiring& s) {
  is_max(s);
  PseudoMarginals q;
  for (int v = 0; v < pm.num_vertices(); ++v) {
    const auto i = static_cast<std::size_t>(v);
    q.degree.push_back(pm.degree(v));
    if (pm.observed[i]) {
      Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(pm.cards[i]);
      one_hot(pm.observed_value[i]) = 1.0;
      q.singleton.push_back(std::move(one_hot));
      continue;
    }
    Eigen::VectorXd b = cavity(pm, st, v, -1);
    normalize_in_place(b, false);
    q.singleton.push_back(std::move(b));
  }
  for (std::size_t e = 0; e < pm.edges.size(); ++e) {
    const auto [a, b] = pm.edges[e];
    const Eigen::VectorXd ha = cavity(pm, st, a, static_cast<int>(e));
    const Eigen::VectorXd hb = cavity(pm, st, b, static_cast<int>(e));
    Eigen::MatrixXd p = ha.asDiagonal() * pm.pairwise[e] * hb.asDiagonal();
    const double z = p.sum();
    if (!(z > 0.0)) throw Error(ErrorCode::InconsistentEvidence, "pairwise belief has zero mass");
    q.pairwise.push_back(p / z);
  }
  return q;
}

TreePassResult tree_message_pass(const PairwiseModel& pm, const Semiring& s, int root) {
  const bool max_mode = is_max(s);
  const int n = pm.num_vertices();
  if (!pm.graph().is_acyclic())
    throw Error(ErrorCode::NotATree, "the model's graph contains a cycle");
  if (n > 0 && (root < 0 || root >= n)) throw Error(ErrorCode::Structure, "root vertex out of range");

  // BFS order per component; parent edge recorded for each non-root vertex.
  std::vector<int> order, parent_edge(static_cast<std::size_t>(n), -1);
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  auto bfs = [&](int start) {
    std::queue<int> q;
    q.push(start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      order.push_back(v);
      for (const auto& [w, e] : pm.incident[static_cast<std::size_t>(v)])
        if (!seen[static_cast<std::size_t>(w)]) {
          seen[static_cast<std::size_t>(w)] = 1;
          parent_edge[static_cast<std::size_t>(w)] = e;
          q.push(w);
        }
    }
  };
  if (n > 0) bfs(root);
  for (int v = 0; v < n; ++v)
    if (!seen[static_cast<std::size_t>(v)]) bfs(v);

  TreePassResult out;
  out.store = initial_messages(pm);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (parent_edge[static_cast<std::size_t>(*it)] >= 0)
      send(pm, out.store, *it, parent_edge[static_cast<std::size_t>(*it)], max_mode);
  for (int v : order)
    for (const auto& [w, e] : pm.incident[static_cast<std::size_t>(v)])
      if (parent_edge[static_cast<std::size_t>(w)] == e) send(pm, out.store, v, e, max_mode);
  out.store.iterations = 1;
  out.beliefs = beliefs_from_messages(pm, out.store, s);
  return out;
}

TreePassResult tree_message_pass(const GraphicalModel& m, const Semiring& s, int root) {
  return tree_message_pass(to_pairwise(m), s, root);
}

LbpResult loopy_bp(const PairwiseModel& pm, const Semiring& s, const LbpOptions& opts) {
  const bool max_mode = is_max(s);
  if (!(opts.damping >= 0.0 && opts.damping < 1.0))
    throw Error(ErrorCode::Parameter, "damping must lie in [0, 1)");
  if (!(opts.tol > 0.0)) throw Error(ErrorCode::Parameter, "tolerance must be positive");
  if (opts.max_iter < 1) throw Error(ErrorCode::Parameter, "max_iter must be >= 1");

  // Directed edges in lexicographic (from, to) order.
  std::vector<std::tuple<int, int, int>> directed;
  for (std::size_t e = 0; e < pm.edges.size(); ++e) {
    const auto [a, b] = pm.edges[e];
    directed.emplace_back(a, b, static_cast<int>(e));
    directed.emplace_back(b, a, static_cast<int>(e));
  }
  std::sort(directed.begin(), directed.end());

  LbpResult out;
  out.store = initial_messages(pm);
  MessageStore& st = out.store;
  for (int it = 1; it <= opts.max_iter; ++it) {
    const MessageStore old = st;
    const MessageStore& source = opts.schedule == Schedule::Synchronous ? old : st;
    double residual = 0.0;
    for (const auto& [from, to, e] : directed) {
      Eigen::VectorXd m = compute_message(pm, source, from, e, max_mode);
      normalize_in_place(m, max_mode);
      const std::size_t idx = incoming_index(pm, to, e);
      if (opts.damping > 0.0) {
        m = opts.damping * old.messages[idx] + (1.0 - opts.damping) * m;
        normalize_in_place(m, max_mode);
      }
      residual = std::max(residual, (m - old.messages[idx]).cwiseAbs().maxCoeff());
      st.messages[idx] = std::move(m);
    }
    st.iterations = it;
    st.residual = residual;
    out.iterations = it;
    if (residual < opts.tol) {
      out.converged = true;
      break;
    }
  }
  out.beliefs = beliefs_from_messages(pm, st, s);
  return out;
}

LbpResult loopy_bp(const GraphicalModel& m, const Semiring& s, const LbpOptions& opts) {
  return loopy_bp(to_pairwise(m), s, opts);
}

CalibratedTree calibrate_junction_tree(const GraphicalModel& m, const TreeDecomposition& td,
                                       const Semiring& semiring, int root) {
  is_max(semiring);
  const Semiring& s = semiring;
  const RootedTree rt = root_tree(td, root);
  const std::vector<int> home = assign_factors(m, td, root);
  const std::size_t nc = td.clusters.size();

  std::vector<std::vector<int>> free_vars(nc);
  std::vector<Factor> phi(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    std::vector<int> cards;
    for (int v : td.clusters[c]) {
      if (v < 0 || v >= m.num_variables())
        throw Error(ErrorCode::Assignment, "cluster names unknown variable " + std::to_string(v));
      if (!m.is_observed(v)) {
        free_vars[c].push_back(v);
        cards.push_back(m.cardinality(v));
      }
    }
    phi[c] = Factor::constant(free_vars[c], cards, 1.0);
  }
  for (std::size_t k = 0; k < m.factors().size(); ++k) {
    auto& slot = phi[static_cast<std::size_t>(home[k])];
    slot = combine(slot, m.factors()[k].to_linear(), s);
  }

  std::vector<std::vector<int>> children(nc);
  for (int c : rt.bfs_order)
    if (rt.parent[static_cast<std::size_t>(c)] >= 0)
      children[static_cast<std::size_t>(rt.parent[static_cast<std::size_t>(c)])].push_back(c);

  auto project = [&](const Factor& f, std::size_t target) {
    std::vector<int> drop;
    const auto& keep = free_vars[target];
    for (int v : f.scope())
      if (!std::binary_search(keep.begin(), keep.end(), v)) drop.push_back(v);
    return eliminate_vars(f, drop, s);
  };

  std::vector<Factor> up(nc), down(nc);
  for (auto it = rt.bfs_order.rbegin(); it != rt.bfs_order.rend(); ++it) {
    const auto c = static_cast<std::size_t>(*it);
    const int p = rt.parent[c];
    if (p < 0) continue;
    Factor f = phi[c];
    for (int d : children[c]) f = combine(f, up[static_cast<std::size_t>(d)], s);
    up[c] = project(f, static_cast<std::size_t>(p));
  }
  for (int ci : rt.bfs_order) {
    const auto c = static_cast<std::size_t>(ci);
    for (int d : children[c]) {
      Factor f = phi[c];
      if (rt.parent[c] >= 0) f = combine(f, down[c], s);
      for (int d2 : children[c])
        if (d2 != d) f = combine(f, up[static_cast<std::size_t>(d2)], s);
      down[static_cast<std::size_t>(d)] = project(f, static_cast<std::size_t>(d));
    }
  }

  CalibratedTree out;
  out.beliefs.resize(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    Factor b = phi[c];
    if (rt.parent[c] >= 0) b = combine(b, down[c], s);
    for (int d : children[c]) b = combine(b, up[static_cast<std::size_t>(d)], s);
    if (static_cast<int>(c) == root) {
      double total = b.values()(0);
      for (Eigen::Index k = 1; k < b.values().size(); ++k) total = s.oplus(total, b.values()(k));
      out.log_z = std::log(total);
    }
    out.beliefs[c] = normalize(b, s);
  }
  return out;
}

GraphicalModel reparametrize_tree(const GraphicalModel& m) {
  const PairwiseModel pm = to_pairwise(m);
  const TreePassResult r = tree_message_pass(pm, Semiring::sum_product());
  std::vector<Factor> factors;
  for (int v = 0; v < pm.num_vertices(); ++v) {
    const auto i = static_cast<std::size_t>(v);
    if (pm.observed[i]) continue;
    const int d = pm.degree(v);
    const Eigen::VectorXd& p = r.beliefs.singleton[i];
    Eigen::ArrayXd vals(p.size());
    for (Eigen::Index x = 0; x < p.size(); ++x) {
      if (d == 1)
        vals(x) = 1.0;
      else if (p(x) == 0.0)
        vals(x) = 0.0;
      else
        vals(x) = std::pow(p(x), static_cast<double>(1 - d));
    }
    factors.emplace_back(std::vector<int>{v}, std::vector<int>{pm.cards[i]}, std::move(vals));
  }
  for (std::size_t e = 0; e < pm.edges.size(); ++e) {
    const auto [a, b] = pm.edges[e];
    const Eigen::MatrixXd& q = r.beliefs.pairwise[e];
    const Eigen::VectorXd& pa = r.beliefs.singleton[static_cast<std::size_t>(a)];
    const Eigen::VectorXd& pb = r.beliefs.singleton[static_cast<std::size_t>(b)];
    for (Eigen::Index x = 0; x < q.rows(); ++x)
      for (Eigen::Index y = 0; y < q.cols(); ++y)
        if (q(x, y) > 0.0 && (pa(x) == 0.0 || pb(y) == 0.0))
          throw Error(ErrorCode::Reparametrization,
                      "pairwise marginal positive where a singleton marginal is zero on edge " +
                          std::to_string(a) + "-" + std::to_string(b));
    Eigen::ArrayXd vals(q.size());
    for (Eigen::Index x = 0; x < q.rows(); ++x)
      for (Eigen::Index y = 0; y < q.cols(); ++y) vals(x * q.cols() + y) = q(x, y);
    factors.emplace_back(std::vector<int>{a, b},
                         std::vector<int>{pm.cards[static_cast<std::size_t>(a)],
                                          pm.cards[static_cast<std::size_t>(b)]},
                         std::move(vals));
  }
  return GraphicalModel(m.variables(), std::move(factors), m.kind(), m.evidence());
}

CalibrationCheck check_calibration(const GraphicalModel& m, double tol, const Semiring& s) {
  const bool max_mode = is_max(s);
  const PairwiseModel pm = to_pairwise(m);
  for (int v = 0; v < pm.num_vertices(); ++v) {
    const auto& inc = pm.incident[static_cast<std::size_t>(v)];
    if (inc.size() < 2) continue;
    std::vector<Eigen::VectorXd> sides;
    for (const auto& [w, e] : inc) {
      const Eigen::MatrixXd& psi = pm.pairwise[static_cast<std::size_t>(e)];
      const bool first = pm.edges[static_cast<std::size_t>(e)].first == v;
      Eigen::VectorXd r;
      if (max_mode)
        r = first ? Eigen::VectorXd(psi.rowwise().maxCoeff()) : Eigen::VectorXd(psi.colwise().maxCoeff().transpose());
      else
        r = first ? Eigen::VectorXd(psi.rowwise().sum()) : Eigen::VectorXd(psi.colwise().sum().transpose());
      sides.push_back(std::move(r));
    }
    for (std::size_t k = 1; k < sides.size(); ++k) {
      const double scale = std::max({1.0, sides[0].cwiseAbs().maxCoeff(), sides[k].cwiseAbs().maxCoeff()});
      if ((sides[k] - sides[0]).cwiseAbs().maxCoeff() > tol * scale)
        return {false, v,
                "vertex " + std::to_string(v) + ": edges to " + std::to_string(inc[0].first) +
                    " and " + std::to_string(inc[k].first) + " disagree on its marginal"};
    }
  }
  return {};
}

double bethe_free_energy(const PairwiseModel& pm, const PseudoMarginals& q) {
  const auto n = static_cast<std::size_t>(pm.num_vertices());
  if (q.singleton.size() != n || q.pairwise.size() != pm.edges.size())
    throw Error(ErrorCode::Structure, "belief count does not match the model");
  auto xlogy = [](double x, double y) {
    if (x == 0.0) return 0.0;
    if (y == 0.0) return -kInf;
    return x * std::log(y);
  };
  double f = -pm.log_constant;
  for (std::size_t v = 0; v < n; ++v) {
    if (pm.observed[v]) continue;
    const Eigen::VectorXd& b = q.singleton[v];
    if (b.size() != pm.cards[v]) throw Error(ErrorCode::Structure, "singleton belief has the wrong size");
    const double d = static_cast<double>(pm.degree(static_cast<int>(v)));
    for (Eigen::Index x = 0; x < b.size(); ++x) {
      f -= xlogy(b(x), pm.unary[v](x));
      f -= (d - 1.0) * xlogy(b(x), b(x));
    }
  }
  for (std::size_t e = 0; e < pm.edges.size(); ++e) {
    const Eigen::MatrixXd& b = q.pairwise[e];
    const Eigen::MatrixXd& psi = pm.pairwise[e];
    if (b.rows() != psi.rows() || b.cols() != psi.cols())
      throw Error(ErrorCode::Structure, "pairwise belief has the wrong shape");
    for (Eigen::Index x = 0; x < b.rows(); ++x)
      for (Eigen::Index y = 0; y < b.cols(); ++y) {
        f -= xlogy(b(x, y), psi(x, y));
        f += xlogy(b(x, y), b(x, y));
      }
  }
  return f;
}

double bethe_free_energy(const GraphicalModel& m, const PseudoMarginals& q) {
  return bethe_free_energy(to_pairwise(m), q);
}

}  // namespace gm

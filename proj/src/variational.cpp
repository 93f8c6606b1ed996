#include "gm/variational.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace gm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace

PottsModel::PottsModel(Eigen::VectorXd a, std::vector<Coupling> couplings, double log_constant)
    : a_(std::move(a)), couplings_(std::move(couplings)), log_constant_(log_constant) {
  nbrs_.resize(static_cast<std::size_t>(a_.size()));
  for (const Coupling& c : couplings_) {
    if (c.i < 0 || c.j < 0 || c.i >= n() || c.j >= n())
      throw Error(ErrorCode::Structure, "coupling endpoint out of range");
    if (c.i == c.j) throw Error(ErrorCode::Structure, "coupling endpoints must differ");
    nbrs_[static_cast<std::size_t>(c.i)].emplace_back(c.j, c.b);
    nbrs_[static_cast<std::size_t>(c.j)].emplace_back(c.i, c.b);
  }
}

double PottsModel::field(int i, const Eigen::VectorXd& q) const {
  double h = a_(i);
  for (const auto& [j, b] : nbrs_[static_cast<std::size_t>(i)]) h += b * q(j);
  return h;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double mf_objective(const PottsModel& m, const Eigen::VectorXd& q) {
  if (q.size() != m.n()) throw Error(ErrorCode::Structure, "q has the wrong length");
  double f = 0.0;
  for (int i = 0; i < m.n(); ++i) {
    if (!(q(i) >= 0.0 && q(i) <= 1.0)) throw Error(ErrorCode::Domain, "q_i outside [0, 1]");
    f += xlogx(q(i)) + xlogx(1.0 - q(i)) - m.a()(i) * q(i);
  }
  for (const Coupling& c : m.couplings()) f -= c.b * q(c.i) * q(c.j);
  return f;
}

MeanFieldState mean_field_fit(const PottsModel& m, const MeanFieldOptions& opts) {
  if (!(opts.tol > 0.0)) throw Error(ErrorCode::Parameter, "tolerance must be positive");
  MeanFieldState st;
  st.q = Eigen::VectorXd::Constant(m.n(), 0.5);
  if (opts.init == MeanFieldInit::Random) {
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < m.n(); ++i) st.q(i) = u(rng);
  }
  auto residual = [&] {
    double r = 0.0;
    for (int i = 0; i < m.n(); ++i) r = std::max(r, std::abs(st.q(i) - sigmoid(m.field(i, st.q))));
    return r;
  };
  st.objective_trace.push_back(mf_objective(m, st.q));
  st.residual = residual();
  st.converged = st.residual < opts.tol;
  while (!st.converged && st.iterations < opts.max_iter) {
    for (int i = 0; i < m.n(); ++i) st.q(i) = sigmoid(m.field(i, st.q));
    ++st.iterations;
    st.objective_trace.push_back(mf_objective(m, st.q));
    st.residual = residual();
    st.converged = st.residual < opts.tol;
  }
  st.free_energy = st.objective_trace.back();
  return st;
}

double kl_divergence(const std::vector<Eigen::VectorXd>& q, const GraphicalModel& m,
                     std::size_t max_states) {
  const int n = m.num_variables();
  if (static_cast<int>(q.size()) != n) throw Error(ErrorCode::Structure, "q has the wrong length");
  const std::vector<int> free = m.free_variables();
  std::size_t states = 1;
  for (int v : free) {
    if (q[static_cast<std::size_t>(v)].size() != m.cardinality(v))
      throw Error(ErrorCode::Structure, "q over variable " + std::to_string(v) + " has the wrong size");
    states *= static_cast<std::size_t>(m.cardinality(v));
    if (states > max_states) throw Error(ErrorCode::OracleTooLarge, "state space exceeds the oracle cap");
  }
  std::vector<int> x(static_cast<std::size_t>(n), 0);
  for (const auto& [var, value] : m.evidence().assignments) x[static_cast<std::size_t>(var)] = value;

  double log_z = -kInf;
  double cross = 0.0;  // sum q ln p~
  double neg_h = 0.0;  // sum q ln q
  bool violated = false;
  for (std::size_t s = 0; s < states; ++s) {
    double lq = 0.0;
    for (int v : free) {
      const double qv = q[static_cast<std::size_t>(v)](x[static_cast<std::size_t>(v)]);
      lq = qv > 0.0 ? lq + std::log(qv) : -kInf;
    }
    const double lp = log_evaluate(m, x);
    log_z = log_add_exp(log_z, lp);
    if (lq > -kInf) {
      const double w = std::exp(lq);
      if (lp == -kInf)
        violated = true;
      else
        cross += w * lp;
      neg_h += w * lq;
    }
    for (std::size_t k = free.size(); k-- > 0;) {
      auto& d = x[static_cast<std::size_t>(free[k])];
      if (++d < m.cardinality(free[k])) break;
      d = 0;
    }
  }
  if (violated) return kInf;
  return neg_h - cross + log_z;
}

double kl_divergence(const Eigen::VectorXd& q, const GraphicalModel& m, std::size_t max_states) {
  std::vector<Eigen::VectorXd> full;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    Eigen::VectorXd d(2);
    d << 1.0 - q(i), q(i);
    full.push_back(std::move(d));
  }
  return kl_divergence(full, m, max_states);
}

GraphicalModel to_graphical_model(const PottsModel& m) {
  std::vector<Factor> factors;
  for (int i = 0; i < m.n(); ++i) {
    Eigen::ArrayXd v(2);
    v << 1.0, std::exp(m.a()(i));
    factors.emplace_back(std::vector<int>{i}, std::vector<int>{2}, std::move(v));
  }
  for (const Coupling& c : m.couplings()) {
    Eigen::ArrayXd v(4);
    v << 1.0, 1.0, 1.0, std::exp(c.b);
    factors.emplace_back(std::vector<int>{std::min(c.i, c.j), std::max(c.i, c.j)},
                         std::vector<int>{2, 2}, std::move(v));
  }
  if (m.log_constant() != 0.0) factors.push_back(Factor::scalar(std::exp(m.log_constant())));
  const std::vector<int> cards(static_cast<std::size_t>(m.n()), 2);
  return GraphicalModel(cards, std::move(factors));
}

PottsModel potts_from_binary_model(const GraphicalModel& m) {
  if (!m.evidence().empty()) throw Error(ErrorCode::Structure, "model carries evidence");
  for (const auto& v : m.variables())
    if (v.cardinality != 2) throw Error(ErrorCode::Domain, "Potts conversion needs binary variables");
  Eigen::VectorXd a = Eigen::VectorXd::Zero(m.num_variables());
  std::vector<Coupling> couplings;
  double c0 = 0.0;
  for (const Factor& raw : m.factors()) {
    const Factor f = raw.to_log();
    const auto& l = f.values();
    if (!l.isFinite().all()) throw Error(ErrorCode::Domain, "Potts conversion needs positive factors");
    if (f.arity() > 2) throw Error(ErrorCode::Arity, "Potts conversion needs unary or pairwise factors");
    if (f.arity() == 0) {
      c0 += l(0);
    } else if (f.arity() == 1) {
      c0 += l(0);
      a(f.scope()[0]) += l(1) - l(0);
    } else {
      // l(x_i, x_j) = l00 + (l10 - l00) x_i + (l01 - l00) x_j + (l11 - l10 - l01 + l00) x_i x_j
      c0 += l(0);
      a(f.scope()[0]) += l(2) - l(0);
      a(f.scope()[1]) += l(1) - l(0);
      couplings.push_back({f.scope()[0], f.scope()[1], l(3) - l(2) - l(1) + l(0)});
    }
  }
  return PottsModel(std::move(a), std::move(couplings), c0);
}

}  // namespace gm

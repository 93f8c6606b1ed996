#include "gm/chmm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace gm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double u01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

int categorical(std::mt19937_64& g, const Eigen::VectorXd& w) {
  const double total = w.sum();
  if (!(total > 0.0)) throw Error(ErrorCode::Parameter, "cannot sample from an all-zero table");
  const double u = u01(g) * total;
  double acc = 0.0;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    acc += w(k);
    if (u < acc) return static_cast<int>(k);
  }
  for (Eigen::Index k = w.size(); k-- > 0;)
    if (w(k) > 0.0) return static_cast<int>(k);
  return 0;
}

// sum_k w_k l_k with 0 * (-inf) = 0.
double edot(const Eigen::Ref<const Eigen::VectorXd>& w, const Eigen::Ref<const Eigen::VectorXd>& l) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < w.size(); ++k)
    if (w(k) != 0.0) {
      if (l(k) == -kInf) return -kInf;
      s += w(k) * l(k);
    }
  return s;
}

double emat_dot(const Eigen::MatrixXd& w, const Eigen::MatrixXd& l) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      if (w(r, c) != 0.0) {
        if (l(r, c) == -kInf) return -kInf;
        s += w(r, c) * l(r, c);
      }
  return s;
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

std::size_t checked_power(int base, int exp, std::size_t cap) {
  std::size_t v = 1;
  for (int k = 0; k < exp; ++k) {
    v *= static_cast<std::size_t>(base);
    if (v > cap) return cap + 1;
  }
  return v;
}

bool row_normalizable(const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    if (!(m.row(r).sum() > 0.0)) return false;
  return true;
}

struct FbCore {
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd xi_sum;
  std::vector<Eigen::MatrixXd> xi;
  double log_likelihood = 0.0;
};

// Scaled forward-backward with an explicit S x T emission matrix.
FbCore fb_core(const Eigen::VectorXd& init, const Eigen::MatrixXd& trans, const Eigen::MatrixXd& e,
               bool keep_xi, std::uint64_t* ops = nullptr) {
  const Eigen::Index S = init.size();
  const Eigen::Index T = e.cols();
  Eigen::MatrixXd alpha(S, T), beta(S, T);
  Eigen::VectorXd c(T);
  FbCore out;
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::VectorXd a = t == 0 ? Eigen::VectorXd(init.cwiseProduct(e.col(0)))
                               : Eigen::VectorXd((trans.transpose() * alpha.col(t - 1)).cwiseProduct(e.col(t)));
    c(t) = a.sum();
    if (!(c(t) > 0.0) || !std::isfinite(c(t)))
      throw Error(ErrorCode::ImpossibleObservation,
                  "observations have zero likelihood at time " + std::to_string(t));
    alpha.col(t) = a / c(t);
    out.log_likelihood += std::log(c(t));
  }
  beta.col(T - 1).setOnes();
  for (Eigen::Index t = T - 1; t-- > 0;)
    beta.col(t) = trans * e.col(t + 1).cwiseProduct(beta.col(t + 1)) / c(t + 1);
  out.gamma = (alpha.array() * beta.array()).matrix().transpose();
  out.xi_sum = Eigen::MatrixXd::Zero(S, S);
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    const Eigen::VectorXd right = e.col(t + 1).cwiseProduct(beta.col(t + 1)) / c(t + 1);
    Eigen::MatrixXd x = alpha.col(t).asDiagonal() * trans * right.asDiagonal();
    out.xi_sum += x;
    if (keep_xi) out.xi.push_back(std::move(x));
  }
  if (ops) *ops += static_cast<std::uint64_t>(4 * T * S * S);
  return out;
}

Eigen::MatrixXd safe_log(const Eigen::MatrixXd& m) {
  return m.unaryExpr([](double v) { return v > 0.0 ? std::log(v) : -kInf; });
}

}  // namespace

// ---------------------------------------------------------------- params

void CHMMParams::validate() const {
  if (I < 1 || T < 1 || K < 1 || M < 1) throw Error(ErrorCode::Parameter, "I, T, K, M must be >= 1");
  auto check = [&](const Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c, const char* name) {
    if (m.rows() != r || m.cols() != c)
      throw Error(ErrorCode::Parameter, std::string(name) + " table has the wrong shape");
    if (m.hasNaN() || (m.array() < 0.0).any())
      throw Error(ErrorCode::Parameter, std::string(name) + " table must be nonnegative");
  };
  check(init, K, 1, "initial");
  check(transition, K, K, "transition");
  check(emission, K, M, "emission");
  if (!(init.sum() > 0.0)) throw Error(ErrorCode::Parameter, "initial table is all zero");
  if (!row_normalizable(transition)) throw Error(ErrorCode::Parameter, "transition row is all zero");
  if (!row_normalizable(emission)) throw Error(ErrorCode::Parameter, "emission row is all zero");
  if (coupling_kind == CouplingKind::Pairwise) {
    check(coupling_pair, K, K, "coupling");
    const double scale = std::max(1.0, coupling_pair.cwiseAbs().maxCoeff());
    if ((coupling_pair - coupling_pair.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw Error(ErrorCode::Parameter, "pairwise coupling table must be symmetric");
  } else {
    const std::size_t cells = checked_power(K, I, 1u << 26);
    if (cells > (1u << 26)) throw Error(ErrorCode::Parameter, "full coupling table too large");
    check(coupling_full, static_cast<Eigen::Index>(cells), 1, "coupling");
  }
}

void validate_observations(const CHMMParams& p, const Observations& obs) {
  if (obs.rows() != p.T || obs.cols() != p.I)
    throw Error(ErrorCode::Parameter, "observation grid must be T x I = " + std::to_string(p.T) +
                                          " x " + std::to_string(p.I));
  if ((obs.array() < 0).any() || (obs.array() >= p.M).any())
    throw Error(ErrorCode::Parameter, "observed symbol outside 0..M-1");
}

double coupling_value(const CHMMParams& p, const std::vector<int>& h) {
  if (p.coupling_kind == CouplingKind::Pairwise) {
    double v = 1.0;
    for (int i = 0; i < p.I; ++i)
      for (int j = i + 1; j < p.I; ++j) v *= p.coupling_pair(h[static_cast<std::size_t>(i)], h[static_cast<std::size_t>(j)]);
    return v;
  }
  std::size_t idx = 0;
  for (int i = 0; i < p.I; ++i)
    idx = idx * static_cast<std::size_t>(p.K) + static_cast<std::size_t>(h[static_cast<std::size_t>(i)]);
  return p.coupling_full(static_cast<Eigen::Index>(idx));
}

GraphicalModel build_chmm(const CHMMParams& p) {
  p.validate();
  std::vector<int> cards(static_cast<std::size_t>(2 * p.I * p.T));
  for (int v = 0; v < p.I * p.T; ++v) {
    cards[static_cast<std::size_t>(v)] = p.K;
    cards[static_cast<std::size_t>(p.I * p.T + v)] = p.M;
  }
  auto flat = [](const Eigen::MatrixXd& m) {
    Eigen::ArrayXd v(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) v(r * m.cols() + c) = m(r, c);
    return v;
  };
  std::vector<Factor> factors;
  for (int i = 0; i < p.I; ++i)
    factors.emplace_back(std::vector<int>{p.hidden_id(0, i)}, std::vector<int>{p.K}, p.init.array());
  for (int i = 0; i < p.I; ++i)
    for (int t = 1; t < p.T; ++t)
      factors.emplace_back(std::vector<int>{p.hidden_id(t - 1, i), p.hidden_id(t, i)},
                           std::vector<int>{p.K, p.K}, flat(p.transition));
  for (int t = 0; t < p.T; ++t) {
    if (p.coupling_kind == CouplingKind::Pairwise) {
      for (int i = 0; i < p.I; ++i)
        for (int j = i + 1; j < p.I; ++j)
          factors.emplace_back(std::vector<int>{p.hidden_id(t, i), p.hidden_id(t, j)},
                               std::vector<int>{p.K, p.K}, flat(p.coupling_pair));
    } else {
      std::vector<int> scope, cs;
      for (int i = 0; i < p.I; ++i) {
        scope.push_back(p.hidden_id(t, i));
        cs.push_back(p.K);
      }
      factors.emplace_back(std::move(scope), std::move(cs), p.coupling_full.array());
    }
  }
  for (int i = 0; i < p.I; ++i)
    for (int t = 0; t < p.T; ++t)
      factors.emplace_back(std::vector<int>{p.hidden_id(t, i), p.observed_id(t, i)},
                           std::vector<int>{p.K, p.M}, flat(p.emission));
  return GraphicalModel(cards, std::move(factors));
}

Evidence observation_evidence(const CHMMParams& p, const Observations& obs) {
  validate_observations(p, obs);
  Evidence e;
  for (int t = 0; t < p.T; ++t)
    for (int i = 0; i < p.I; ++i) e.assignments[p.observed_id(t, i)] = obs(t, i);
  return e;
}

// ------------------------------------------------------------ merged HMM

int MergedHMM::digit(int s, int chain) const {
  for (int k = chain + 1; k < I; ++k) s /= K;
  return s % K;
}

std::vector<int> MergedHMM::decode(int s) const {
  std::vector<int> h(static_cast<std::size_t>(I));
  for (int i = I; i-- > 0;) {
    h[static_cast<std::size_t>(i)] = s % K;
    s /= K;
  }
  return h;
}

Eigen::VectorXd MergedHMM::emission_column(const Observations& obs, int t) const {
  Eigen::VectorXd col(S);
  for (int s = 0; s < S; ++s) {
    double v = 1.0;
    int rest = s;
    for (int i = I; i-- > 0;) {
      v *= emission(rest % K, obs(t, i));
      rest /= K;
    }
    col(s) = v;
  }
  return col;
}

MergedHMM merge_hidden(const CHMMParams& p, int cap) {
  p.validate();
  const std::size_t states = checked_power(p.K, p.I, static_cast<std::size_t>(cap));
  if (states > static_cast<std::size_t>(cap))
    throw Error(ErrorCode::Capacity, "K^I exceeds the merge cap of " + std::to_string(cap) +
                                         "; use a variational E-step");
  MergedHMM h;
  h.I = p.I;
  h.K = p.K;
  h.S = static_cast<int>(states);
  h.emission = p.emission;
  Eigen::VectorXd coupling(h.S);
  std::vector<std::vector<int>> digits(states);
  for (int s = 0; s < h.S; ++s) {
    digits[static_cast<std::size_t>(s)] = h.decode(s);
    coupling(s) = coupling_value(p, digits[static_cast<std::size_t>(s)]);
  }
  h.init.resize(h.S);
  for (int s = 0; s < h.S; ++s) {
    double v = coupling(s);
    for (int d : digits[static_cast<std::size_t>(s)]) v *= p.init(d);
    h.init(s) = v;
  }
  // Kronecker product of per-chain transitions, chain 0 most significant.
  Eigen::MatrixXd kron = Eigen::MatrixXd::Ones(1, 1);
  for (int i = 0; i < p.I; ++i) {
    Eigen::MatrixXd next(kron.rows() * p.K, kron.cols() * p.K);
    for (Eigen::Index r = 0; r < kron.rows(); ++r)
      for (Eigen::Index c = 0; c < kron.cols(); ++c)
        next.block(r * p.K, c * p.K, p.K, p.K) = kron(r, c) * p.transition;
    kron = std::move(next);
  }
  h.transition = kron * coupling.asDiagonal();
  return h;
}

ForwardBackwardResult forward_backward(const MergedHMM& hmm, const Observations& obs, bool keep_xi) {
  if (obs.cols() != hmm.I || obs.rows() < 1)
    throw Error(ErrorCode::Parameter, "observation grid does not match the model");
  if ((obs.array() < 0).any() || (obs.array() >= hmm.emission.cols()).any())
    throw Error(ErrorCode::Parameter, "observed symbol outside 0..M-1");
  Eigen::MatrixXd e(hmm.S, obs.rows());
  for (Eigen::Index t = 0; t < obs.rows(); ++t) e.col(t) = hmm.emission_column(obs, static_cast<int>(t));
  FbCore core = fb_core(hmm.init, hmm.transition, e, keep_xi);
  return {std::move(core.gamma), std::move(core.xi_sum), std::move(core.xi), core.log_likelihood};
}

ViterbiResult viterbi(const MergedHMM& hmm, const Observations& obs) {
  if (obs.cols() != hmm.I || obs.rows() < 1)
    throw Error(ErrorCode::Parameter, "observation grid does not match the model");
  if ((obs.array() < 0).any() || (obs.array() >= hmm.emission.cols()).any())
    throw Error(ErrorCode::Parameter, "observed symbol outside 0..M-1");
  const int S = hmm.S;
  const auto T = static_cast<int>(obs.rows());
  const Eigen::MatrixXd log_a = safe_log(hmm.transition);
  std::vector<Eigen::VectorXd> log_e;
  for (int t = 0; t < T; ++t) log_e.push_back(safe_log(hmm.emission_column(obs, t)));
  // future(t)(s): best log weight of steps t+1..T-1 given state s at t
  std::vector<Eigen::VectorXd> future(static_cast<std::size_t>(T), Eigen::VectorXd::Zero(S));
  for (int t = T - 1; t-- > 0;) {
    const auto tt = static_cast<std::size_t>(t);
    for (int a = 0; a < S; ++a) {
      double best = -kInf;
      for (int b = 0; b < S; ++b) best = std::max(best, log_a(a, b) + log_e[tt + 1](b) + future[tt + 1](b));
      future[tt](a) = best;
    }
  }
  // Forward decode picks the lowest state within rounding of the optimum, so
  // tied paths resolve to the lexicographically smallest one.
  auto pick = [S](const Eigen::VectorXd& score) {
    const double mx = score.maxCoeff();
    if (mx == -kInf) return -1;
    const double slack = 1e-12 * std::max(1.0, std::abs(mx));
    for (int k = 0; k < S; ++k)
      if (score(k) >= mx - slack) return k;
    return -1;
  };
  ViterbiResult out;
  out.states.assign(static_cast<std::size_t>(T), 0);
  Eigen::VectorXd score = safe_log(hmm.init) + log_e[0] + future[0];
  int s = pick(score);
  if (s < 0) throw Error(ErrorCode::ImpossibleObservation, "observations have zero likelihood");
  out.log_prob = safe_log(hmm.init)(s) + log_e[0](s);
  out.states[0] = s;
  for (int t = 1; t < T; ++t) {
    const auto tt = static_cast<std::size_t>(t);
    score = log_a.row(s).transpose() + log_e[tt] + future[tt];
    const int next = pick(score);
    out.log_prob += log_a(s, next) + log_e[tt](next);
    s = next;
    out.states[tt] = s;
  }
  out.path.resize(T, hmm.I);
  for (int t = 0; t < T; ++t) {
    const auto h = hmm.decode(out.states[static_cast<std::size_t>(t)]);
    for (int i = 0; i < hmm.I; ++i) out.path(t, i) = h[static_cast<std::size_t>(i)];
  }
  return out;
}

double chmm_log_likelihood(const CHMMParams& p, const Observations& obs, int cap) {
  validate_observations(p, obs);
  return forward_backward(merge_hidden(p, cap), obs).log_likelihood;
}

// -------------------------------------------------------------- counts

namespace {

ExpectedCounts zero_counts(const CHMMParams& p) {
  ExpectedCounts c;
  c.init = Eigen::VectorXd::Zero(p.K);
  c.transition = Eigen::MatrixXd::Zero(p.K, p.K);
  c.emission = Eigen::MatrixXd::Zero(p.K, p.M);
  c.coupling_pair = Eigen::MatrixXd::Zero(p.K, p.K);
  if (p.coupling_kind == CouplingKind::Full) c.coupling_full = Eigen::VectorXd::Zero(p.coupling_full.size());
  return c;
}

}  // namespace

ExpectedCounts exact_counts(const CHMMParams& p, const MergedHMM& hmm, const Observations& obs,
                            const ForwardBackwardResult& fb) {
  ExpectedCounts c = zero_counts(p);
  const int S = hmm.S;
  Eigen::MatrixXi dig(S, p.I);
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < p.I; ++i) dig(s, i) = hmm.digit(s, i);
  for (int t = 0; t < p.T; ++t)
    for (int s = 0; s < S; ++s) {
      const double g = fb.gamma(t, s);
      if (g == 0.0) continue;
      for (int i = 0; i < p.I; ++i) {
        if (t == 0) c.init(dig(s, i)) += g;
        c.emission(dig(s, i), obs(t, i)) += g;
        if (p.coupling_kind == CouplingKind::Pairwise)
          for (int j = i + 1; j < p.I; ++j) c.coupling_pair(dig(s, i), dig(s, j)) += g;
      }
      if (p.coupling_kind == CouplingKind::Full) c.coupling_full(s) += g;
    }
  for (int a = 0; a < S; ++a)
    for (int b = 0; b < S; ++b) {
      const double x = fb.xi_sum(a, b);
      if (x == 0.0) continue;
      for (int i = 0; i < p.I; ++i) c.transition(dig(a, i), dig(b, i)) += x;
    }
  return c;
}

CHMMParams m_step(const CHMMParams& p, const ExpectedCounts& c) {
  CHMMParams q = p;
  if (c.init.sum() > 0.0) q.init = c.init / c.init.sum();
  for (int r = 0; r < p.K; ++r) {
    const double ts = c.transition.row(r).sum();
    if (ts > 0.0) q.transition.row(r) = c.transition.row(r) / ts;
    const double es = c.emission.row(r).sum();
    if (es > 0.0) q.emission.row(r) = c.emission.row(r) / es;
  }
  if (p.coupling_kind == CouplingKind::Pairwise) {
    const Eigen::MatrixXd sym = 0.5 * (c.coupling_pair + c.coupling_pair.transpose());
    if (sym.sum() > 0.0) q.coupling_pair = sym / sym.sum();
  } else if (c.coupling_full.sum() > 0.0) {
    q.coupling_full = c.coupling_full / c.coupling_full.sum();
  }
  return q;
}

EMResult exact_em(const CHMMParams& p0, const Observations& obs, const EMOptions& opts) {
  validate_observations(p0, obs);
  const auto start = Clock::now();
  EMResult out;
  out.params = p0;
  for (int k = 0;; ++k) {
    const MergedHMM hmm = merge_hidden(out.params, opts.merge_cap);
    const ForwardBackwardResult fb = forward_backward(hmm, obs);
    out.trace.iterations.push_back({k, fb.log_likelihood, seconds_since(start), out.params});
    if (k >= opts.iterations) break;
    if (k > 0 && opts.rel_tol > 0.0) {
      const double prev = out.trace.iterations[static_cast<std::size_t>(k - 1)].objective;
      if (std::abs(fb.log_likelihood - prev) < opts.rel_tol * std::abs(prev)) break;
    }
    out.params = m_step(out.params, exact_counts(out.params, hmm, obs, fb));
  }
  return out;
}

// ---------------------------------------------------------- variational

namespace {

struct LogTables {
  Eigen::VectorXd init;
  Eigen::MatrixXd trans;
  Eigen::MatrixXd emis;
  Eigen::MatrixXd pair;
  Eigen::VectorXd full;
  bool pair_finite = true;
};

LogTables log_tables(const CHMMParams& p) {
  LogTables l;
  l.init = safe_log(p.init);
  l.trans = safe_log(p.transition);
  l.emis = safe_log(p.emission);
  if (p.coupling_kind == CouplingKind::Pairwise) {
    l.pair = safe_log(p.coupling_pair);
    l.pair_finite = l.pair.allFinite();
  } else {
    l.full = safe_log(p.coupling_full);
  }
  return l;
}

// Column t of the per-chain marginals, stacked as K x I.
Eigen::MatrixXd time_slice(const std::vector<Eigen::MatrixXd>& q, int t, int K) {
  Eigen::MatrixXd m(K, static_cast<Eigen::Index>(q.size()));
  for (std::size_t i = 0; i < q.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = q[i].row(t).transpose();
  return m;
}

// Expected log coupling for chain i at time t as a function of its own value,
// given the other chains' marginals at t. `total` is sum_j q_jt.
Eigen::VectorXd coupling_field(const CHMMParams& p, const LogTables& l,
                               const std::vector<Eigen::MatrixXd>& q, int t, int i,
                               const Eigen::VectorXd& total, std::uint64_t& ops) {
  const int K = p.K;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(K);
  if (p.coupling_kind == CouplingKind::Pairwise) {
    if (p.I == 1) return u;
    if (l.pair_finite) {
      u = l.pair * (total - q[static_cast<std::size_t>(i)].row(t).transpose());
      ops += static_cast<std::uint64_t>(K * K);
      return u;
    }
    for (int j = 0; j < p.I; ++j) {
      if (j == i) continue;
      const Eigen::VectorXd qj = q[static_cast<std::size_t>(j)].row(t).transpose();
      for (int k = 0; k < K; ++k) u(k) += edot(qj, l.pair.row(k).transpose());
      ops += static_cast<std::uint64_t>(K * K);
    }
    return u;
  }
  // Full table: weight of each joint cell from the other chains.
  const auto cells = static_cast<int>(l.full.size());
  std::vector<int> h(static_cast<std::size_t>(p.I), 0);
  for (int s = 0; s < cells; ++s) {
    double w = 1.0;
    for (int j = 0; j < p.I; ++j)
      if (j != i) w *= q[static_cast<std::size_t>(j)](t, h[static_cast<std::size_t>(j)]);
    if (w != 0.0) {
      double& slot = u(h[static_cast<std::size_t>(i)]);
      slot = l.full(s) == -kInf || slot == -kInf ? -kInf : slot + w * l.full(s);
    }
    for (int j = p.I; j-- > 0;) {
      if (++h[static_cast<std::size_t>(j)] < p.K) break;
      h[static_cast<std::size_t>(j)] = 0;
    }
  }
  ops += static_cast<std::uint64_t>(cells);
  return u;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& score) {
  const double mx = score.maxCoeff();
  if (mx == -kInf) throw Error(ErrorCode::ImpossibleObservation, "every hidden state has zero weight");
  Eigen::VectorXd e = (score.array() - mx).exp().matrix();
  return e / e.sum();
}

double coupling_energy(const CHMMParams& p, const LogTables& l, const std::vector<Eigen::MatrixXd>& q) {
  double f = 0.0;
  for (int t = 0; t < p.T; ++t) {
    const Eigen::MatrixXd slice = time_slice(q, t, p.K);
    if (p.coupling_kind == CouplingKind::Pairwise) {
      if (p.I == 1) continue;
      if (l.pair_finite) {
        const Eigen::VectorXd s = slice.rowwise().sum();
        double self = 0.0;
        for (int i = 0; i < p.I; ++i) self += slice.col(i).dot(l.pair * slice.col(i));
        f += 0.5 * (s.dot(l.pair * s) - self);
      } else {
        for (int i = 0; i < p.I; ++i)
          for (int j = i + 1; j < p.I; ++j)
            f += emat_dot(slice.col(i) * slice.col(j).transpose(), l.pair);
      }
    } else {
      std::vector<int> h(static_cast<std::size_t>(p.I), 0);
      for (Eigen::Index s = 0; s < l.full.size(); ++s) {
        double w = 1.0;
        for (int i = 0; i < p.I; ++i) w *= slice(h[static_cast<std::size_t>(i)], i);
        if (w != 0.0) f = l.full(s) == -kInf ? -kInf : f + w * l.full(s);
        for (int j = p.I; j-- > 0;) {
          if (++h[static_cast<std::size_t>(j)] < p.K) break;
          h[static_cast<std::size_t>(j)] = 0;
        }
      }
    }
  }
  return f;
}

void check_full_cap(const CHMMParams& p, const VariationalOptions& opts) {
  if (p.coupling_kind == CouplingKind::Full &&
      checked_power(p.K, p.I, static_cast<std::size_t>(opts.full_coupling_cap)) >
          static_cast<std::size_t>(opts.full_coupling_cap))
    throw Error(ErrorCode::Capacity, "full coupling table exceeds the cap; use pairwise coupling");
}

bool warm_start_ok(const CHMMParams& p, VariationalFamily family, const VariationalPosterior* start) {
  if (!start || start->family != family || static_cast<int>(start->marginals.size()) != p.I) return false;
  for (const auto& m : start->marginals)
    if (m.rows() != p.T || m.cols() != p.K) return false;
  if (family == VariationalFamily::QM)
    for (const auto& c : start->chain_pairs)
      if (static_cast<int>(c.size()) != p.T - 1) return false;
  return true;
}

VariationalPosterior uniform_posterior(const CHMMParams& p, VariationalFamily family) {
  VariationalPosterior q;
  q.family = family;
  q.marginals.assign(static_cast<std::size_t>(p.I), Eigen::MatrixXd::Constant(p.T, p.K, 1.0 / p.K));
  if (family == VariationalFamily::QM)
    q.chain_pairs.assign(static_cast<std::size_t>(p.I),
                         std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(std::max(0, p.T - 1)),
                                                      Eigen::MatrixXd::Constant(p.K, p.K, 1.0 / (p.K * p.K))));
  return q;
}

VariationalPosterior bethe_e_step(const CHMMParams& p, const Observations& obs,
                                  const VariationalOptions& opts) {
  if (p.coupling_kind == CouplingKind::Full && p.I >= 3)
    throw Error(ErrorCode::Arity, "the Bethe E-step needs pairwise coupling when I >= 3");
  const int n = p.I * p.T;
  auto flat = [](const Eigen::MatrixXd& m) {
    Eigen::ArrayXd v(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) v(r * m.cols() + c) = m(r, c);
    return v;
  };
  std::vector<Factor> factors;
  for (int t = 0; t < p.T; ++t)
    for (int i = 0; i < p.I; ++i) {
      Eigen::ArrayXd u = p.emission.col(obs(t, i)).array();
      if (t == 0) u *= p.init.array();
      if (p.coupling_kind == CouplingKind::Full && p.I == 1) u *= p.coupling_full.array();
      factors.emplace_back(std::vector<int>{p.hidden_id(t, i)}, std::vector<int>{p.K}, std::move(u));
      if (t > 0)
        factors.emplace_back(std::vector<int>{p.hidden_id(t - 1, i), p.hidden_id(t, i)},
                             std::vector<int>{p.K, p.K}, flat(p.transition));
    }
  for (int t = 0; t < p.T; ++t)
    for (int i = 0; i < p.I; ++i)
      for (int j = i + 1; j < p.I; ++j) {
        Eigen::ArrayXd v = p.coupling_kind == CouplingKind::Pairwise ? flat(p.coupling_pair)
                                                                     : Eigen::ArrayXd(p.coupling_full.array());
        factors.emplace_back(std::vector<int>{p.hidden_id(t, i), p.hidden_id(t, j)},
                             std::vector<int>{p.K, p.K}, std::move(v));
      }
  const std::vector<int> cards(static_cast<std::size_t>(n), p.K);
  const PairwiseModel pm = to_pairwise(GraphicalModel(cards, std::move(factors)));
  const LbpResult r = loopy_bp(pm, Semiring::sum_product(), opts.lbp);

  VariationalPosterior q;
  q.family = VariationalFamily::Bethe;
  q.converged = r.converged;
  q.sweeps = r.iterations;
  q.operations = static_cast<std::uint64_t>(r.iterations) * 2 * pm.edges.size() *
                 static_cast<std::uint64_t>(p.K * p.K);
  q.F = -bethe_free_energy(pm, r.beliefs);
  q.sweep_trace.push_back(q.F);
  std::map<Edge, int> edge_index;
  for (std::size_t e = 0; e < pm.edges.size(); ++e) edge_index[pm.edges[e]] = static_cast<int>(e);
  q.marginals.assign(static_cast<std::size_t>(p.I), Eigen::MatrixXd(p.T, p.K));
  q.chain_pairs.assign(static_cast<std::size_t>(p.I), {});
  q.coupling_pairs.assign(static_cast<std::size_t>(p.T), {});
  for (int t = 0; t < p.T; ++t)
    for (int i = 0; i < p.I; ++i) {
      q.marginals[static_cast<std::size_t>(i)].row(t) =
          r.beliefs.singleton[static_cast<std::size_t>(p.hidden_id(t, i))].transpose();
      if (t > 0)
        q.chain_pairs[static_cast<std::size_t>(i)].push_back(r.beliefs.pairwise[static_cast<std::size_t>(
            edge_index.at({p.hidden_id(t - 1, i), p.hidden_id(t, i)}))]);
      for (int j = i + 1; j < p.I; ++j)
        q.coupling_pairs[static_cast<std::size_t>(t)].push_back(r.beliefs.pairwise[static_cast<std::size_t>(
            edge_index.at({p.hidden_id(t, i), p.hidden_id(t, j)}))]);
    }
  return q;
}

}  // namespace

double variational_objective(const CHMMParams& p, const Observations& obs, const VariationalPosterior& q) {
  if (q.family == VariationalFamily::Bethe)
    throw Error(ErrorCode::Parameter, "the Bethe family has no product-form objective");
  const LogTables l = log_tables(p);
  double f = 0.0;
  for (int i = 0; i < p.I; ++i) {
    const Eigen::MatrixXd& m = q.marginals[static_cast<std::size_t>(i)];
    f += edot(m.row(0).transpose(), l.init);
    for (int t = 0; t < p.T; ++t) f += edot(m.row(t).transpose(), l.emis.col(obs(t, i)));
    for (int t = 1; t < p.T; ++t) {
      const Eigen::MatrixXd pair = q.family == VariationalFamily::QM
                                       ? q.chain_pairs[static_cast<std::size_t>(i)][static_cast<std::size_t>(t - 1)]
                                       : Eigen::MatrixXd(m.row(t - 1).transpose() * m.row(t));
      f += emat_dot(pair, l.trans);
    }
  }
  f += coupling_energy(p, l, q.marginals);
  if (f == -kInf) return f;
  double h = 0.0;
  for (int i = 0; i < p.I; ++i) {
    const Eigen::MatrixXd& m = q.marginals[static_cast<std::size_t>(i)];
    if (q.family == VariationalFamily::Q0) {
      for (Eigen::Index t = 0; t < m.rows(); ++t)
        for (Eigen::Index k = 0; k < m.cols(); ++k) h -= xlogx(m(t, k));
    } else {
      for (Eigen::Index k = 0; k < m.cols(); ++k) h -= xlogx(m(0, k));
      for (int t = 1; t < p.T; ++t) {
        const Eigen::MatrixXd& x = q.chain_pairs[static_cast<std::size_t>(i)][static_cast<std::size_t>(t - 1)];
        for (Eigen::Index a = 0; a < x.rows(); ++a)
          for (Eigen::Index b = 0; b < x.cols(); ++b)
            if (x(a, b) > 0.0) h -= x(a, b) * std::log(x(a, b) / m(t - 1, a));
      }
    }
  }
  return f + h;
}

double VariationalPosterior::log_prob(const Observations& h) const {
  if (family == VariationalFamily::Bethe)
    throw Error(ErrorCode::Parameter, "Bethe pseudo-marginals do not define a distribution");
  double lp = 0.0;
  for (std::size_t i = 0; i < marginals.size(); ++i) {
    const Eigen::MatrixXd& m = marginals[i];
    const auto col = static_cast<Eigen::Index>(i);
    if (family == VariationalFamily::Q0) {
      for (Eigen::Index t = 0; t < m.rows(); ++t) lp += std::log(m(t, h(t, col)));
    } else {
      lp += std::log(m(0, h(0, col)));
      for (Eigen::Index t = 1; t < m.rows(); ++t)
        lp += std::log(chain_pairs[i][static_cast<std::size_t>(t - 1)](h(t - 1, col), h(t, col)) /
                       m(t - 1, h(t - 1, col)));
    }
  }
  return lp;
}

VariationalPosterior variational_e_step(const CHMMParams& p, const Observations& obs,
                                        VariationalFamily family, const VariationalOptions& opts,
                                        const VariationalPosterior* start) {
  p.validate();
  validate_observations(p, obs);
  check_full_cap(p, opts);
  if (family == VariationalFamily::Bethe) return bethe_e_step(p, obs, opts);

  const LogTables l = log_tables(p);
  const int K = p.K, T = p.T, I = p.I;
  VariationalPosterior q = warm_start_ok(p, family, start) ? *start : uniform_posterior(p, family);
  q.family = family;
  q.sweep_trace.clear();
  q.sweeps = 0;
  q.operations = 0;
  q.converged = false;
  q.coupling_pairs.clear();

  std::vector<Eigen::VectorXd> totals(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) totals[static_cast<std::size_t>(t)] = time_slice(q.marginals, t, K).rowwise().sum();

  double f = variational_objective(p, obs, q);
  q.sweep_trace.push_back(f);
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    for (int i = 0; i < I; ++i) {
      auto& m = q.marginals[static_cast<std::size_t>(i)];
      if (family == VariationalFamily::Q0) {
        for (int t = 0; t < T; ++t) {
          Eigen::VectorXd score = l.emis.col(obs(t, i));
          if (t == 0) score += l.init;
          for (int k = 0; k < K; ++k) {
            if (t > 0) score(k) += edot(m.row(t - 1).transpose(), l.trans.col(k));
            if (t + 1 < T) score(k) += edot(m.row(t + 1).transpose(), l.trans.row(k).transpose());
          }
          q.operations += static_cast<std::uint64_t>(2 * K * K);
          score += coupling_field(p, l, q.marginals, t, i, totals[static_cast<std::size_t>(t)], q.operations);
          const Eigen::VectorXd old = m.row(t).transpose();
          m.row(t) = softmax(score).transpose();
          totals[static_cast<std::size_t>(t)] += m.row(t).transpose() - old;
        }
      } else {
        Eigen::MatrixXd e(K, T);
        for (int t = 0; t < T; ++t) {
          Eigen::VectorXd score = l.emis.col(obs(t, i)) +
                                  coupling_field(p, l, q.marginals, t, i, totals[static_cast<std::size_t>(t)], q.operations);
          const double mx = score.maxCoeff();
          if (mx == -kInf) throw Error(ErrorCode::ImpossibleObservation, "every hidden state has zero weight");
          e.col(t) = (score.array() - mx).exp().matrix();
        }
        FbCore fb = fb_core(p.init, p.transition, e, true, &q.operations);
        for (int t = 0; t < T; ++t) totals[static_cast<std::size_t>(t)] += fb.gamma.row(t).transpose() - m.row(t).transpose();
        m = std::move(fb.gamma);
        q.chain_pairs[static_cast<std::size_t>(i)] = std::move(fb.xi);
      }
    }
    // Drift guard: rebuild the running totals once per sweep.
    for (int t = 0; t < T; ++t) totals[static_cast<std::size_t>(t)] = time_slice(q.marginals, t, K).rowwise().sum();
    const double next = variational_objective(p, obs, q);
    q.sweep_trace.push_back(next);
    q.sweeps = sweep;
    const bool small = std::isfinite(next) && std::isfinite(f) && next - f < opts.tol;
    f = next;
    if (small) {
      q.converged = true;
      break;
    }
  }
  q.F = f;
  return q;
}

ExpectedCounts variational_counts(const CHMMParams& p, const Observations& obs, const VariationalPosterior& q) {
  ExpectedCounts c = zero_counts(p);
  for (int i = 0; i < p.I; ++i) {
    const Eigen::MatrixXd& m = q.marginals[static_cast<std::size_t>(i)];
    c.init += m.row(0).transpose();
    for (int t = 0; t < p.T; ++t) c.emission.col(obs(t, i)) += m.row(t).transpose();
    for (int t = 1; t < p.T; ++t)
      c.transition += q.family == VariationalFamily::Q0
                          ? Eigen::MatrixXd(m.row(t - 1).transpose() * m.row(t))
                          : q.chain_pairs[static_cast<std::size_t>(i)][static_cast<std::size_t>(t - 1)];
  }
  for (int t = 0; t < p.T; ++t) {
    const Eigen::MatrixXd slice = time_slice(q.marginals, t, p.K);
    if (p.coupling_kind == CouplingKind::Pairwise) {
      if (q.family == VariationalFamily::Bethe) {
        for (const auto& b : q.coupling_pairs[static_cast<std::size_t>(t)]) c.coupling_pair += b;
      } else {
        const Eigen::VectorXd s = slice.rowwise().sum();
        c.coupling_pair += 0.5 * (s * s.transpose() - slice * slice.transpose());
      }
    } else if (q.family == VariationalFamily::Bethe && p.I == 2) {
      const Eigen::MatrixXd& b = q.coupling_pairs[static_cast<std::size_t>(t)].front();
      for (int a = 0; a < p.K; ++a)
        for (int d = 0; d < p.K; ++d) c.coupling_full(a * p.K + d) += b(a, d);
    } else {
      std::vector<int> h(static_cast<std::size_t>(p.I), 0);
      for (Eigen::Index s = 0; s < c.coupling_full.size(); ++s) {
        double w = 1.0;
        for (int i = 0; i < p.I; ++i) w *= slice(h[static_cast<std::size_t>(i)], i);
        c.coupling_full(s) += w;
        for (int j = p.I; j-- > 0;) {
          if (++h[static_cast<std::size_t>(j)] < p.K) break;
          h[static_cast<std::size_t>(j)] = 0;
        }
      }
    }
  }
  return c;
}

EMResult variational_em(const CHMMParams& p0, const Observations& obs, VariationalFamily family,
                        const EMOptions& opts, const VariationalOptions& vopts) {
  validate_observations(p0, obs);
  const auto start = Clock::now();
  EMResult out;
  out.params = p0;
  VariationalPosterior q;
  bool have = false;
  for (int k = 0;; ++k) {
    q = variational_e_step(out.params, obs, family, vopts, have ? &q : nullptr);
    have = true;
    out.trace.iterations.push_back({k, q.F, seconds_since(start), out.params});
    if (k >= opts.iterations) break;
    if (k > 0 && opts.rel_tol > 0.0) {
      const double prev = out.trace.iterations[static_cast<std::size_t>(k - 1)].objective;
      if (std::abs(q.F - prev) < opts.rel_tol * std::abs(prev)) break;
    }
    out.params = m_step(out.params, variational_counts(out.params, obs, q));
  }
  return out;
}

// ------------------------------------------------------------- sampling

CHMMParams random_chmm_params(int I, int T, int K, int M, std::uint64_t seed, CouplingKind kind) {
  std::mt19937_64 g(seed);
  auto draw = [&] { return 0.2 + 0.8 * u01(g); };
  CHMMParams p;
  p.I = I;
  p.T = T;
  p.K = K;
  p.M = M;
  p.init.resize(K);
  for (int k = 0; k < K; ++k) p.init(k) = draw();
  p.init /= p.init.sum();
  p.transition.resize(K, K);
  for (int a = 0; a < K; ++a) {
    for (int b = 0; b < K; ++b) p.transition(a, b) = draw();
    p.transition.row(a) /= p.transition.row(a).sum();
  }
  p.emission.resize(K, M);
  for (int a = 0; a < K; ++a) {
    for (int m = 0; m < M; ++m) p.emission(a, m) = draw();
    p.emission.row(a) /= p.emission.row(a).sum();
  }
  p.coupling_kind = kind;
  p.coupling_pair.resize(K, K);
  for (int a = 0; a < K; ++a)
    for (int b = a; b < K; ++b) p.coupling_pair(a, b) = p.coupling_pair(b, a) = draw();
  p.coupling_pair /= p.coupling_pair.sum();
  if (kind == CouplingKind::Full) {
    const std::size_t cells = checked_power(K, I, 1u << 26);
    p.coupling_full.resize(static_cast<Eigen::Index>(cells));
    for (Eigen::Index s = 0; s < p.coupling_full.size(); ++s) p.coupling_full(s) = draw();
    p.coupling_full /= p.coupling_full.sum();
  }
  p.validate();
  return p;
}

CHMMSample sample_chmm(const CHMMParams& p, std::uint64_t seed, int cap, int gibbs_sweeps) {
  p.validate();
  std::mt19937_64 g(seed);
  CHMMSample out;
  out.hidden.resize(p.T, p.I);
  out.observed.resize(p.T, p.I);
  if (checked_power(p.K, p.I, static_cast<std::size_t>(cap)) <= static_cast<std::size_t>(cap)) {
    const MergedHMM h = merge_hidden(p, cap);
    // Backward filter of the prior chain, then forward ancestral draws.
    Eigen::MatrixXd beta(h.S, p.T);
    beta.col(p.T - 1).setOnes();
    for (int t = p.T - 1; t-- > 0;) {
      Eigen::VectorXd b = h.transition * beta.col(t + 1);
      beta.col(t) = b / b.maxCoeff();
    }
    int s = categorical(g, h.init.cwiseProduct(beta.col(0)));
    for (int t = 0; t < p.T; ++t) {
      if (t > 0) s = categorical(g, h.transition.row(s).transpose().cwiseProduct(beta.col(t)));
      const auto d = h.decode(s);
      for (int i = 0; i < p.I; ++i) out.hidden(t, i) = d[static_cast<std::size_t>(i)];
    }
  } else {
    for (int t = 0; t < p.T; ++t)
      for (int i = 0; i < p.I; ++i) out.hidden(t, i) = static_cast<int>(u01(g) * p.K) % p.K;
    std::vector<int> h(static_cast<std::size_t>(p.I));
    for (int sweep = 0; sweep < gibbs_sweeps; ++sweep)
      for (int t = 0; t < p.T; ++t)
        for (int i = 0; i < p.I; ++i) {
          Eigen::VectorXd w(p.K);
          for (int j = 0; j < p.I; ++j) h[static_cast<std::size_t>(j)] = out.hidden(t, j);
          for (int k = 0; k < p.K; ++k) {
            double v = t == 0 ? p.init(k) : p.transition(out.hidden(t - 1, i), k);
            if (t + 1 < p.T) v *= p.transition(k, out.hidden(t + 1, i));
            if (p.coupling_kind == CouplingKind::Pairwise) {
              for (int j = 0; j < p.I; ++j)
                if (j != i) v *= p.coupling_pair(k, out.hidden(t, j));
            } else {
              h[static_cast<std::size_t>(i)] = k;
              v *= coupling_value(p, h);
            }
            w(k) = v;
          }
          out.hidden(t, i) = categorical(g, w);
        }
  }
  for (int t = 0; t < p.T; ++t)
    for (int i = 0; i < p.I; ++i)
      out.observed(t, i) = categorical(g, p.emission.row(out.hidden(t, i)).transpose());
  return out;
}

}  // namespace gm

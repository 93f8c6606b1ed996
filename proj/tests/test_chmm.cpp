#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "gm/chmm.hpp"
#include "gm/elimination.hpp"
#include "gm/graph.hpp"
#include "chmm_oracles.hpp"
#include "support.hpp"

using namespace gm;
using namespace gm::testing;

namespace {

Observations random_obs(std::mt19937_64& rng, int T, int I, int M) {
  std::uniform_int_distribution<int> d(0, M - 1);
  Observations o(T, I);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < I; ++i) o(t, i) = d(rng);
  return o;
}

std::vector<int> full_assignment(const CHMMParams& p, const Observations& h, const Observations& o) {
  std::vector<int> x(static_cast<std::size_t>(2 * p.I * p.T));
  for (int t = 0; t < p.T; ++t)
    for (int i = 0; i < p.I; ++i) {
      x[static_cast<std::size_t>(p.hidden_id(t, i))] = h(t, i);
      x[static_cast<std::size_t>(p.observed_id(t, i))] = o(t, i);
    }
  return x;
}

CHMMParams uniform_coupling(CHMMParams p) {
  p.coupling_pair = Eigen::MatrixXd::Ones(p.K, p.K);
  return p;
}

template <class F>
void expect_error(ErrorCode code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "no error thrown";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace

TEST(BuildChmm, FactorCountForTwoChains) {
  const CHMMParams p = random_chmm_params(2, 2, 2, 3, 1);
  const GraphicalModel m = build_chmm(p);
  EXPECT_EQ(m.num_variables(), 8);
  EXPECT_EQ(m.factors().size(), 2u + 2u + 4u + 2u);
}

TEST(BuildChmm, SingleChainIsComb) {
  const CHMMParams p = random_chmm_params(1, 6, 3, 2, 2);
  const Graph g = primal_graph(build_chmm(p));
  EXPECT_EQ(g.num_vertices(), 12);
  EXPECT_EQ(g.num_edges(), 11);
  for (int t = 0; t < 6; ++t) {
    EXPECT_TRUE(g.has_edge(p.hidden_id(t, 0), p.observed_id(t, 0)));
    if (t > 0) {
      EXPECT_TRUE(g.has_edge(p.hidden_id(t - 1, 0), p.hidden_id(t, 0)));
    }
  }
}

TEST(BuildChmm, PrimalGraphHasTemporalCouplingAndEmissionEdges) {
  const CHMMParams p = random_chmm_params(3, 4, 2, 2, 3);
  const Graph g = primal_graph(build_chmm(p));
  EXPECT_EQ(g.num_edges(), static_cast<std::size_t>(3 * 3 + 4 * 3 + 12));
  EXPECT_TRUE(g.has_edge(p.hidden_id(2, 0), p.hidden_id(2, 2)));
  EXPECT_FALSE(g.has_edge(p.hidden_id(1, 0), p.hidden_id(2, 1)));
}

TEST(BuildChmm, JointMatchesDirectProduct) {
  std::mt19937_64 rng(4);
  for (CouplingKind kind : {CouplingKind::Pairwise, CouplingKind::Full}) {
    const CHMMParams p = random_chmm_params(2, 2, 2, 2, 5, kind);
    const GraphicalModel m = build_chmm(p);
    for_each_grid(p.T, p.I, p.K, [&](const Observations& h) {
      for_each_grid(p.T, p.I, p.M, [&](const Observations& o) {
        EXPECT_NEAR(evaluate(m, full_assignment(p, h, o)), oracle_joint(p, h, o), 1e-15);
      });
    });
  }
}

TEST(BuildChmm, UniformCouplingFactorizesOverChains) {
  std::mt19937_64 rng(6);
  const CHMMParams p = uniform_coupling(random_chmm_params(3, 3, 2, 3, 7));
  const Observations o = random_obs(rng, 3, 3, 3);
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    CHMMParams one = p;
    one.I = 1;
    sum += oracle_log_likelihood(one, o.col(i));
  }
  EXPECT_NEAR(chmm_log_likelihood(p, o), sum, 1e-10);
}

TEST(Merge, JointEqualsBuildChmmCellByCell) {
  std::mt19937_64 rng(8);
  for (CouplingKind kind : {CouplingKind::Pairwise, CouplingKind::Full}) {
    const CHMMParams p = random_chmm_params(2, 3, 3, 2, 9, kind);
    const GraphicalModel m = build_chmm(p);
    const MergedHMM hmm = merge_hidden(p);
    EXPECT_EQ(hmm.S, 9);
    const Observations o = random_obs(rng, 3, 2, 2);
    for_each_grid(p.T, p.I, p.K, [&](const Observations& h) {
      std::vector<int> s(3);
      for (int t = 0; t < 3; ++t) s[t] = h(t, 0) * 3 + h(t, 1);
      double w = hmm.init(s[0]) * hmm.emission_column(o, 0)(s[0]);
      for (int t = 1; t < 3; ++t) w *= hmm.transition(s[t - 1], s[t]) * hmm.emission_column(o, t)(s[t]);
      EXPECT_NEAR(w, evaluate(m, full_assignment(p, h, o)), 1e-15);
      EXPECT_EQ(hmm.decode(s[1]), (std::vector<int>{h(1, 0), h(1, 1)}));
    });
  }
}

TEST(Merge, SingleChainIsIdentity) {
  const CHMMParams p = random_chmm_params(1, 4, 3, 2, 10);
  const MergedHMM hmm = merge_hidden(p);
  EXPECT_EQ(hmm.S, 3);
  EXPECT_TRUE(hmm.transition.isApprox(p.transition, 1e-15));
  EXPECT_TRUE(hmm.init.isApprox(p.init, 1e-15));
}

TEST(Merge, UniformCouplingIsKroneckerProduct) {
  const CHMMParams p = uniform_coupling(random_chmm_params(2, 2, 2, 2, 11));
  const MergedHMM hmm = merge_hidden(p);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      EXPECT_NEAR(hmm.transition(a, b), p.transition(a / 2, b / 2) * p.transition(a % 2, b % 2), 1e-15);
}

TEST(Merge, CapacityError) {
  const CHMMParams p = random_chmm_params(13, 2, 2, 2, 12);
  expect_error(ErrorCode::Capacity, [&] { merge_hidden(p); });
  expect_error(ErrorCode::Capacity, [&] { merge_hidden(random_chmm_params(3, 2, 2, 2, 12), 7); });
}

TEST(ForwardBackward, MatchesBruteForceAndElimination) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const CHMMParams p = random_chmm_params(2, 3, 2, 3, 100 + trial, trial % 2 ? CouplingKind::Full : CouplingKind::Pairwise);
    const Observations o = random_obs(rng, 3, 2, 3);
    const ForwardBackwardResult fb = forward_backward(merge_hidden(p), o);
    EXPECT_NEAR(fb.log_likelihood, oracle_log_likelihood(p, o), 1e-10);
    const GraphicalModel cond = condition(build_chmm(p), observation_evidence(p, o));
    EXPECT_NEAR(fb.log_likelihood, log_partition_function(cond), 1e-9);
    for (int t = 0; t < 3; ++t) {
      EXPECT_NEAR(fb.gamma.row(t).sum(), 1.0, 1e-12);
      const int keep[] = {p.hidden_id(t, 0), p.hidden_id(t, 1)};
      const Factor mt = marginal(cond, keep);
      for (int s = 0; s < 4; ++s) EXPECT_NEAR(fb.gamma(t, s), mt.values()(s), 1e-9);
    }
  }
}

TEST(ForwardBackward, SingleStepPosterior) {
  const CHMMParams p = random_chmm_params(1, 1, 3, 2, 14);
  Observations o(1, 1);
  o << 1;
  const ForwardBackwardResult fb = forward_backward(merge_hidden(p), o);
  Eigen::VectorXd expect = p.init.cwiseProduct(p.emission.col(1));
  expect /= expect.sum();
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(fb.gamma(0, k), expect(k), 1e-15);
}

TEST(ForwardBackward, XiSumsToGamma) {
  std::mt19937_64 rng(15);
  const CHMMParams p = random_chmm_params(2, 5, 2, 2, 16);
  const Observations o = random_obs(rng, 5, 2, 2);
  const ForwardBackwardResult fb = forward_backward(merge_hidden(p), o, true);
  ASSERT_EQ(fb.xi.size(), 4u);
  for (int t = 0; t < 4; ++t) {
    EXPECT_LE((fb.xi[t].rowwise().sum() - fb.gamma.row(t).transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((fb.xi[t].colwise().sum() - fb.gamma.row(t + 1)).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_NEAR(fb.xi_sum.sum(), 4.0, 1e-12);
}

TEST(ForwardBackward, ImpossibleObservation) {
  CHMMParams p = random_chmm_params(1, 3, 2, 2, 17);
  p.emission.col(1).setZero();
  p.emission.col(0).setOnes();
  Observations o(3, 1);
  o << 0, 1, 0;
  expect_error(ErrorCode::ImpossibleObservation, [&] { forward_backward(merge_hidden(p), o); });
  expect_error(ErrorCode::ImpossibleObservation, [&] { viterbi(merge_hidden(p), o); });
}

TEST(Viterbi, MatchesEnumeration) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const CHMMParams p = random_chmm_params(2, 3, 2, 2, 200 + trial);
    const Observations o = random_obs(rng, 3, 2, 2);
    double best = 0.0;
    for_each_grid(p.T, p.I, p.K, [&](const Observations& h) { best = std::max(best, oracle_joint(p, h, o)); });
    Observations arg;
    for_each_grid(p.T, p.I, p.K, [&](const Observations& h) {
      if (arg.size() == 0 && oracle_joint(p, h, o) >= best * (1 - 1e-12)) arg = h;
    });
    const ViterbiResult v = viterbi(merge_hidden(p), o);
    EXPECT_NEAR(v.log_prob, std::log(best), 1e-10);
    EXPECT_EQ(v.path, arg);
    const GraphicalModel cond = condition(build_chmm(p), observation_evidence(p, o));
    EXPECT_NEAR(std::log(map_assignment(cond).value), v.log_prob, 1e-9);
  }
}

TEST(Viterbi, DeterministicChainIsForced) {
  CHMMParams p = random_chmm_params(1, 4, 3, 3, 19);
  p.init << 0, 1, 0;
  p.transition << 0, 1, 0, 0, 0, 1, 1, 0, 0;
  p.emission = Eigen::MatrixXd::Identity(3, 3);
  Observations o(4, 1);
  o << 1, 2, 0, 1;
  const ViterbiResult v = viterbi(merge_hidden(p), o);
  EXPECT_EQ(v.path, o);
  EXPECT_NEAR(v.log_prob, 0.0, 1e-15);
}

TEST(Viterbi, TiesBreakLexicographically) {
  CHMMParams p = random_chmm_params(1, 3, 2, 2, 20);
  p.init.setConstant(0.5);
  p.transition.setConstant(0.5);
  p.emission.setConstant(0.5);
  const ViterbiResult v = viterbi(merge_hidden(p), Observations::Zero(3, 1));
  EXPECT_EQ(v.path, Observations::Zero(3, 1));
}

TEST(ExactEm, MonotoneLogLikelihood) {
  for (int trial = 0; trial < 10; ++trial) {
    const CHMMParams truth = random_chmm_params(2, 30, 2, 3, 300 + trial, trial % 2 ? CouplingKind::Full : CouplingKind::Pairwise);
    const CHMMSample data = sample_chmm(truth, trial);
    EMOptions opts;
    opts.iterations = 25;
    opts.rel_tol = 0.0;
    const EMResult r = exact_em(random_chmm_params(2, 30, 2, 3, 400 + trial, truth.coupling_kind), data.observed, opts);
    ASSERT_EQ(r.trace.iterations.size(), 26u);
    for (std::size_t k = 1; k < r.trace.iterations.size(); ++k)
      EXPECT_GE(r.trace.iterations[k].objective, r.trace.iterations[k - 1].objective - 1e-8);
    EXPECT_NEAR(r.trace.iterations.back().objective, chmm_log_likelihood(r.params, data.observed), 1e-9);
  }
}

TEST(ExactEm, NearStationaryAtGeneratingParameters) {
  const CHMMParams truth = random_chmm_params(2, 400, 2, 3, 21);
  const CHMMSample data = sample_chmm(truth, 22);
  EMOptions opts;
  opts.iterations = 5;
  opts.rel_tol = 0.0;
  const EMResult from_truth = exact_em(truth, data.observed, opts);
  const EMResult from_random = exact_em(random_chmm_params(2, 400, 2, 3, 23), data.observed, opts);
  const auto gain = [](const EMResult& r) { return r.trace.iterations.back().objective - r.trace.iterations.front().objective; };
  EXPECT_GE(gain(from_truth), -1e-8);
  EXPECT_LT(gain(from_truth), gain(from_random));
}

TEST(ExactEm, SingleChainEqualsBaumWelch) {
  for (int trial = 0; trial < 5; ++trial) {
    const CHMMParams p0 = random_chmm_params(1, 50, 3, 4, 500 + trial);
    const CHMMSample data = sample_chmm(random_chmm_params(1, 50, 3, 4, 600 + trial), trial);
    EMOptions opts;
    opts.iterations = 15;
    opts.rel_tol = 0.0;
    const EMResult r = exact_em(p0, data.observed, opts);
    BaumWelch bw{p0.init / p0.init.sum(), p0.transition, p0.emission};
    for (int k = 0; k < 3; ++k) {
      bw.A.row(k) /= bw.A.row(k).sum();
      bw.B.row(k) /= bw.B.row(k).sum();
    }
    const Eigen::VectorXi o = data.observed.col(0);
    for (int it = 0; it < 15; ++it) {
      const double ll = bw.step(o);
      // the oracle normalizes its starting tables; the library may not
      if (it > 0) {
        EXPECT_NEAR(r.trace.iterations[static_cast<std::size_t>(it)].objective, ll, 1e-9);
      }
    }
    EXPECT_LE((r.params.transition - bw.A).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((r.params.emission - bw.B).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((r.params.init - bw.pi).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(ExactEm, CountsHaveExpectedTotals) {
  std::mt19937_64 rng(24);
  const CHMMParams p = random_chmm_params(3, 6, 2, 2, 25);
  const Observations o = random_obs(rng, 6, 3, 2);
  const MergedHMM hmm = merge_hidden(p);
  const ExpectedCounts c = exact_counts(p, hmm, o, forward_backward(hmm, o));
  EXPECT_NEAR(c.init.sum(), 3.0, 1e-12);
  EXPECT_NEAR(c.transition.sum(), 3.0 * 5, 1e-12);
  EXPECT_NEAR(c.emission.sum(), 3.0 * 6, 1e-12);
  EXPECT_NEAR(c.coupling_pair.sum(), 3.0 * 6, 1e-12);
}

TEST(Variational, FreeEnergyBoundAndKlIdentity) {
  std::mt19937_64 rng(26);
  for (VariationalFamily fam : {VariationalFamily::Q0, VariationalFamily::QM}) {
    for (int trial = 0; trial < 10; ++trial) {
      const CHMMParams p = random_chmm_params(2, 3, 2, 3, 700 + trial, trial % 2 ? CouplingKind::Full : CouplingKind::Pairwise);
      const Observations o = random_obs(rng, 3, 2, 3);
      const VariationalPosterior q = variational_e_step(p, o, fam);
      const double ll = oracle_log_likelihood(p, o);
      EXPECT_LE(q.F, ll + 1e-9);
      EXPECT_NEAR(q.F + kl_to_posterior(p, o, q), ll, 1e-9);
      EXPECT_NEAR(variational_objective(p, o, q), q.F, 1e-9);
    }
  }
}

TEST(Variational, SweepsAreMonotone) {
  std::mt19937_64 rng(27);
  for (VariationalFamily fam : {VariationalFamily::Q0, VariationalFamily::QM}) {
    for (int trial = 0; trial < 10; ++trial) {
      const CHMMParams p = random_chmm_params(4, 15, 3, 3, 800 + trial);
      VariationalOptions vo;
      vo.tol = 1e-12;
      const VariationalPosterior q = variational_e_step(p, random_obs(rng, 15, 4, 3), fam, vo);
      for (std::size_t k = 1; k < q.sweep_trace.size(); ++k) EXPECT_GE(q.sweep_trace[k], q.sweep_trace[k - 1] - 1e-8);
    }
  }
}

TEST(Variational, UniformCouplingMakesStructuredFamilyExact) {
  std::mt19937_64 rng(28);
  const CHMMParams p = uniform_coupling(random_chmm_params(2, 4, 2, 3, 29));
  const Observations o = random_obs(rng, 4, 2, 3);
  const VariationalPosterior q = variational_e_step(p, o, VariationalFamily::QM);
  const ForwardBackwardResult fb = forward_backward(merge_hidden(p), o);
  EXPECT_NEAR(q.F, fb.log_likelihood, 1e-9);
  for (int t = 0; t < 4; ++t)
    for (int s = 0; s < 4; ++s)
      EXPECT_NEAR(q.marginals[0](t, s / 2) * q.marginals[1](t, s % 2), fb.gamma(t, s), 1e-9);
}

TEST(Variational, FactorizedFamilyExactOnlyForSingleStep) {
  std::mt19937_64 rng(30);
  const CHMMParams p1 = uniform_coupling(random_chmm_params(2, 1, 2, 3, 31));
  const Observations o1 = random_obs(rng, 1, 2, 3);
  EXPECT_NEAR(variational_e_step(p1, o1, VariationalFamily::Q0).F, oracle_log_likelihood(p1, o1), 1e-9);
  const CHMMParams p4 = uniform_coupling(random_chmm_params(2, 4, 2, 3, 32));
  const Observations o4 = random_obs(rng, 4, 2, 3);
  EXPECT_LT(variational_e_step(p4, o4, VariationalFamily::Q0).F, oracle_log_likelihood(p4, o4) - 1e-6);
}

TEST(Variational, SingleVariableIsExact) {
  CHMMParams p = random_chmm_params(1, 1, 4, 3, 33);
  Observations o(1, 1);
  o << 2;
  const VariationalPosterior q = variational_e_step(p, o, VariationalFamily::Q0);
  EXPECT_NEAR(q.F, oracle_log_likelihood(p, o), 1e-12);
}

TEST(Variational, BetheExactOnSingleChainAndFiniteWhenCoupled) {
  std::mt19937_64 rng(34);
  const CHMMParams p1 = random_chmm_params(1, 8, 3, 2, 35);
  const Observations o1 = random_obs(rng, 8, 1, 2);
  const VariationalPosterior b1 = variational_e_step(p1, o1, VariationalFamily::Bethe);
  EXPECT_NEAR(b1.F, chmm_log_likelihood(p1, o1), 1e-9);
  const CHMMParams p3 = random_chmm_params(3, 6, 2, 2, 36);
  const VariationalPosterior b3 = variational_e_step(p3, random_obs(rng, 6, 3, 2), VariationalFamily::Bethe);
  EXPECT_TRUE(std::isfinite(b3.F));
  ASSERT_EQ(b3.coupling_pairs.size(), 6u);
  EXPECT_EQ(b3.coupling_pairs[0].size(), 3u);
  for (const auto& m : b3.marginals)
    for (int t = 0; t < 6; ++t) EXPECT_NEAR(m.row(t).sum(), 1.0, 1e-9);
}

TEST(Variational, BetheRejectsFullCouplingOnThreeChains) {
  const CHMMParams p = random_chmm_params(3, 2, 2, 2, 37, CouplingKind::Full);
  expect_error(ErrorCode::Arity, [&] { variational_e_step(p, Observations::Zero(2, 3), VariationalFamily::Bethe); });
}

TEST(VariationalEm, SingleChainStructuredEqualsExact) {
  const CHMMParams p0 = random_chmm_params(1, 40, 2, 3, 38);
  const CHMMSample data = sample_chmm(random_chmm_params(1, 40, 2, 3, 39), 40);
  EMOptions opts;
  opts.iterations = 10;
  opts.rel_tol = 0.0;
  const EMResult exact = exact_em(p0, data.observed, opts);
  const EMResult vem = variational_em(p0, data.observed, VariationalFamily::QM, opts);
  ASSERT_EQ(exact.trace.iterations.size(), vem.trace.iterations.size());
  for (std::size_t k = 0; k < exact.trace.iterations.size(); ++k)
    EXPECT_NEAR(exact.trace.iterations[k].objective, vem.trace.iterations[k].objective, 1e-9);
  EXPECT_LE((exact.params.transition - vem.params.transition).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(VariationalEm, ObjectiveNonDecreasing) {
  for (VariationalFamily fam : {VariationalFamily::Q0, VariationalFamily::QM}) {
    for (int trial = 0; trial < 4; ++trial) {
      const CHMMSample data = sample_chmm(random_chmm_params(3, 20, 2, 2, 900 + trial), trial);
      EMOptions opts;
      opts.iterations = 15;
      opts.rel_tol = 0.0;
      VariationalOptions vo;
      vo.tol = 1e-12;
      vo.max_sweeps = 200;
      const EMResult r = variational_em(random_chmm_params(3, 20, 2, 2, 950 + trial), data.observed, fam, opts, vo);
      for (std::size_t k = 1; k < r.trace.iterations.size(); ++k)
        EXPECT_GE(r.trace.iterations[k].objective, r.trace.iterations[k - 1].objective - 1e-8);
      EXPECT_GE(r.trace.iterations.back().objective, r.trace.iterations.front().objective);
    }
  }
}

TEST(VariationalEm, OperationCountIsLinearInChains) {
  const int I = 3, T = 20, K = 2;
  const CHMMSample data = sample_chmm(random_chmm_params(I, T, K, 2, 41), 42);
  const CHMMParams p = random_chmm_params(I, T, K, 2, 43);
  for (VariationalFamily fam : {VariationalFamily::Q0, VariationalFamily::QM}) {
    const VariationalPosterior q = variational_e_step(p, data.observed, fam);
    ASSERT_GT(q.sweeps, 0);
    EXPECT_LE(static_cast<double>(q.operations) / q.sweeps, 10.0 * I * T * K * K);
  }
  const CHMMParams wide = random_chmm_params(6, T, K, 2, 44);
  const CHMMSample wide_data = sample_chmm(wide, 45);
  const VariationalPosterior qw = variational_e_step(wide, wide_data.observed, VariationalFamily::QM);
  EXPECT_LE(static_cast<double>(qw.operations) / qw.sweeps, 10.0 * 6 * T * K * K);
}

TEST(Sampler, DeterministicPerSeed) {
  const CHMMParams p = random_chmm_params(2, 10, 3, 4, 46);
  const CHMMSample a = sample_chmm(p, 7), b = sample_chmm(p, 7), c = sample_chmm(p, 8);
  EXPECT_EQ(a.hidden, b.hidden);
  EXPECT_EQ(a.observed, b.observed);
  EXPECT_TRUE(a.hidden != c.hidden || a.observed != c.observed);
  const CHMMSample g1 = sample_chmm(p, 7, 4), g2 = sample_chmm(p, 7, 4);
  EXPECT_EQ(g1.hidden, g2.hidden);
  EXPECT_EQ(g1.observed.rows(), 10);
  EXPECT_EQ(g1.observed.cols(), 2);
  EXPECT_TRUE((g1.hidden.array() >= 0).all() && (g1.hidden.array() < 3).all());
  EXPECT_TRUE((g1.observed.array() >= 0).all() && (g1.observed.array() < 4).all());
}

TEST(Sampler, ExactSamplerMatchesMarginals) {
  CHMMParams p = random_chmm_params(2, 2, 2, 2, 47);
  Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(2, 2);
  const int n = 20000;
  for (int s = 0; s < n; ++s) {
    const CHMMSample x = sample_chmm(p, static_cast<std::uint64_t>(s));
    freq(x.hidden(1, 0), x.hidden(1, 1)) += 1.0 / n;
  }
  Eigen::MatrixXd exact = Eigen::MatrixXd::Zero(2, 2);
  double z = 0.0;
  for_each_grid(2, 2, 2, [&](const Observations& h) {
    for_each_grid(2, 2, 2, [&](const Observations& o) {
      const double w = oracle_joint(p, h, o);
      exact(h(1, 0), h(1, 1)) += w;
      z += w;
    });
  });
  exact /= z;
  EXPECT_LE((freq - exact).cwiseAbs().maxCoeff(), 0.02);
}

TEST(ChmmErrors, ParameterValidation) {
  CHMMParams p = random_chmm_params(2, 3, 2, 2, 48);
  CHMMParams bad = p;
  bad.coupling_pair(0, 1) += 0.3;
  expect_error(ErrorCode::Parameter, [&] { build_chmm(bad); });
  bad = p;
  bad.emission.resize(3, 2);
  bad.emission.setOnes();
  expect_error(ErrorCode::Parameter, [&] { build_chmm(bad); });
  bad = p;
  bad.transition(1, 0) = -0.1;
  expect_error(ErrorCode::Parameter, [&] { merge_hidden(bad); });
  expect_error(ErrorCode::Parameter, [&] { chmm_log_likelihood(p, Observations::Zero(2, 2)); });
  Observations o = Observations::Zero(3, 2);
  o(1, 1) = 2;
  expect_error(ErrorCode::Parameter, [&] { variational_e_step(p, o, VariationalFamily::Q0); });
}

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "gm/core.hpp"
#include "gm/message_passing.hpp"

namespace gm {

enum class CouplingKind { Pairwise, Full };

/// Tables shared across chains and time. Hidden variable (t, i) has id t*I + i,
/// observed variable (t, i) has id I*T + t*I + i.
struct CHMMParams {
  int I = 1;  // chains
  int T = 1;  // time steps
  int K = 2;  // hidden states
  int M = 2;  // emission alphabet
  Eigen::VectorXd init;        // K
  Eigen::MatrixXd transition;  // K x K, (previous, next)
  Eigen::MatrixXd emission;    // K x M
  CouplingKind coupling_kind = CouplingKind::Pairwise;
  /// Symmetric K x K table applied to every chain pair at every time.
  Eigen::MatrixXd coupling_pair;
  /// K^I table over (h^0, ..., h^{I-1}), chain 0 most significant.
  Eigen::VectorXd coupling_full;

  void validate() const;
  int hidden_id(int t, int i) const { return t * I + i; }
  int observed_id(int t, int i) const { return I * T + t * I + i; }
};

/// T x I grid of emitted symbols.
using Observations = Eigen::MatrixXi;

void validate_observations(const CHMMParams& p, const Observations& obs);

/// Pairwise coupling ignores ties; full coupling needs K^I cells.
double coupling_value(const CHMMParams& p, const std::vector<int>& h);

GraphicalModel build_chmm(const CHMMParams& p);
Evidence observation_evidence(const CHMMParams& p, const Observations& obs);

inline constexpr int kDefaultMergeCap = 4096;

struct MergedHMM {
  int I = 1;
  int K = 2;
  int S = 2;  // K^I
  Eigen::VectorXd init;        // S, includes the coupling at t = 1
  Eigen::MatrixXd transition;  // S x S, includes the coupling at the arrival time
  Eigen::MatrixXd emission;    // K x M per-chain emission table

  int digit(int s, int chain) const;
  std::vector<int> decode(int s) const;
  /// S-vector of prod_i emission(h^i, o^i_t).
  Eigen::VectorXd emission_column(const Observations& obs, int t) const;
};

MergedHMM merge_hidden(const CHMMParams& p, int cap = kDefaultMergeCap);

struct ForwardBackwardResult {
  Eigen::MatrixXd gamma;             // T x S
  Eigen::MatrixXd xi_sum;            // S x S, summed over t
  std::vector<Eigen::MatrixXd> xi;   // per t (only when requested)
  double log_likelihood = 0.0;
};

/// Works for any state space: an ordinary HMM is a MergedHMM with I = 1.
ForwardBackwardResult forward_backward(const MergedHMM& hmm, const Observations& obs,
                                       bool keep_xi = false);

struct ViterbiResult {
  std::vector<int> states;  // merged state per t
  Observations path;        // T x I hidden values
  double log_prob = 0.0;
};

ViterbiResult viterbi(const MergedHMM& hmm, const Observations& obs);

/// ln sum_h prod psi(h, o) through the merged model.
double chmm_log_likelihood(const CHMMParams& p, const Observations& obs,
                           int cap = kDefaultMergeCap);

/// Sufficient statistics of the M-step.
struct ExpectedCounts {
  Eigen::VectorXd init;        // K
  Eigen::MatrixXd transition;  // K x K
  Eigen::MatrixXd emission;    // K x M
  Eigen::MatrixXd coupling_pair;  // K x K, ordered pairs (chain i < chain j)
  Eigen::VectorXd coupling_full;  // K^I
};

ExpectedCounts exact_counts(const CHMMParams& p, const MergedHMM& hmm, const Observations& obs,
                            const ForwardBackwardResult& fb);
/// Normalized counts; rows without counts keep their previous values.
CHMMParams m_step(const CHMMParams& p, const ExpectedCounts& c);

struct EMIteration {
  int iteration = 0;
  double objective = 0.0;  // log-likelihood (exact) or F (variational) at params
  double seconds = 0.0;
  CHMMParams params;
};

struct EMTrace {
  std::vector<EMIteration> iterations;
};

struct EMOptions {
  int iterations = 50;
  double rel_tol = 1e-7;  // 0 runs the full budget
  int merge_cap = kDefaultMergeCap;
};

struct EMResult {
  CHMMParams params;
  EMTrace trace;
};

EMResult exact_em(const CHMMParams& p0, const Observations& obs, const EMOptions& opts = {});

enum class VariationalFamily { Q0, QM, Bethe };

struct VariationalOptions {
  double tol = 1e-6;  // stop when a sweep improves F by less than this
  int max_sweeps = 50;
  LbpOptions lbp;
  int full_coupling_cap = kDefaultMergeCap;
};

struct VariationalPosterior {
  VariationalFamily family = VariationalFamily::Q0;
  std::vector<Eigen::MatrixXd> marginals;             // per chain, T x K
  std::vector<std::vector<Eigen::MatrixXd>> chain_pairs;  // per chain, T-1 of K x K (QM, Bethe)
  /// Bethe only: per t, per chain pair (i < j) in lexicographic order, K x K.
  std::vector<std::vector<Eigen::MatrixXd>> coupling_pairs;
  double F = 0.0;
  std::vector<double> sweep_trace;  // F after each sweep (Q0, QM)
  int sweeps = 0;
  bool converged = false;
  std::uint64_t operations = 0;  // multiply-adds, for complexity bookkeeping

  /// ln q(h) for a T x I hidden grid (Q0 and QM).
  double log_prob(const Observations& h) const;
};

/// One E-step; warm-starts from `start` when it has the right family and shape.
VariationalPosterior variational_e_step(const CHMMParams& p, const Observations& obs,
                                        VariationalFamily family,
                                        const VariationalOptions& opts = {},
                                        const VariationalPosterior* start = nullptr);

/// E_q log prod psi(h, o) + H(q) for a product-form posterior (Q0, QM).
double variational_objective(const CHMMParams& p, const Observations& obs,
                             const VariationalPosterior& q);

ExpectedCounts variational_counts(const CHMMParams& p, const Observations& obs,
                                  const VariationalPosterior& q);

EMResult variational_em(const CHMMParams& p0, const Observations& obs, VariationalFamily family,
                        const EMOptions& opts = {}, const VariationalOptions& vopts = {});

/// Random normalized parameters; pairwise coupling is symmetric.
CHMMParams random_chmm_params(int I, int T, int K, int M, std::uint64_t seed,
                              CouplingKind kind = CouplingKind::Pairwise);

struct CHMMSample {
  Observations hidden;
  Observations observed;
};

/// Exact ancestral sampling through the merged chain when K^I <= cap,
/// otherwise Gibbs sampling of the hidden grid.
CHMMSample sample_chmm(const CHMMParams& p, std::uint64_t seed, int cap = kDefaultMergeCap,
                       int gibbs_sweeps = 200);

}  // namespace gm

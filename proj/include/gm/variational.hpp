#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "gm/core.hpp"

namespace gm {

struct Coupling {
  int i = 0;
  int j = 0;
  double b = 0.0;
};

/// Binary model p(x) proportional to exp(sum a_i x_i + sum b_ij x_i x_j), x in {0,1}^n.
class PottsModel {
 public:
  PottsModel() = default;
  PottsModel(Eigen::VectorXd a, std::vector<Coupling> couplings, double log_constant = 0.0);

  int n() const { return static_cast<int>(a_.size()); }
  const Eigen::VectorXd& a() const { return a_; }
  const std::vector<Coupling>& couplings() const { return couplings_; }
  /// Gauge constant carried over from a factor model; does not change p.
  double log_constant() const { return log_constant_; }
  /// (neighbour, b) pairs per vertex.
  const std::vector<std::vector<std::pair<int, double>>>& neighbors() const { return nbrs_; }
  /// a_i + sum_j b_ij q_j
  double field(int i, const Eigen::VectorXd& q) const;

 private:
  Eigen::VectorXd a_;
  std::vector<Coupling> couplings_;
  double log_constant_ = 0.0;
  std::vector<std::vector<std::pair<int, double>>> nbrs_;
};

double sigmoid(double x);

enum class MeanFieldInit { Half, Random };

struct MeanFieldOptions {
  MeanFieldInit init = MeanFieldInit::Half;
  std::uint64_t seed = 0;
  double tol = 1e-10;
  int max_iter = 1000;
};

struct MeanFieldState {
  Eigen::VectorXd q;
  int iterations = 0;
  bool converged = false;
  double free_energy = 0.0;                // mf_objective at q
  std::vector<double> objective_trace;     // before the first sweep, then after each
  double residual = 0.0;                   // max_i |q_i - sigmoid(field_i)|
};

/// Sequential coordinate updates; converged once the fixed-point residual is below tol.
MeanFieldState mean_field_fit(const PottsModel& m, const MeanFieldOptions& opts = {});

/// KL(q || p) - ln Z for the product of Bernoulli(q_i).
double mf_objective(const PottsModel& m, const Eigen::VectorXd& q);

/// Exact KL(q || p) by enumeration; q holds one distribution per variable
/// (entries for observed variables are ignored). +inf on a support violation.
double kl_divergence(const std::vector<Eigen::VectorXd>& q, const GraphicalModel& m,
                     std::size_t max_states = kDefaultOracleCap);
/// Bernoulli form: q[i] = P(x_i = 1).
double kl_divergence(const Eigen::VectorXd& q, const GraphicalModel& m,
                     std::size_t max_states = kDefaultOracleCap);

GraphicalModel to_graphical_model(const PottsModel& m);
/// Any model over binary variables with unary/pairwise positive factors; cell
/// (0,0) is the gauge reference.
PottsModel potts_from_binary_model(const GraphicalModel& m);

}  // namespace gm

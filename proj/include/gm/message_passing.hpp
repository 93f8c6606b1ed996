#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "gm/core.hpp"
#include "gm/graph.hpp"
#include "gm/treewidth.hpp"

namespace gm {

/// Unary and pairwise potentials in linear domain. Factors sharing a scope are
/// multiplied together; empty-scope factors go into log_constant.
struct PairwiseModel {
  std::vector<int> cards;
  std::vector<char> observed;
  std::vector<int> observed_value;
  std::vector<Eigen::VectorXd> unary;
  std::vector<Edge> edges;                 // ascending, first < second
  std::vector<Eigen::MatrixXd> pairwise;   // rows index edges[e].first
  double log_constant = 0.0;
  /// (neighbour, edge index) per vertex, ascending by neighbour.
  std::vector<std::vector<std::pair<int, int>>> incident;

  int num_vertices() const { return static_cast<int>(cards.size()); }
  int degree(int v) const { return static_cast<int>(incident[static_cast<std::size_t>(v)].size()); }
  Graph graph() const { return Graph(num_vertices(), edges); }
};

/// Arity error if some factor has more than two variables.
PairwiseModel to_pairwise(const GraphicalModel& m);
GraphicalModel to_graphical_model(const PairwiseModel& pm);

/// Directed edge 2e runs first -> second of edges[e]; 2e + 1 runs back.
struct MessageStore {
  std::vector<Eigen::VectorXd> messages;  // over the receiving variable
  int iterations = 0;
  double residual = 0.0;

  const Eigen::VectorXd& to_second(int e) const { return messages[static_cast<std::size_t>(2 * e)]; }
  const Eigen::VectorXd& to_first(int e) const { return messages[static_cast<std::size_t>(2 * e + 1)]; }
};

/// Every message set to the constant 1.
MessageStore initial_messages(const PairwiseModel& pm);

struct PseudoMarginals {
  std::vector<Eigen::VectorXd> singleton;
  std::vector<Eigen::MatrixXd> pairwise;  // aligned with PairwiseModel::edges
  std::vector<int> degree;
};

struct TreePassResult {
  MessageStore store;
  PseudoMarginals beliefs;
};

/// Two-pass schedule rooted at root (other components of a forest are rooted
/// at their lowest vertex). Sum-product or max-product only.
TreePassResult tree_message_pass(const PairwiseModel& pm, const Semiring& s, int root = 0);
TreePassResult tree_message_pass(const GraphicalModel& m, const Semiring& s, int root = 0);

enum class Schedule { Synchronous, Sequential };

struct LbpOptions {
  Schedule schedule = Schedule::Sequential;
  double damping = 0.0;
  double tol = 1e-8;
  int max_iter = 1000;
};

struct LbpResult {
  PseudoMarginals beliefs;
  MessageStore store;
  bool converged = false;
  int iterations = 0;
};

LbpResult loopy_bp(const PairwiseModel& pm, const Semiring& s, const LbpOptions& opts = {});
LbpResult loopy_bp(const GraphicalModel& m, const Semiring& s, const LbpOptions& opts = {});

/// Beliefs implied by a message store.
PseudoMarginals beliefs_from_messages(const PairwiseModel& pm, const MessageStore& store,
                                      const Semiring& s);

struct CalibratedTree {
  std::vector<Factor> beliefs;  // normalized, over each cluster's free variables
  double log_z = 0.0;           // log of the oplus-total (sum-product: ln Z)
};

/// Shafer-Shenoy two-pass calibration over the clusters of td.
CalibratedTree calibrate_junction_tree(const GraphicalModel& m, const TreeDecomposition& td,
                                       const Semiring& s, int root = 0);

/// psi'_ij = p(x_i, x_j) and psi'_i = p(x_i)^(1 - d_i), with 0^-1 read as 0.
GraphicalModel reparametrize_tree(const GraphicalModel& m);

struct CalibrationCheck {
  bool calibrated = true;
  int vertex = -1;
  std::string diagnostic;

  explicit operator bool() const noexcept { return calibrated; }
};

CalibrationCheck check_calibration(const GraphicalModel& m, double tol = 1e-9,
                                   const Semiring& s = Semiring::sum_product());

/// Average energy minus Bethe entropy; equals -ln Z on a tree with exact marginals.
double bethe_free_energy(const PairwiseModel& pm, const PseudoMarginals& q);
double bethe_free_energy(const GraphicalModel& m, const PseudoMarginals& q);

}  // namespace gm

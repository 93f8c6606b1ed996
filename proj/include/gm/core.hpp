#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace gm {

enum class ErrorCode {
  ModelMismatch,
  DomainFlag,
  Scope,
  Evidence,
  OracleTooLarge,
  Ordering,
  Capacity,
  Query,
  InconsistentEvidence,
  Structure,
  NotATree,
  Arity,
  Assignment,
  Reparametrization,
  Parameter,
  ImpossibleObservation,
  Parse,
  Domain,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every library failure is reported through this type; code() tells the
/// caller (and the CLI exit-code mapping) which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct DiscreteVariable {
  int id = 0;
  int cardinality = 1;
};

/// A table over an ascending scope of variable ids, row-major with the last
/// scope variable varying fastest. In log domain, -inf encodes zero.
class Factor {
 public:
  /// The empty-scope factor with value 1 (linear domain).
  Factor();
  Factor(std::vector<int> scope, std::vector<int> cards, Eigen::ArrayXd values,
         bool log_domain = false);

  /// Builds a factor from a scope in arbitrary order, permuting the table
  /// (given in that order, last variable fastest) into canonical layout.
  static Factor from_unordered(std::span<const int> scope,
                               std::span<const int> cards,
                               std::span<const double> values,
                               bool log_domain = false);
  static Factor scalar(double value, bool log_domain = false);
  static Factor constant(std::vector<int> scope, std::vector<int> cards,
                         double value, bool log_domain = false);

  const std::vector<int>& scope() const noexcept { return scope_; }
  const std::vector<int>& cards() const noexcept { return cards_; }
  const Eigen::ArrayXd& values() const noexcept { return values_; }
  bool log_domain() const noexcept { return log_domain_; }
  std::size_t size() const noexcept {
    return static_cast<std::size_t>(values_.size());
  }
  int arity() const noexcept { return static_cast<int>(scope_.size()); }

  bool contains(int var) const;
  /// Position of var in the scope, or -1.
  int position(int var) const;
  int cardinality_of(int var) const;
  /// Stride of each scope position in the flat table.
  std::vector<std::size_t> strides() const;

  /// Value at a full model assignment indexed by variable id.
  double at(std::span<const int> assignment) const;
  std::size_t index_of(std::span<const int> assignment) const;
  /// Decodes a flat index into values for each scope position.
  std::vector<int> unravel(std::size_t index) const;

  Factor to_log() const;
  Factor to_linear() const;

  /// Same scope, domain and bitwise-equal values.
  friend bool operator==(const Factor& a, const Factor& b);

 private:
  std::vector<int> scope_;
  std::vector<int> cards_;
  Eigen::ArrayXd values_;
  bool log_domain_ = false;
};

enum class SemiringKind { SumProduct, MaxProduct, MaxPlus, MinPlus, OrAnd };

/// The (oplus, otimes) pair. A sum-product or max-product semiring applied
/// to log-domain factors switches to (log-sum-exp, +) or (max, +).
class Semiring {
 public:
  constexpr explicit Semiring(SemiringKind kind, bool log_domain = false)
      : kind_(kind), log_domain_(log_domain) {}

  static Semiring sum_product() { return Semiring(SemiringKind::SumProduct); }
  static Semiring max_product() { return Semiring(SemiringKind::MaxProduct); }
  static Semiring max_plus() { return Semiring(SemiringKind::MaxPlus); }
  static Semiring min_plus() { return Semiring(SemiringKind::MinPlus); }
  static Semiring or_and() { return Semiring(SemiringKind::OrAnd); }

  SemiringKind kind() const noexcept { return kind_; }
  bool log_domain() const noexcept { return log_domain_; }
  std::string_view name() const;

  /// The same semiring acting on tables stored in the given domain.
  Semiring in_domain(bool log_domain) const;
  bool supports_log_domain() const noexcept {
    return kind_ == SemiringKind::SumProduct ||
           kind_ == SemiringKind::MaxProduct;
  }

  double oplus(double a, double b) const;
  double otimes(double a, double b) const;
  double zero() const;  // oplus identity
  double one() const;   // otimes identity

  friend bool operator==(const Semiring&, const Semiring&) = default;

 private:
  SemiringKind kind_;
  bool log_domain_;
};

double log_add_exp(double a, double b);

struct Evidence {
  std::map<int, int> assignments;

  bool empty() const { return assignments.empty(); }
  bool observes(int var) const { return assignments.count(var) != 0; }
};

enum class ModelKind { Markov, Bayes };

/// Variables, factors and the evidence already absorbed into the factors.
/// Observed variables keep their id but appear in no factor scope.
class GraphicalModel {
 public:
  GraphicalModel() = default;
  GraphicalModel(std::vector<DiscreteVariable> variables,
                 std::vector<Factor> factors,
                 ModelKind kind = ModelKind::Markov, Evidence evidence = {});
  /// Convenience: variables 0..n-1 with the given cardinalities.
  GraphicalModel(std::span<const int> cardinalities,
                 std::vector<Factor> factors,
                 ModelKind kind = ModelKind::Markov);

  const std::vector<DiscreteVariable>& variables() const noexcept {
    return variables_;
  }
  const std::vector<Factor>& factors() const noexcept { return factors_; }
  ModelKind kind() const noexcept { return kind_; }
  const Evidence& evidence() const noexcept { return evidence_; }

  int num_variables() const noexcept {
    return static_cast<int>(variables_.size());
  }
  int cardinality(int var) const;
  std::vector<int> cardinalities() const;
  bool is_observed(int var) const { return evidence_.observes(var); }
  std::vector<int> free_variables() const;
  int max_cardinality() const;

 private:
  void validate() const;

  std::vector<DiscreteVariable> variables_;
  std::vector<Factor> factors_;
  ModelKind kind_ = ModelKind::Markov;
  Evidence evidence_;
};

class Graph;

Factor combine(const Factor& a, const Factor& b, const Semiring& s);
Factor eliminate_var(const Factor& f, int var, const Semiring& s);
/// Eliminates each listed variable (those absent from the scope are ignored).
Factor eliminate_vars(Factor f, std::span<const int> vars, const Semiring& s);
/// Adds the listed variables to the scope with otimes-identity entries.
Factor extend(const Factor& f, std::span<const int> vars,
              std::span<const int> cards, const Semiring& s);
/// Slices f at var = value and drops var from the scope.
Factor restrict(const Factor& f, int var, int value);
/// Divides by the oplus-total so that the table sums (or maxes) to one.
Factor normalize(const Factor& f, const Semiring& s);

void validate_evidence(const GraphicalModel& m, const Evidence& e);
GraphicalModel condition(const GraphicalModel& m, const Evidence& e);
Graph primal_graph(const GraphicalModel& m);

/// Otimes of every factor at a full assignment (linear domain).
double evaluate(const GraphicalModel& m, std::span<const int> assignment);
double log_evaluate(const GraphicalModel& m, std::span<const int> assignment);

inline constexpr std::size_t kDefaultOracleCap = 10'000'000;

/// Direct enumeration of the free state space: otimes over all factors,
/// oplus over the variables outside keep. Test oracle for everything else.
Factor brute_force(const GraphicalModel& m, const Semiring& s,
                   std::span<const int> keep,
                   std::size_t max_states = kDefaultOracleCap);

}  // namespace gm

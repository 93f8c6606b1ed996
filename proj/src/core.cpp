#include "gm/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gm/graph.hpp"

namespace gm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t checked_product(std::span<const int> cards) {
  std::size_t total = 1;
  for (int c : cards) {
    if (c < 1) throw Error(ErrorCode::ModelMismatch, "cardinality must be >= 1");
    if (total > std::numeric_limits<std::size_t>::max() / static_cast<std::size_t>(c))
      throw Error(ErrorCode::Capacity, "table size overflows");
    total *= static_cast<std::size_t>(c);
  }
  return total;
}

}  // namespace

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ModelMismatch: return "model-mismatch";
    case ErrorCode::DomainFlag: return "domain-flag";
    case ErrorCode::Scope: return "scope";
    case ErrorCode::Evidence: return "evidence";
    case ErrorCode::OracleTooLarge: return "oracle-too-large";
    case ErrorCode::Ordering: return "ordering";
    case ErrorCode::Capacity: return "capacity";
    case ErrorCode::Query: return "query";
    case ErrorCode::InconsistentEvidence: return "inconsistent-evidence";
    case ErrorCode::Structure: return "structure";
    case ErrorCode::NotATree: return "not-a-tree";
    case ErrorCode::Arity: return "arity";
    case ErrorCode::Assignment: return "assignment";
    case ErrorCode::Reparametrization: return "reparametrization";
    case ErrorCode::Parameter: return "parameter";
    case ErrorCode::ImpossibleObservation: return "impossible-observation";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Domain: return "domain";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + " error: " + what),
      code_(code) {}

// ---------------------------------------------------------------- Factor

Factor::Factor() : values_(Eigen::ArrayXd::Ones(1)) {}

bool operator==(const Factor& a, const Factor& b) {
  return a.scope_ == b.scope_ && a.cards_ == b.cards_ && a.log_domain_ == b.log_domain_ &&
         a.values_.size() == b.values_.size() && (a.values_ == b.values_).all();
}

Factor::Factor(std::vector<int> scope, std::vector<int> cards,
               Eigen::ArrayXd values, bool log_domain)
    : scope_(std::move(scope)),
      cards_(std::move(cards)),
      values_(std::move(values)),
      log_domain_(log_domain) {
  if (scope_.size() != cards_.size())
    throw Error(ErrorCode::Scope, "scope and cardinality lists differ in length");
  for (std::size_t k = 0; k < scope_.size(); ++k) {
    if (scope_[k] < 0) throw Error(ErrorCode::Scope, "negative variable id");
    if (k > 0 && scope_[k] <= scope_[k - 1])
      throw Error(ErrorCode::Scope, "scope must be strictly ascending");
  }
  if (checked_product(cards_) != static_cast<std::size_t>(values_.size()))
    throw Error(ErrorCode::Scope,
                "table length does not match the product of cardinalities");
  if (values_.isNaN().any()) throw Error(ErrorCode::Domain, "NaN in factor table");
}

Factor Factor::from_unordered(std::span<const int> scope,
                              std::span<const int> cards,
                              std::span<const double> values, bool log_domain) {
  if (scope.size() != cards.size())
    throw Error(ErrorCode::Scope, "scope and cardinality lists differ in length");
  const std::size_t r = scope.size();
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::sort(perm.begin(), perm.end(),
            [&](std::size_t a, std::size_t b) { return scope[a] < scope[b]; });
  std::vector<int> sorted_scope(r), sorted_cards(r);
  for (std::size_t k = 0; k < r; ++k) {
    sorted_scope[k] = scope[perm[k]];
    sorted_cards[k] = cards[perm[k]];
    if (k > 0 && sorted_scope[k] == sorted_scope[k - 1])
      throw Error(ErrorCode::Scope, "duplicate variable in scope");
  }
  const std::size_t total = checked_product(cards);
  if (values.size() != total)
    throw Error(ErrorCode::Scope,
                "table length does not match the product of cardinalities");

  // Strides of the original (file-order) layout, looked up per sorted slot.
  std::vector<std::size_t> orig_stride(r, 1);
  for (std::size_t k = r; k-- > 1;)
    orig_stride[k - 1] = orig_stride[k] * static_cast<std::size_t>(cards[k]);

  Eigen::ArrayXd out(static_cast<Eigen::Index>(total));
  std::vector<int> digit(r, 0);
  std::size_t src = 0;
  for (std::size_t dst = 0; dst < total; ++dst) {
    out(static_cast<Eigen::Index>(dst)) = values[src];
    for (std::size_t k = r; k-- > 0;) {
      src += orig_stride[perm[k]];
      if (++digit[k] < sorted_cards[k]) break;
      src -= orig_stride[perm[k]] * static_cast<std::size_t>(sorted_cards[k]);
      digit[k] = 0;
    }
  }
  return Factor(std::move(sorted_scope), std::move(sorted_cards), std::move(out),
                log_domain);
}

Factor Factor::scalar(double value, bool log_domain) {
  return Factor({}, {}, Eigen::ArrayXd::Constant(1, value), log_domain);
}

Factor Factor::constant(std::vector<int> scope, std::vector<int> cards,
                        double value, bool log_domain) {
  const auto n = static_cast<Eigen::Index>(checked_product(cards));
  return Factor(std::move(scope), std::move(cards),
                Eigen::ArrayXd::Constant(n, value), log_domain);
}

bool Factor::contains(int var) const { return position(var) >= 0; }

int Factor::position(int var) const {
  auto it = std::lower_bound(scope_.begin(), scope_.end(), var);
  if (it == scope_.end() || *it != var) return -1;
  return static_cast<int>(it - scope_.begin());
}

int Factor::cardinality_of(int var) const {
  const int p = position(var);
  if (p < 0) throw Error(ErrorCode::Scope, "variable not in factor scope");
  return cards_[static_cast<std::size_t>(p)];
}

std::vector<std::size_t> Factor::strides() const {
  std::vector<std::size_t> s(scope_.size(), 1);
  for (std::size_t k = scope_.size(); k-- > 1;)
    s[k - 1] = s[k] * static_cast<std::size_t>(cards_[k]);
  return s;
}

std::size_t Factor::index_of(std::span<const int> assignment) const {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < scope_.size(); ++k) {
    const auto var = static_cast<std::size_t>(scope_[k]);
    if (var >= assignment.size())
      throw Error(ErrorCode::ModelMismatch, "assignment too short for factor");
    const int x = assignment[var];
    if (x < 0 || x >= cards_[k])
      throw Error(ErrorCode::Domain, "assignment value out of range");
    idx = idx * static_cast<std::size_t>(cards_[k]) + static_cast<std::size_t>(x);
  }
  return idx;
}

double Factor::at(std::span<const int> assignment) const {
  return values_(static_cast<Eigen::Index>(index_of(assignment)));
}

std::vector<int> Factor::unravel(std::size_t index) const {
  std::vector<int> digits(scope_.size());
  for (std::size_t k = scope_.size(); k-- > 0;) {
    const auto c = static_cast<std::size_t>(cards_[k]);
    digits[k] = static_cast<int>(index % c);
    index /= c;
  }
  return digits;
}

Factor Factor::to_log() const {
  if (log_domain_) return *this;
  return Factor(scope_, cards_, values_.log(), true);
}

Factor Factor::to_linear() const {
  if (!log_domain_) return *this;
  return Factor(scope_, cards_, values_.exp(), false);
}

// -------------------------------------------------------------- Semiring

std::string_view Semiring::name() const {
  switch (kind_) {
    case SemiringKind::SumProduct: return "sum-product";
    case SemiringKind::MaxProduct: return "max-product";
    case SemiringKind::MaxPlus: return "max-plus";
    case SemiringKind::MinPlus: return "min-plus";
    case SemiringKind::OrAnd: return "or-and";
  }
  return "unknown";
}

Semiring Semiring::in_domain(bool log_domain) const {
  if (log_domain && !supports_log_domain())
    throw Error(ErrorCode::DomainFlag,
                std::string(name()) + " semiring has no log-domain form");
  return Semiring(kind_, log_domain);
}

double log_add_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

double Semiring::oplus(double a, double b) const {
  switch (kind_) {
    case SemiringKind::SumProduct: return log_domain_ ? log_add_exp(a, b) : a + b;
    case SemiringKind::MaxProduct:
    case SemiringKind::MaxPlus: return std::max(a, b);
    case SemiringKind::MinPlus: return std::min(a, b);
    case SemiringKind::OrAnd: return (a != 0.0 || b != 0.0) ? 1.0 : 0.0;
  }
  return 0.0;
}

double Semiring::otimes(double a, double b) const {
  switch (kind_) {
    case SemiringKind::SumProduct:
    case SemiringKind::MaxProduct:
      if (log_domain_) return (a == -kInf || b == -kInf) ? -kInf : a + b;
      return (a == 0.0 || b == 0.0) ? 0.0 : a * b;
    case SemiringKind::MaxPlus: return (a == -kInf || b == -kInf) ? -kInf : a + b;
    case SemiringKind::MinPlus: return (a == kInf || b == kInf) ? kInf : a + b;
    case SemiringKind::OrAnd: return (a != 0.0 && b != 0.0) ? 1.0 : 0.0;
  }
  return 0.0;
}

double Semiring::zero() const {
  switch (kind_) {
    case SemiringKind::SumProduct:
    case SemiringKind::MaxProduct: return log_domain_ ? -kInf : 0.0;
    case SemiringKind::MaxPlus: return -kInf;
    case SemiringKind::MinPlus: return kInf;
    case SemiringKind::OrAnd: return 0.0;
  }
  return 0.0;
}

double Semiring::one() const {
  switch (kind_) {
    case SemiringKind::SumProduct:
    case SemiringKind::MaxProduct: return log_domain_ ? 0.0 : 1.0;
    case SemiringKind::MaxPlus:
    case SemiringKind::MinPlus: return 0.0;
    case SemiringKind::OrAnd: return 1.0;
  }
  return 1.0;
}

// --------------------------------------------------------- GraphicalModel

GraphicalModel::GraphicalModel(std::vector<DiscreteVariable> variables,
                               std::vector<Factor> factors, ModelKind kind,
                               Evidence evidence)
    : variables_(std::move(variables)),
      factors_(std::move(factors)),
      kind_(kind),
      evidence_(std::move(evidence)) {
  validate();
}

GraphicalModel::GraphicalModel(std::span<const int> cardinalities,
                               std::vector<Factor> factors, ModelKind kind)
    : factors_(std::move(factors)), kind_(kind) {
  variables_.reserve(cardinalities.size());
  for (std::size_t i = 0; i < cardinalities.size(); ++i)
    variables_.push_back({static_cast<int>(i), cardinalities[i]});
  validate();
}

void GraphicalModel::validate() const {
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    if (variables_[i].id != static_cast<int>(i))
      throw Error(ErrorCode::ModelMismatch, "variable ids must be dense 0..n-1");
    if (variables_[i].cardinality < 1)
      throw Error(ErrorCode::ModelMismatch, "variable cardinality must be >= 1");
  }
  for (const Factor& f : factors_) {
    for (std::size_t k = 0; k < f.scope().size(); ++k) {
      const int var = f.scope()[k];
      if (var >= num_variables())
        throw Error(ErrorCode::ModelMismatch,
                    "factor scope refers to unknown variable " + std::to_string(var));
      if (f.cards()[k] != variables_[static_cast<std::size_t>(var)].cardinality)
        throw Error(ErrorCode::ModelMismatch,
                    "factor cardinality disagrees with variable " + std::to_string(var));
      if (evidence_.observes(var))
        throw Error(ErrorCode::ModelMismatch,
                    "observed variable " + std::to_string(var) + " still in a scope");
    }
  }
  for (const auto& [var, value] : evidence_.assignments) {
    if (var < 0 || var >= num_variables())
      throw Error(ErrorCode::Evidence, "evidence on unknown variable");
    if (value < 0 || value >= cardinality(var))
      throw Error(ErrorCode::Evidence, "evidence value out of range");
  }
}

int GraphicalModel::cardinality(int var) const {
  if (var < 0 || var >= num_variables())
    throw Error(ErrorCode::ModelMismatch, "unknown variable " + std::to_string(var));
  return variables_[static_cast<std::size_t>(var)].cardinality;
}

std::vector<int> GraphicalModel::cardinalities() const {
  std::vector<int> out;
  out.reserve(variables_.size());
  for (const auto& v : variables_) out.push_back(v.cardinality);
  return out;
}

std::vector<int> GraphicalModel::free_variables() const {
  std::vector<int> out;
  for (const auto& v : variables_)
    if (!evidence_.observes(v.id)) out.push_back(v.id);
  return out;
}

int GraphicalModel::max_cardinality() const {
  int k = 1;
  for (const auto& v : variables_) k = std::max(k, v.cardinality);
  return k;
}

// ------------------------------------------------------------- operators

Factor combine(const Factor& a, const Factor& b, const Semiring& semiring) {
  if (a.log_domain() != b.log_domain())
    throw Error(ErrorCode::DomainFlag, "cannot combine log-domain and linear factors");
  const Semiring s = semiring.in_domain(a.log_domain());

  std::vector<int> scope, cards;
  std::vector<std::size_t> stride_a, stride_b;
  const auto sa = a.strides();
  const auto sb = b.strides();
  std::size_t i = 0, j = 0;
  while (i < a.scope().size() || j < b.scope().size()) {
    const int va = i < a.scope().size() ? a.scope()[i] : std::numeric_limits<int>::max();
    const int vb = j < b.scope().size() ? b.scope()[j] : std::numeric_limits<int>::max();
    if (va == vb) {
      if (a.cards()[i] != b.cards()[j])
        throw Error(ErrorCode::ModelMismatch,
                    "factors disagree on the cardinality of variable " + std::to_string(va));
      scope.push_back(va);
      cards.push_back(a.cards()[i]);
      stride_a.push_back(sa[i++]);
      stride_b.push_back(sb[j++]);
    } else if (va < vb) {
      scope.push_back(va);
      cards.push_back(a.cards()[i]);
      stride_a.push_back(sa[i++]);
      stride_b.push_back(0);
    } else {
      scope.push_back(vb);
      cards.push_back(b.cards()[j]);
      stride_a.push_back(0);
      stride_b.push_back(sb[j++]);
    }
  }

  const std::size_t total = checked_product(cards);
  Eigen::ArrayXd out(static_cast<Eigen::Index>(total));
  const std::size_t r = scope.size();
  std::vector<int> digit(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    out(static_cast<Eigen::Index>(idx)) =
        s.otimes(a.values()(static_cast<Eigen::Index>(ia)),
                 b.values()(static_cast<Eigen::Index>(ib)));
    for (std::size_t k = r; k-- > 0;) {
      ia += stride_a[k];
      ib += stride_b[k];
      if (++digit[k] < cards[k]) break;
      ia -= stride_a[k] * static_cast<std::size_t>(cards[k]);
      ib -= stride_b[k] * static_cast<std::size_t>(cards[k]);
      digit[k] = 0;
    }
  }
  return Factor(std::move(scope), std::move(cards), std::move(out), a.log_domain());
}

Factor eliminate_var(const Factor& f, int var, const Semiring& semiring) {
  const int p = f.position(var);
  if (p < 0)
    throw Error(ErrorCode::Scope,
                "variable " + std::to_string(var) + " is not in the factor scope");
  const Semiring s = semiring.in_domain(f.log_domain());
  const auto pos = static_cast<std::size_t>(p);
  std::size_t inner = 1;
  for (std::size_t k = pos + 1; k < f.cards().size(); ++k)
    inner *= static_cast<std::size_t>(f.cards()[k]);
  const auto card = static_cast<std::size_t>(f.cards()[pos]);
  const std::size_t outer = f.size() / (card * inner);

  std::vector<int> scope = f.scope(), cards = f.cards();
  scope.erase(scope.begin() + p);
  cards.erase(cards.begin() + p);
  Eigen::ArrayXd out(static_cast<Eigen::Index>(outer * inner));
  const auto& v = f.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * card * inner + in;
      double acc = v(static_cast<Eigen::Index>(base));
      for (std::size_t x = 1; x < card; ++x)
        acc = s.oplus(acc, v(static_cast<Eigen::Index>(base + x * inner)));
      out(static_cast<Eigen::Index>(o * inner + in)) = acc;
    }
  return Factor(std::move(scope), std::move(cards), std::move(out), f.log_domain());
}

Factor eliminate_vars(Factor f, std::span<const int> vars, const Semiring& s) {
  for (int var : vars)
    if (f.contains(var)) f = eliminate_var(f, var, s);
  return f;
}

Factor extend(const Factor& f, std::span<const int> vars,
              std::span<const int> cards, const Semiring& semiring) {
  const Semiring s = semiring.in_domain(f.log_domain());
  std::vector<int> new_scope, new_cards;
  for (std::size_t k = 0; k < vars.size(); ++k)
    if (!f.contains(vars[k])) {
      new_scope.push_back(vars[k]);
      new_cards.push_back(cards[k]);
    }
  if (new_scope.empty()) return f;
  std::vector<double> ones(checked_product(new_cards), s.one());
  return combine(f, Factor::from_unordered(new_scope, new_cards, ones, f.log_domain()),
                 s);
}

Factor restrict(const Factor& f, int var, int value) {
  const int p = f.position(var);
  if (p < 0) throw Error(ErrorCode::Scope, "variable not in factor scope");
  const auto pos = static_cast<std::size_t>(p);
  const auto card = static_cast<std::size_t>(f.cards()[pos]);
  if (value < 0 || static_cast<std::size_t>(value) >= card)
    throw Error(ErrorCode::Evidence, "observed value out of range");
  std::size_t inner = 1;
  for (std::size_t k = pos + 1; k < f.cards().size(); ++k)
    inner *= static_cast<std::size_t>(f.cards()[k]);
  const std::size_t outer = f.size() / (card * inner);
  std::vector<int> scope = f.scope(), cards = f.cards();
  scope.erase(scope.begin() + p);
  cards.erase(cards.begin() + p);
  Eigen::ArrayXd out(static_cast<Eigen::Index>(outer * inner));
  for (std::size_t o = 0; o < outer; ++o)
    out.segment(static_cast<Eigen::Index>(o * inner), static_cast<Eigen::Index>(inner)) =
        f.values().segment(
            static_cast<Eigen::Index>(o * card * inner + static_cast<std::size_t>(value) * inner),
            static_cast<Eigen::Index>(inner));
  return Factor(std::move(scope), std::move(cards), std::move(out), f.log_domain());
}

Factor normalize(const Factor& f, const Semiring& semiring) {
  const Semiring s = semiring.in_domain(f.log_domain());
  double total = f.values()(0);
  for (Eigen::Index k = 1; k < f.values().size(); ++k)
    total = s.oplus(total, f.values()(k));
  if (total == s.zero() || !std::isfinite(total))
    throw Error(ErrorCode::InconsistentEvidence,
                "cannot normalize a table with zero or infinite total");
  switch (s.kind()) {
    case SemiringKind::SumProduct:
    case SemiringKind::MaxProduct:
      if (s.log_domain())
        return Factor(f.scope(), f.cards(), f.values() - total, true);
      return Factor(f.scope(), f.cards(), f.values() / total, false);
    case SemiringKind::MaxPlus:
    case SemiringKind::MinPlus:
      return Factor(f.scope(), f.cards(), f.values() - total, f.log_domain());
    case SemiringKind::OrAnd:
      return f;
  }
  return f;
}

void validate_evidence(const GraphicalModel& m, const Evidence& e) {
  for (const auto& [var, value] : e.assignments) {
    if (var < 0 || var >= m.num_variables())
      throw Error(ErrorCode::Evidence, "evidence on unknown variable " + std::to_string(var));
    if (value < 0 || value >= m.cardinality(var))
      throw Error(ErrorCode::Evidence,
                  "observed value " + std::to_string(value) + " out of range for variable " +
                      std::to_string(var));
    auto it = m.evidence().assignments.find(var);
    if (it != m.evidence().assignments.end() && it->second != value)
      throw Error(ErrorCode::Evidence,
                  "variable " + std::to_string(var) + " already observed with another value");
  }
}

GraphicalModel condition(const GraphicalModel& m, const Evidence& e) {
  validate_evidence(m, e);
  if (e.empty()) return m;
  Evidence merged = m.evidence();
  for (const auto& [var, value] : e.assignments) merged.assignments[var] = value;
  std::vector<Factor> factors;
  factors.reserve(m.factors().size());
  for (const Factor& f : m.factors()) {
    Factor g = f;
    for (const auto& [var, value] : e.assignments)
      if (g.contains(var)) g = restrict(g, var, value);
    factors.push_back(std::move(g));
  }
  return GraphicalModel(m.variables(), std::move(factors), m.kind(), std::move(merged));
}

Graph primal_graph(const GraphicalModel& m) {
  Graph g(m.num_variables());
  for (const Factor& f : m.factors())
    for (std::size_t a = 0; a < f.scope().size(); ++a)
      for (std::size_t b = a + 1; b < f.scope().size(); ++b)
        g.add_edge(f.scope()[a], f.scope()[b]);
  return g;
}

double log_evaluate(const GraphicalModel& m, std::span<const int> assignment) {
  if (static_cast<int>(assignment.size()) != m.num_variables())
    throw Error(ErrorCode::ModelMismatch, "assignment length differs from variable count");
  double total = 0.0;
  for (const Factor& f : m.factors()) {
    const double v = f.at(assignment);
    const double lv = f.log_domain() ? v : std::log(v);
    if (lv == -kInf) return -kInf;
    total += lv;
  }
  return total;
}

double evaluate(const GraphicalModel& m, std::span<const int> assignment) {
  if (static_cast<int>(assignment.size()) != m.num_variables())
    throw Error(ErrorCode::ModelMismatch, "assignment length differs from variable count");
  double total = 1.0;
  for (const Factor& f : m.factors()) {
    const double v = f.at(assignment);
    total *= f.log_domain() ? std::exp(v) : v;
  }
  return total;
}

Factor brute_force(const GraphicalModel& m, const Semiring& semiring,
                   std::span<const int> keep, std::size_t max_states) {
  const std::vector<int> free = m.free_variables();
  bool log_domain = false;
  if (!m.factors().empty()) {
    log_domain = m.factors().front().log_domain();
    for (const Factor& f : m.factors())
      if (f.log_domain() != log_domain)
        throw Error(ErrorCode::DomainFlag, "model mixes log-domain and linear factors");
  }
  const Semiring s = semiring.in_domain(log_domain);

  std::vector<int> keep_sorted(keep.begin(), keep.end());
  std::sort(keep_sorted.begin(), keep_sorted.end());
  if (std::adjacent_find(keep_sorted.begin(), keep_sorted.end()) != keep_sorted.end())
    throw Error(ErrorCode::Query, "duplicate variable in keep set");
  std::vector<int> keep_cards;
  for (int var : keep_sorted) {
    if (var < 0 || var >= m.num_variables())
      throw Error(ErrorCode::Query, "keep set refers to an unknown variable");
    if (m.is_observed(var))
      throw Error(ErrorCode::Query, "keep set contains an observed variable");
    keep_cards.push_back(m.cardinality(var));
  }

  std::size_t states = 1;
  for (int var : free) {
    states *= static_cast<std::size_t>(m.cardinality(var));
    if (states > max_states)
      throw Error(ErrorCode::OracleTooLarge,
                  "state space exceeds the oracle cap of " + std::to_string(max_states));
  }

  Factor result = Factor::constant(keep_sorted, keep_cards, s.zero(), log_domain);
  Eigen::ArrayXd out = result.values();
  const auto rstrides = result.strides();

  // Per free-variable stride into every factor and into the result.
  const std::size_t nf = m.factors().size();
  const std::size_t nv = free.size();
  std::vector<std::size_t> fstride(nf * nv, 0);
  std::vector<std::size_t> ostride(nv, 0);
  std::vector<int> cards(nv);
  for (std::size_t k = 0; k < nv; ++k) {
    cards[k] = m.cardinality(free[k]);
    for (std::size_t f = 0; f < nf; ++f) {
      const Factor& fac = m.factors()[f];
      const int p = fac.position(free[k]);
      if (p >= 0) fstride[f * nv + k] = fac.strides()[static_cast<std::size_t>(p)];
    }
    const int rp = result.position(free[k]);
    if (rp >= 0) ostride[k] = rstrides[static_cast<std::size_t>(rp)];
  }

  std::vector<std::size_t> fidx(nf, 0);
  std::size_t oidx = 0;
  std::vector<int> digit(nv, 0);
  for (std::size_t state = 0; state < states; ++state) {
    double value = s.one();
    for (std::size_t f = 0; f < nf; ++f)
      value = s.otimes(value, m.factors()[f].values()(static_cast<Eigen::Index>(fidx[f])));
    auto& cell = out(static_cast<Eigen::Index>(oidx));
    cell = s.oplus(cell, value);
    for (std::size_t k = nv; k-- > 0;) {
      for (std::size_t f = 0; f < nf; ++f) fidx[f] += fstride[f * nv + k];
      oidx += ostride[k];
      if (++digit[k] < cards[k]) break;
      const auto c = static_cast<std::size_t>(cards[k]);
      for (std::size_t f = 0; f < nf; ++f) fidx[f] -= fstride[f * nv + k] * c;
      oidx -= ostride[k] * c;
      digit[k] = 0;
    }
  }
  return Factor(keep_sorted, keep_cards, std::move(out), log_domain);
}

}  // namespace gm

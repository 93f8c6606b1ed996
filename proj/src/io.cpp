#include "gm/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace gm {

namespace {

struct Token {
  std::string_view text;
  int line = 1;
};

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  int line = 1;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == '\n') {
      ++line;
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else {
      std::size_t j = i;
      while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      out.push_back({s.substr(i, j - i), line});
      i = j;
    }
  }
  return out;
}

class TokenStream {
 public:
  explicit TokenStream(std::string_view text) : tokens_(tokenize(text)) {}

  bool done() const { return pos_ >= tokens_.size(); }
  int line() const {
    if (tokens_.empty()) return 1;
    return done() ? tokens_.back().line : tokens_[pos_].line;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::Parse, "line " + std::to_string(line()) + ": " + what);
  }

  std::string_view word(const char* what) {
    if (done()) fail(std::string("unexpected end of input, expected ") + what);
    return tokens_[pos_++].text;
  }

  long long integer(const char* what) {
    if (done()) fail(std::string("unexpected end of input, expected ") + what);
    const std::string_view t = tokens_[pos_].text;
    long long v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      fail(std::string("expected integer ") + what + ", got '" + std::string(t) + "'");
    ++pos_;
    return v;
  }

  int count(const char* what, long long max = 1LL << 31) {
    const long long v = integer(what);
    if (v < 0 || v >= max) {
      --pos_;
      fail(std::string(what) + " out of range");
    }
    return static_cast<int>(v);
  }

  double number(const char* what) {
    if (done()) fail(std::string("unexpected end of input, expected ") + what);
    std::string_view t = tokens_[pos_].text;
    if (!t.empty() && t.front() == '+') t.remove_prefix(1);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      fail(std::string("expected number ") + what + ", got '" + std::string(tokens_[pos_].text) + "'");
    ++pos_;
    return v;
  }

  double nonnegative(const char* what) {
    const int at = line();
    const double v = number(what);
    if (std::isnan(v)) fail(std::string(what) + " is not a number");
    if (v < 0.0)
      throw Error(ErrorCode::Domain, "line " + std::to_string(at) + ": negative " + what);
    if (std::isinf(v)) throw Error(ErrorCode::Domain, "line " + std::to_string(at) + ": infinite " + what);
    return v;
  }

  void finish() {
    if (!done()) fail("unexpected trailing token '" + std::string(tokens_[pos_].text) + "'");
  }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = s.find('\n', start);
    if (end == std::string_view::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

bool blank(std::string_view line) {
  for (char c : line)
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

void append_values(std::string& out, const Eigen::ArrayXd& v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (k) out += ' ';
    out += format_exact(v(k));
  }
  out += '\n';
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::Io, "cannot read '" + path + "'");
  return ss.str();
}

void write_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
}

std::string format_exact(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

std::string format_sig(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// ----------------------------------------------------------------- model

GraphicalModel parse_model(std::string_view text) {
  TokenStream ts(text);
  const std::string_view pre = ts.word("preamble");
  ModelKind kind;
  if (pre == "MARKOV")
    kind = ModelKind::Markov;
  else if (pre == "BAYES")
    kind = ModelKind::Bayes;
  else
    throw Error(ErrorCode::Parse, "line 1: unknown preamble '" + std::string(pre) + "'");
  const int n = ts.count("variable count");
  std::vector<int> cards(static_cast<std::size_t>(n));
  for (auto& c : cards) {
    c = ts.count("cardinality");
    if (c < 1) ts.fail("cardinality must be at least 1");
  }
  const int nf = ts.count("factor count");
  std::vector<std::vector<int>> scopes(static_cast<std::size_t>(nf));
  for (auto& scope : scopes) {
    const int arity = ts.count("arity", n + 1);
    for (int k = 0; k < arity; ++k) {
      const int v = ts.count("variable id", n);
      for (int u : scope)
        if (u == v) ts.fail("variable " + std::to_string(v) + " repeated in a scope");
      scope.push_back(v);
    }
  }
  std::vector<Factor> factors;
  factors.reserve(scopes.size());
  for (const auto& scope : scopes) {
    std::vector<int> sc;
    std::size_t cells = 1;
    for (int v : scope) {
      sc.push_back(cards[static_cast<std::size_t>(v)]);
      cells *= static_cast<std::size_t>(sc.back());
    }
    const int declared = ts.count("table size");
    if (static_cast<std::size_t>(declared) != cells)
      ts.fail("table size " + std::to_string(declared) + " does not match scope size " + std::to_string(cells));
    std::vector<double> values(cells);
    for (auto& x : values) x = ts.nonnegative("table value");
    factors.push_back(Factor::from_unordered(scope, sc, values));
  }
  ts.finish();
  return GraphicalModel(cards, std::move(factors), kind);
}

std::string write_model(const GraphicalModel& m) {
  std::string out = m.kind() == ModelKind::Bayes ? "BAYES\n" : "MARKOV\n";
  out += std::to_string(m.num_variables()) + '\n';
  const auto cards = m.cardinalities();
  for (std::size_t k = 0; k < cards.size(); ++k) {
    if (k) out += ' ';
    out += std::to_string(cards[k]);
  }
  out += '\n';
  out += std::to_string(m.factors().size()) + '\n';
  for (const Factor& f : m.factors()) {
    out += std::to_string(f.arity());
    for (int v : f.scope()) out += ' ' + std::to_string(v);
    out += '\n';
  }
  for (const Factor& raw : m.factors()) {
    const Factor f = raw.to_linear();
    out += '\n' + std::to_string(f.size()) + '\n';
    append_values(out, f.values());
  }
  return out;
}

// -------------------------------------------------------------- evidence

Evidence parse_evidence(std::string_view text, const GraphicalModel* m, std::vector<std::string>* warnings) {
  TokenStream ts(text);
  Evidence e;
  if (ts.done()) return e;
  const long long count = ts.integer("evidence count");
  if (count < 0) ts.fail("negative evidence count");
  for (long long k = 0; k < count; ++k) {
    const long long var = ts.integer("variable id");
    const long long value = ts.integer("value");
    if (var < 0 || value < 0 || var > (1LL << 30) || value > (1LL << 30))
      throw Error(ErrorCode::Evidence, "evidence index out of range");
    if (m) {
      if (var >= m->num_variables())
        throw Error(ErrorCode::Evidence, "evidence on unknown variable " + std::to_string(var));
      if (value >= m->cardinality(static_cast<int>(var)))
        throw Error(ErrorCode::Evidence, "value " + std::to_string(value) + " out of range for variable " +
                                             std::to_string(var));
    }
    const auto [it, fresh] = e.assignments.insert_or_assign(static_cast<int>(var), static_cast<int>(value));
    (void)it;
    if (!fresh && warnings)
      warnings->push_back("variable " + std::to_string(var) + " observed twice; keeping the last value");
  }
  ts.finish();
  return e;
}

std::string write_evidence(const Evidence& e) {
  std::string out = std::to_string(e.assignments.size());
  for (const auto& [var, value] : e.assignments) out += ' ' + std::to_string(var) + ' ' + std::to_string(value);
  return out + '\n';
}

EliminationOrdering parse_ordering(std::string_view text) {
  TokenStream ts(text);
  const int n = ts.count("ordering length");
  EliminationOrdering pi;
  for (int k = 0; k < n; ++k) pi.order.push_back(ts.count("variable id"));
  ts.finish();
  return pi;
}

std::string write_ordering(const EliminationOrdering& pi) {
  std::string out = std::to_string(pi.order.size());
  for (int v : pi.order) out += ' ' + std::to_string(v);
  return out + '\n';
}

// --------------------------------------------------------- decomposition

TreeDecomposition parse_decomposition(std::string_view text) {
  const auto lines = split_lines(text);
  std::size_t li = 0;
  while (li < lines.size() && blank(lines[li])) ++li;
  if (li == lines.size()) throw Error(ErrorCode::Parse, "line 1: empty decomposition");
  auto parse_line = [&](std::size_t at) {
    TokenStream ts(lines[at]);
    std::vector<int> ids;
    while (!ts.done()) {
      const long long v = ts.integer("index");
      if (v < 0 || v > (1LL << 30))
        throw Error(ErrorCode::Parse, "line " + std::to_string(at + 1) + ": index out of range");
      ids.push_back(static_cast<int>(v));
    }
    return ids;
  };
  const auto head = parse_line(li);
  if (head.size() != 1) throw Error(ErrorCode::Parse, "line " + std::to_string(li + 1) + ": expected cluster count");
  TreeDecomposition td;
  ++li;
  for (int c = 0; c < head[0]; ++c, ++li) {
    if (li >= lines.size())
      throw Error(ErrorCode::Parse, "line " + std::to_string(li + 1) + ": missing cluster line");
    auto cluster = parse_line(li);
    std::sort(cluster.begin(), cluster.end());
    if (std::adjacent_find(cluster.begin(), cluster.end()) != cluster.end())
      throw Error(ErrorCode::Parse, "line " + std::to_string(li + 1) + ": repeated vertex in a cluster");
    td.clusters.push_back(std::move(cluster));
  }
  for (; li < lines.size(); ++li) {
    if (blank(lines[li])) continue;
    const auto e = parse_line(li);
    if (e.size() != 2) throw Error(ErrorCode::Parse, "line " + std::to_string(li + 1) + ": expected a tree edge 'a b'");
    td.tree_edges.emplace_back(e[0], e[1]);
  }
  return td;
}

std::string write_decomposition(const TreeDecomposition& td) {
  std::string out = std::to_string(td.clusters.size()) + '\n';
  for (const auto& c : td.clusters) {
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (k) out += ' ';
      out += std::to_string(c[k]);
    }
    out += '\n';
  }
  for (const auto& [a, b] : td.tree_edges) out += std::to_string(a) + ' ' + std::to_string(b) + '\n';
  return out;
}

// ------------------------------------------------------------------ CHMM

CHMMParams parse_chmm_params(std::string_view text) {
  TokenStream ts(text);
  if (ts.word("preamble") != "CHMM") throw Error(ErrorCode::Parse, "line 1: expected preamble CHMM");
  CHMMParams p;
  p.I = ts.count("I");
  p.T = ts.count("T");
  p.K = ts.count("K");
  p.M = ts.count("M");
  if (p.I < 1 || p.T < 1 || p.K < 1 || p.M < 1) ts.fail("I, T, K, M must be at least 1");
  auto table = [&](Eigen::Index expected, const char* name) {
    const int n = ts.count("table size");
    if (n != expected)
      ts.fail(std::string(name) + " needs " + std::to_string(expected) + " values, got " + std::to_string(n));
    Eigen::VectorXd v(n);
    for (int k = 0; k < n; ++k) v(k) = ts.nonnegative("table value");
    return v;
  };
  auto matrix = [](const Eigen::VectorXd& v, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = v(r * cols + c);
    return m;
  };
  bool seen[4] = {false, false, false, false};
  while (!ts.done()) {
    const std::string_view name = ts.word("section name");
    int slot;
    if (name == "initial") {
      slot = 0;
      p.init = table(p.K, "initial");
    } else if (name == "transition") {
      slot = 1;
      p.transition = matrix(table(static_cast<Eigen::Index>(p.K) * p.K, "transition"), p.K, p.K);
    } else if (name == "emission") {
      slot = 2;
      p.emission = matrix(table(static_cast<Eigen::Index>(p.K) * p.M, "emission"), p.K, p.M);
    } else if (name == "coupling") {
      slot = 3;
      const std::string_view kind = ts.word("coupling kind");
      if (kind == "pairwise") {
        p.coupling_kind = CouplingKind::Pairwise;
        p.coupling_pair = matrix(table(static_cast<Eigen::Index>(p.K) * p.K, "coupling"), p.K, p.K);
      } else if (kind == "full") {
        p.coupling_kind = CouplingKind::Full;
        Eigen::Index cells = 1;
        for (int i = 0; i < p.I; ++i) {
          cells *= p.K;
          if (cells > (1 << 26)) ts.fail("full coupling table too large");
        }
        p.coupling_full = table(cells, "coupling");
      } else {
        ts.fail("coupling kind must be pairwise or full");
      }
    } else {
      ts.fail("unknown section '" + std::string(name) + "'");
    }
    if (seen[slot]) ts.fail("section '" + std::string(name) + "' given twice");
    seen[slot] = true;
  }
  for (int k = 0; k < 4; ++k)
    if (!seen[k]) ts.fail("missing section");
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Domain, e.what());
  }
  return p;
}

std::string write_chmm_params(const CHMMParams& p) {
  std::string out = "CHMM\n" + std::to_string(p.I) + ' ' + std::to_string(p.T) + ' ' + std::to_string(p.K) + ' ' +
                    std::to_string(p.M) + '\n';
  auto flat = [](const Eigen::MatrixXd& m) {
    Eigen::ArrayXd v(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) v(r * m.cols() + c) = m(r, c);
    return v;
  };
  out += "initial " + std::to_string(p.init.size()) + '\n';
  append_values(out, p.init.array());
  out += "transition " + std::to_string(p.transition.size()) + '\n';
  append_values(out, flat(p.transition));
  out += "emission " + std::to_string(p.emission.size()) + '\n';
  append_values(out, flat(p.emission));
  if (p.coupling_kind == CouplingKind::Pairwise) {
    out += "coupling pairwise " + std::to_string(p.coupling_pair.size()) + '\n';
    append_values(out, flat(p.coupling_pair));
  } else {
    out += "coupling full " + std::to_string(p.coupling_full.size()) + '\n';
    append_values(out, p.coupling_full.array());
  }
  return out;
}

Observations parse_observations(std::string_view text) {
  const auto lines = split_lines(text);
  std::vector<std::vector<int>> rows;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    if (blank(lines[li])) continue;
    TokenStream ts(lines[li]);
    std::vector<int> row;
    while (!ts.done()) {
      const long long v = ts.integer("symbol");
      if (v < 0 || v > (1LL << 30))
        throw Error(ErrorCode::Domain, "line " + std::to_string(li + 1) + ": symbol out of range");
      row.push_back(static_cast<int>(v));
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorCode::Parse, "line " + std::to_string(li + 1) + ": expected " +
                                        std::to_string(rows.front().size()) + " columns");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::Parse, "line 1: empty observation grid");
  Observations obs(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t i = 0; i < rows[t].size(); ++i)
      obs(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = rows[t][i];
  return obs;
}

std::string write_observations(const Observations& obs) {
  std::string out;
  for (Eigen::Index t = 0; t < obs.rows(); ++t) {
    for (Eigen::Index i = 0; i < obs.cols(); ++i) {
      if (i) out += ' ';
      out += std::to_string(obs(t, i));
    }
    out += '\n';
  }
  return out;
}

std::string write_em_trace_csv(const EMTrace& trace) {
  std::string out = "iteration,objective,seconds\n";
  for (const auto& it : trace.iterations)
    out += std::to_string(it.iteration) + ',' + format_exact(it.objective) + ',' + format_sig(it.seconds, 6) + '\n';
  return out;
}

}  // namespace gm

#include "gm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <CLI11.hpp>

#include "gm/benchmark.hpp"
#include "gm/chmm.hpp"
#include "gm/elimination.hpp"
#include "gm/io.hpp"
#include "gm/message_passing.hpp"
#include "gm/variational.hpp"

namespace gm {

namespace {

struct UsageError {
  std::string what;
};

struct Flags {
  std::string task;
  std::vector<std::string> inputs;
  std::string evidence;
  std::string heuristic = "minfill";
  bool heuristic_given = false;
  std::uint64_t seed = 0;
  std::optional<int> max_iter;
  double damping = 0.0;
  std::optional<double> tol;
  std::string ordering;
  std::string family = "exact";
  std::string out;
  bool decomposition = false;
  double budget = std::numeric_limits<double>::infinity();
};

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::Parse:
    case ErrorCode::Domain:
    case ErrorCode::Evidence:
      return 2;
    case ErrorCode::Capacity:
    case ErrorCode::OracleTooLarge:
      return 3;
    case ErrorCode::Io:
      return 5;
    default:
      return 4;
  }
}

std::string distribution_line(const Eigen::VectorXd& p) {
  std::string line = std::to_string(p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) line += ' ' + format_sig(p(k));
  return line + '\n';
}

Evidence load_evidence(const Flags& f, const GraphicalModel& m, std::ostream& err) {
  if (f.evidence.empty()) return {};
  std::vector<std::string> warnings;
  Evidence e = parse_evidence(read_file(f.evidence), &m, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  return e;
}

int restarts(const Flags& f) { return f.max_iter.value_or(kDefaultRestarts); }

EliminationOrdering choose_ordering(const Flags& f, const GraphicalModel& conditioned) {
  if (!f.ordering.empty()) return parse_ordering(read_file(f.ordering));
  const Heuristic h = *parse_heuristic(f.heuristic);
  return run_heuristic(primal_graph(conditioned), h, f.seed, restarts(f), f.budget).ordering;
}

std::string task_pr(const Flags& f, const GraphicalModel& m, const Evidence& e) {
  const double ln_z = log_partition_function(m, choose_ordering(f, condition(m, e)), e);
  return "PR\n" + format_exact(ln_z / std::log(10.0)) + '\n';
}

std::string task_mar(const Flags& f, const GraphicalModel& m, const Evidence& e) {
  const GraphicalModel c = condition(m, e);
  const EliminationOrdering pi = choose_ordering(f, c);
  std::string out = "MAR\n" + std::to_string(m.num_variables()) + '\n';
  for (int v = 0; v < m.num_variables(); ++v) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(m.cardinality(v));
    if (c.is_observed(v)) {
      p(c.evidence().assignments.at(v)) = 1.0;
    } else {
      const int keep[] = {v};
      p = marginal(c, keep, pi).values().matrix();
    }
    out += distribution_line(p);
  }
  return out;
}

std::string task_map(const Flags& f, const GraphicalModel& m, const Evidence& e) {
  const MapResult r = map_assignment(m, choose_ordering(f, condition(m, e)), e);
  std::string out = "MAP\n" + format_sig(r.value) + '\n';
  for (std::size_t k = 0; k < r.assignment.size(); ++k) {
    if (k) out += ' ';
    out += std::to_string(r.assignment[k]);
  }
  return out + '\n';
}

std::string task_ent(const Flags& f, const GraphicalModel& m, const Evidence& e) {
  if (!e.empty()) throw UsageError{"ent does not accept --evidence"};
  return "ENT\n" + format_exact(entropy(m, choose_ordering(f, m))) + '\n';
}

std::string task_tw(const Flags& f, const GraphicalModel& m) {
  const Graph g = primal_graph(m);
  const Heuristic h = *parse_heuristic(f.heuristic);
  const OrderingResult r = run_heuristic(g, h, f.seed, restarts(f), f.budget);
  std::string out = "TW\nheuristic " + f.heuristic + "\nwidth " + std::to_string(r.report.width) +
                    "\nfill_edges " + std::to_string(r.report.fill_edges.size()) + "\nordering";
  for (int v : r.ordering.order) out += ' ' + std::to_string(v);
  out += '\n';
  if (f.decomposition || !f.out.empty()) {
    const std::string td = write_decomposition(decomposition_from_ordering(g, r.ordering));
    if (f.decomposition) out += "decomposition\n" + td;
    if (!f.out.empty()) write_file(f.out, td);
  }
  return out;
}

std::string task_lbp(const Flags& f, const GraphicalModel& m, const Evidence& e) {
  LbpOptions opts;
  opts.damping = f.damping;
  if (f.tol) opts.tol = *f.tol;
  if (f.max_iter) opts.max_iter = *f.max_iter;
  const LbpResult r = loopy_bp(condition(m, e), Semiring::sum_product(), opts);
  std::string out = "LBP\nconverged " + std::to_string(r.converged ? 1 : 0) + "\niterations " +
                    std::to_string(r.iterations) + '\n' + std::to_string(m.num_variables()) + '\n';
  for (const auto& b : r.beliefs.singleton) out += distribution_line(b);
  return out;
}

std::string task_mf(const Flags& f, const GraphicalModel& m, const Evidence& e) {
  if (!e.empty()) throw UsageError{"mf does not accept --evidence"};
  MeanFieldOptions opts;
  if (f.tol) opts.tol = *f.tol;
  if (f.max_iter) opts.max_iter = *f.max_iter;
  const MeanFieldState st = mean_field_fit(potts_from_binary_model(m), opts);
  std::string out = "MF\nconverged " + std::to_string(st.converged ? 1 : 0) + "\niterations " +
                    std::to_string(st.iterations) + "\nobjective " + format_exact(st.free_energy) + '\n' +
                    std::to_string(st.q.size()) + '\n';
  for (Eigen::Index i = 0; i < st.q.size(); ++i) {
    if (i) out += ' ';
    out += format_sig(st.q(i));
  }
  return out + '\n';
}

std::string task_chmm_em(const Flags& f) {
  if (f.evidence.empty()) throw UsageError{"chmm-em needs the observation grid via --evidence"};
  const CHMMParams p0 = parse_chmm_params(read_file(f.inputs.front()));
  const Observations obs = parse_observations(read_file(f.evidence));
  try {
    validate_observations(p0, obs);
  } catch (const Error& e) {
    throw Error(ErrorCode::Evidence, e.what());
  }
  EMOptions opts;
  if (f.max_iter) opts.iterations = *f.max_iter;
  if (f.tol) opts.rel_tol = *f.tol;
  EMResult r;
  if (f.family == "exact") {
    r = exact_em(p0, obs, opts);
  } else {
    const VariationalFamily fam = f.family == "q0"   ? VariationalFamily::Q0
                                  : f.family == "qm" ? VariationalFamily::QM
                                                     : VariationalFamily::Bethe;
    r = variational_em(p0, obs, fam, opts);
  }
  if (!f.out.empty()) write_file(f.out, write_em_trace_csv(r.trace));
  std::string out = "CHMM-EM\nfamily " + f.family + "\niterations " +
                    std::to_string(r.trace.iterations.size() - 1) + "\nobjective " +
                    format_exact(r.trace.iterations.back().objective) + "\ntrace\n";
  for (const auto& it : r.trace.iterations)
    out += std::to_string(it.iteration) + ' ' + format_exact(it.objective) + '\n';
  return out + "params\n" + write_chmm_params(r.params);
}

int task_bench(const Flags& f, std::ostream& out, std::ostream& err) {
  std::vector<Heuristic> hs = kAllHeuristics;
  if (f.heuristic_given) hs = {*parse_heuristic(f.heuristic)};
  const BenchmarkReport r = benchmark_orderings(f.inputs, hs, f.seed, f.budget, restarts(f));
  for (const auto& s : r.skipped) err << "skipped " << s << '\n';
  for (const auto& e : r.entries)
    err << "time " << e.instance << ' ' << heuristic_name(e.heuristic) << ' ' << format_sig(e.seconds) << "s\n";
  if (r.entries.empty() && !r.skipped.empty()) {
    err << "error: no readable instance\n";
    return 5;
  }
  out << r.csv();
  return 0;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  static const std::vector<std::string> tasks = {"pr", "mar", "map", "ent", "tw", "lbp", "mf", "chmm-em", "bench"};
  Flags f;
  CLI::App app{"Discrete graphical model inference", "gm"};
  app.add_option("task", f.task, "pr | mar | map | ent | tw | lbp | mf | chmm-em | bench")
      ->required()
      ->check(CLI::IsMember(tasks));
  app.add_option("model", f.inputs, "model file (UAI, or CHMM parameters for chmm-em); several for bench")
      ->required();
  app.add_option("--evidence", f.evidence, "evidence file (observation grid for chmm-em)");
  auto* heuristic = app.add_option("--heuristic", f.heuristic, "elimination ordering heuristic")
                        ->check(CLI::IsMember({"minfill", "mindegree", "mcs", "rand"}));
  app.add_option("--seed", f.seed, "random seed");
  app.add_option("--max-iter", f.max_iter, "iteration budget (LBP, mean field, EM, randomized restarts)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--damping", f.damping, "LBP damping in [0, 1)")->check(CLI::Range(0.0, 0.999999));
  app.add_option("--tol", f.tol, "convergence tolerance")->check(CLI::NonNegativeNumber);
  app.add_option("--ordering", f.ordering, "elimination ordering file");
  app.add_option("--family", f.family, "CHMM E-step")->check(CLI::IsMember({"exact", "q0", "qm", "bethe"}));
  app.add_option("--out", f.out, "output file");
  app.add_flag("--decomposition", f.decomposition, "tw: also print the tree decomposition");
  app.add_option("--budget", f.budget, "time budget in seconds for randomized min-fill")
      ->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  }
  f.heuristic_given = heuristic->count() > 0;
  if (f.task != "bench" && f.inputs.size() != 1) {
    err << "usage error: " << f.task << " takes exactly one model file\n";
    return 1;
  }
  if (f.task != "chmm-em" && f.family != "exact") {
    err << "usage error: --family applies to chmm-em only\n";
    return 1;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    std::string result;
    if (f.task == "bench") {
      const int code = task_bench(f, out, err);
      err << "time " << format_sig(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count())
          << "s\n";
      return code;
    }
    if (f.task == "chmm-em") {
      result = task_chmm_em(f);
    } else {
      const GraphicalModel m = parse_model(read_file(f.inputs.front()));
      const Evidence e = load_evidence(f, m, err);
      if (f.task == "pr")
        result = task_pr(f, m, e);
      else if (f.task == "mar")
        result = task_mar(f, m, e);
      else if (f.task == "map")
        result = task_map(f, m, e);
      else if (f.task == "ent")
        result = task_ent(f, m, e);
      else if (f.task == "tw")
        result = task_tw(f, m);
      else if (f.task == "lbp")
        result = task_lbp(f, m, e);
      else
        result = task_mf(f, m, e);
    }
    if (!f.out.empty() && f.task != "tw" && f.task != "chmm-em")
      write_file(f.out, result);
    else
      out << result;
    err << "time " << format_sig(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count())
        << "s\n";
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what << '\n';
    return 1;
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::bad_alloc&) {
    err << "capacity error: out of memory\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace gm

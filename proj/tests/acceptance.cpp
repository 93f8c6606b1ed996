#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "chmm_oracles.hpp"
#include "gm/chmm.hpp"
#include "gm/cli.hpp"
#include "gm/elimination.hpp"
#include "gm/io.hpp"
#include "gm/message_passing.hpp"
#include "gm/treewidth.hpp"
#include "gm/variational.hpp"
#include "support.hpp"

using namespace gm;
using namespace gm::testing;

namespace {

class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && first_failure_.empty()) first_failure_ = what;
    if (!ok) ++failures_;
  }
  bool passed() const { return failures_ == 0; }
  std::string summary() const {
    if (passed()) return std::to_string(checks_) + " checks";
    return std::to_string(failures_) + "/" + std::to_string(checks_) + " checks failed; first: " + first_failure_;
  }

 private:
  int checks_ = 0;
  int failures_ = 0;
  std::string first_failure_;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string str(double v) { return format_sig(v, 3); }

double enumerated_entropy(const GraphicalModel& m) {
  double z = 0.0;
  std::vector<double> w;
  for_each_assignment(m.cardinalities(), [&](const std::vector<int>& x) {
    w.push_back(evaluate(m, x));
    z += w.back();
  });
  double h = 0.0;
  for (double v : w)
    if (v > 0) h -= v / z * std::log(v / z);
  return h;
}

std::vector<GraphicalModel> oracle_corpus() {
  std::mt19937_64 rng(20261016);
  std::vector<GraphicalModel> corpus;
  for (int k = 0; k < 200; ++k) corpus.push_back(random_model(rng, 10, 4, 3));
  return corpus;
}

void counting(Checker& c) {
  const auto t0 = Clock::now();
  const auto corpus = oracle_corpus();
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    const GraphicalModel& m = corpus[k];
    const std::string tag = "model " + std::to_string(k);
    const double z_oracle = brute_force(m, Semiring::sum_product(), {}).values()(0);
    const double z = std::exp(log_partition_function(m));
    c.expect(rel_diff(z, z_oracle) <= 1e-9, tag + ": Z " + str(z) + " vs " + str(z_oracle));
    for (int v = 0; v < m.num_variables(); ++v) {
      const int keep[] = {v};
      const Factor p = marginal(m, keep);
      const Factor q = normalize(brute_force(m, Semiring::sum_product(), keep), Semiring::sum_product());
      double worst = 0.0;
      for (Eigen::Index i = 0; i < p.values().size(); ++i) worst = std::max(worst, rel_diff(p.values()(i), q.values()(i)));
      c.expect(worst <= 1e-9, tag + ": marginal of " + std::to_string(v));
    }
    const double h = entropy(m), h_oracle = enumerated_entropy(m);
    c.expect(rel_diff(h, h_oracle) <= 1e-9 || std::abs(h - h_oracle) <= 1e-12, tag + ": entropy");
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 30.0, "runtime " + str(secs) + " s");
}

void optimization(Checker& c) {
  const auto corpus = oracle_corpus();
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    const GraphicalModel& m = corpus[k];
    const double best = brute_force(m, Semiring::max_product(), {}).values()(0);
    const MapResult r = map_assignment(m);
    c.expect(rel_diff(r.value, best) <= 1e-9, "model " + std::to_string(k) + ": MAP value");
    c.expect(rel_diff(evaluate(m, r.assignment), best) <= 1e-9, "model " + std::to_string(k) + ": assignment value");
  }
}

void ordering_invariance(Checker& c) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    const GraphicalModel m = random_model(rng, 10, 4, 3);
    const double ref = log_partition_function(m);
    for (int j = 0; j < 5; ++j) {
      const double lz = log_partition_function(m, random_ordering(rng, m.num_variables()));
      c.expect(rel_diff(std::exp(lz), std::exp(ref)) <= 1e-9, "model " + std::to_string(k) + " ordering " + std::to_string(j));
    }
  }
}

// Width of an elimination order on a bitmask adjacency, for the exhaustive oracle.
int bitmask_width(std::vector<unsigned> adj, const std::vector<int>& order) {
  int width = 0;
  unsigned alive = (1u << adj.size()) - 1;
  for (int v : order) {
    const unsigned nb = adj[static_cast<std::size_t>(v)] & alive & ~(1u << v);
    width = std::max(width, __builtin_popcount(nb));
    for (std::size_t u = 0; u < adj.size(); ++u)
      if (nb & (1u << u)) adj[u] |= nb & ~(1u << u);
    alive &= ~(1u << v);
  }
  return width;
}

void treewidth(Checker& c) {
  const auto t0 = Clock::now();
  const Graph g = house_graph();
  const EliminationReport good = elimination_game(g, one_based({7, 6, 5, 4, 3, 2, 1}));
  c.expect(good.width == 2 && good.fill_edges.size() == 1,
           "house graph order (7,6,5,4,3,2,1): width " + std::to_string(good.width) + ", fill " +
               std::to_string(good.fill_edges.size()));
  const EliminationReport bad = elimination_game(g, one_based({7, 5, 3, 1, 6, 4, 2}));
  c.expect(bad.width == 3 && bad.fill_edges.size() == 5,
           "house graph order (7,5,3,1,6,4,2): width " + std::to_string(bad.width) + ", fill " +
               std::to_string(bad.fill_edges.size()));
  c.expect(greedy_order(g, OrderingCriterion::MinFill).report.width == 2, "min-fill on the house graph");

  std::vector<unsigned> adj(7, 0);
  for (const Edge& e : g.edges()) {
    adj[static_cast<std::size_t>(e.first)] |= 1u << e.second;
    adj[static_cast<std::size_t>(e.second)] |= 1u << e.first;
  }
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  int best = 7;
  do best = std::min(best, bitmask_width(adj, perm));
  while (std::next_permutation(perm.begin(), perm.end()));
  c.expect(best == 2, "exhaustive house graph treewidth " + std::to_string(best));

  std::mt19937_64 rng(4);
  for (int n = 5; n <= 50; ++n) {
    Graph tree(n);
    for (const Edge& e : random_tree_edges(rng, n)) tree.add_edge(e.first, e.second);
    c.expect(greedy_order(tree, OrderingCriterion::MinFill).report.width == 1, "tree of size " + std::to_string(n));
  }
  for (int r = 1; r <= 5; ++r)
    for (int col = std::max(r, 2); col <= 5; ++col) {
      const int w = randomized_iterative_minfill(grid_graph(r, col), kDefaultRestarts, kDefaultTimeBudget, 1).best.report.width;
      c.expect(w == r, "grid " + std::to_string(r) + "x" + std::to_string(col) + " width " + std::to_string(w));
    }
  const double secs = seconds_since(t0);
  c.expect(secs < 10.0, "runtime " + str(secs) + " s");
}

std::string clusters_text(const std::vector<std::vector<int>>& cs) {
  std::string s;
  for (const auto& cl : cs) {
    s += '{';
    for (std::size_t k = 0; k < cl.size(); ++k) s += (k ? "," : "") + std::to_string(cl[k] + 1);
    s += '}';
  }
  return s;
}

void decomposition(Checker& c) {
  const Graph g = house_graph();
  const TreeDecomposition td = decomposition_from_ordering(g, one_based({7, 6, 5, 4, 3, 2, 1}));
  const std::set<std::vector<int>> reference = {{0, 1, 3}, {0, 2, 3}, {2, 3, 4}, {4, 5}, {4, 6}};
  const std::set<std::vector<int>> got(td.clusters.begin(), td.clusters.end());
  c.expect(got == reference, "order (7,6,5,4,3,2,1) gives clusters " + clusters_text(td.clusters) +
                                  ", reference lists {1,2,4}{1,3,4}{3,4,5}{5,6}{5,7}");
  c.expect(static_cast<bool>(validate_decomposition(g, td)), "house graph decomposition invalid");
  TreeDecomposition drawn;
  drawn.clusters = {{0, 1, 3}, {0, 2, 3}, {2, 3, 4}, {4, 5}, {4, 6}};
  drawn.tree_edges = {{0, 1}, {1, 2}, {2, 3}, {2, 4}};
  c.expect(static_cast<bool>(validate_decomposition(g, drawn)), "reference decomposition invalid");
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dn(1, 12);
  std::uniform_real_distribution<double> dp(0.0, 1.0);
  for (int k = 0; k < 1000; ++k) {
    const int n = dn(rng);
    const Graph h = random_graph(rng, n, dp(rng));
    const DecompositionCheck chk = validate_decomposition(h, decomposition_from_ordering(h, random_ordering(rng, n)));
    c.expect(chk.valid, "random pair " + std::to_string(k) + ": " + chk.diagnostic);
  }
}

void tree_message_passing(Checker& c) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> dn(2, 20);
  for (int k = 0; k < 100; ++k) {
    const GraphicalModel m = random_tree_model(rng, dn(rng), 4);
    const TreePassResult tp = tree_message_pass(m, Semiring::sum_product());
    const LbpResult lbp = loopy_bp(m, Semiring::sum_product());
    c.expect(lbp.converged, "tree " + std::to_string(k) + ": LBP did not converge");
    for (int v = 0; v < m.num_variables(); ++v) {
      const int keep[] = {v};
      const Eigen::VectorXd p = marginal(m, keep).values().matrix();
      const auto sv = static_cast<std::size_t>(v);
      c.expect((p - tp.beliefs.singleton[sv]).cwiseAbs().maxCoeff() <= 1e-9, "tree " + std::to_string(k) + ": tree pass belief");
      c.expect((p - lbp.beliefs.singleton[sv]).cwiseAbs().maxCoeff() <= 1e-9, "tree " + std::to_string(k) + ": LBP belief");
    }
    const TreePassResult mp = tree_message_pass(m, Semiring::max_product());
    std::vector<int> x;
    for (const auto& b : mp.beliefs.singleton) {
      Eigen::Index arg;
      b.maxCoeff(&arg);
      x.push_back(static_cast<int>(arg));
    }
    c.expect(rel_diff(evaluate(m, x), map_assignment(m).value) <= 1e-9, "tree " + std::to_string(k) + ": max-product argmax");
  }
}

void calibration(Checker& c) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dn(2, 8);
  for (int k = 0; k < 30; ++k) {
    const GraphicalModel m = random_tree_model(rng, dn(rng), 3);
    const GraphicalModel r = reparametrize_tree(m);
    double ratio = -1.0, worst = 0.0;
    for_each_assignment(m.cardinalities(), [&](const std::vector<int>& x) {
      const double q = evaluate(r, x) / evaluate(m, x);
      if (ratio < 0) ratio = q;
      worst = std::max(worst, rel_diff(q, ratio));
    });
    c.expect(worst <= 1e-9, "tree " + std::to_string(k) + ": joint ratio varies by " + str(worst));
    const CalibrationCheck chk = check_calibration(r);
    c.expect(chk.calibrated, "tree " + std::to_string(k) + ": " + chk.diagnostic);
  }
  for (int k = 0; k < 30; ++k) {
    const GraphicalModel m = random_model(rng, 8, 3, 3);
    const TreeDecomposition td = decomposition_from_ordering(primal_graph(m), default_ordering(m));
    const CalibratedTree ct = calibrate_junction_tree(m, td, Semiring::sum_product());
    for (std::size_t cl = 0; cl < td.clusters.size(); ++cl) {
      const Factor bf = normalize(brute_force(m, Semiring::sum_product(), td.clusters[cl]), Semiring::sum_product());
      double worst = 0.0;
      for (Eigen::Index i = 0; i < bf.values().size(); ++i)
        worst = std::max(worst, std::abs(ct.beliefs[cl].values()(i) - bf.values()(i)));
      c.expect(worst <= 1e-9, "model " + std::to_string(k) + " cluster " + std::to_string(cl));
    }
  }
}

void bethe(Checker& c) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dn(2, 20);
  for (int k = 0; k < 100; ++k) {
    const GraphicalModel m = random_tree_model(rng, dn(rng), 4);
    const double f = bethe_free_energy(m, tree_message_pass(m, Semiring::sum_product()).beliefs);
    const double lz = log_partition_function(m);
    c.expect(std::abs(f + lz) <= 1e-9, "tree " + std::to_string(k) + ": F " + str(f) + " vs -ln Z " + str(-lz));
  }
}

PottsModel random_potts(std::mt19937_64& rng, int n, double p_edge, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::bernoulli_distribution edge(p_edge);
  Eigen::VectorXd a(n);
  for (int i = 0; i < n; ++i) a(i) = u(rng);
  std::vector<Coupling> cs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (edge(rng)) cs.push_back({i, j, u(rng)});
  return PottsModel(a, cs);
}

void mean_field(Checker& c) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> dn(2, 12);
  for (int k = 0; k < 40; ++k) {
    const PottsModel m = random_potts(rng, dn(rng), 0.5, 1.5);
    MeanFieldOptions opts;
    opts.init = k % 2 ? MeanFieldInit::Random : MeanFieldInit::Half;
    opts.seed = static_cast<std::uint64_t>(k);
    opts.tol = 1e-10;
    const MeanFieldState s = mean_field_fit(m, opts);
    const std::string tag = "model " + std::to_string(k);
    double resid = 0.0;
    for (int i = 0; i < m.n(); ++i) {
      double field = m.a()(i);
      for (const Coupling& cp : m.couplings()) {
        if (cp.i == i) field += cp.b * s.q(cp.j);
        if (cp.j == i) field += cp.b * s.q(cp.i);
      }
      resid = std::max(resid, std::abs(s.q(i) - 1.0 / (1.0 + std::exp(-field))));
    }
    c.expect(s.converged && resid < 1e-9, tag + ": residual " + str(resid));
    const GraphicalModel g = to_graphical_model(m);
    const double gap = mf_objective(m, s.q) + log_partition_function(g) - kl_divergence(s.q, g);
    c.expect(std::abs(gap) <= 1e-9, tag + ": identity gap " + str(gap));
    for (std::size_t t = 1; t < s.objective_trace.size(); ++t)
      c.expect(s.objective_trace[t] <= s.objective_trace[t - 1] + 1e-12, tag + ": objective rose at sweep " + std::to_string(t));
  }
  const Eigen::VectorXd a = (Eigen::VectorXd(4) << -2.0, -0.3, 0.0, 1.7).finished();
  const MeanFieldState s = mean_field_fit(PottsModel(a, {}));
  for (int i = 0; i < 4; ++i)
    c.expect(s.q(i) == std::exp(a(i)) / (1.0 + std::exp(a(i))), "b = 0 site " + std::to_string(i));
}

Observations random_grid(std::mt19937_64& rng, int T, int I, int M) {
  std::uniform_int_distribution<int> d(0, M - 1);
  Observations o(T, I);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < I; ++i) o(t, i) = d(rng);
  return o;
}

void coupled_hmm(Checker& c) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(10);
  for (int I = 1; I <= 2; ++I)
    for (int T = 1; T <= 4; ++T)
      for (CouplingKind kind : {CouplingKind::Pairwise, CouplingKind::Full}) {
        const CHMMParams p = random_chmm_params(I, T, 2, 3, static_cast<std::uint64_t>(10 * I + T), kind);
        const Observations o = random_grid(rng, T, I, 3);
        const double ll = chmm_log_likelihood(p, o);
        c.expect(std::abs(ll - oracle_log_likelihood(p, o)) <= 1e-9, "merged log-likelihood I=" + std::to_string(I) +
                                                                        " T=" + std::to_string(T));
      }
  EMOptions em;
  em.iterations = 50;
  em.rel_tol = 0.0;
  for (int k = 0; k < 10; ++k) {
    const CHMMSample data = sample_chmm(random_chmm_params(2, 40, 2, 3, 100 + k), k);
    const EMResult r = exact_em(random_chmm_params(2, 40, 2, 3, 200 + k), data.observed, em);
    for (std::size_t it = 1; it < r.trace.iterations.size(); ++it)
      c.expect(r.trace.iterations[it].objective >= r.trace.iterations[it - 1].objective - 1e-8,
               "instance " + std::to_string(k) + ": log-likelihood fell at iteration " + std::to_string(it));
  }
  for (int k = 0; k < 5; ++k) {
    const CHMMParams p0 = random_chmm_params(1, 60, 3, 4, 300 + k);
    const CHMMSample data = sample_chmm(random_chmm_params(1, 60, 3, 4, 400 + k), k);
    const EMResult r = exact_em(p0, data.observed, em);
    BaumWelch bw{p0.init / p0.init.sum(), p0.transition, p0.emission};
    for (int s = 0; s < 3; ++s) {
      bw.A.row(s) /= bw.A.row(s).sum();
      bw.B.row(s) /= bw.B.row(s).sum();
    }
    const Eigen::VectorXi o = data.observed.col(0);
    for (int it = 0; it < em.iterations; ++it) {
      const double ll = bw.step(o);
      c.expect(std::abs(r.trace.iterations[static_cast<std::size_t>(it)].objective - ll) <= 1e-8,
               "Baum-Welch instance " + std::to_string(k) + " iteration " + std::to_string(it));
    }
  }
  for (VariationalFamily fam : {VariationalFamily::Q0, VariationalFamily::QM}) {
    const std::string name = fam == VariationalFamily::Q0 ? "Q0" : "QM";
    for (int k = 0; k < 10; ++k) {
      const CHMMParams p = random_chmm_params(2, 3, 2, 3, 500 + k, k % 2 ? CouplingKind::Full : CouplingKind::Pairwise);
      const Observations o = random_grid(rng, 3, 2, 3);
      const VariationalPosterior q = variational_e_step(p, o, fam);
      const double ll = oracle_log_likelihood(p, o);
      c.expect(q.F <= ll + 1e-9, name + " bound, instance " + std::to_string(k));
      c.expect(std::abs(q.F + kl_to_posterior(p, o, q) - ll) <= 1e-9, name + " F + KL, instance " + std::to_string(k));
    }
  }
  for (int k = 0; k < 5; ++k) {
    CHMMParams p = random_chmm_params(2, 4, 2, 3, 600 + k);
    p.coupling_pair.setOnes();
    const Observations o = random_grid(rng, 4, 2, 3);
    const double f = variational_e_step(p, o, VariationalFamily::QM).F;
    c.expect(std::abs(f - oracle_log_likelihood(p, o)) <= 1e-9, "uniform coupling QM, instance " + std::to_string(k));
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime " + str(secs) + " s");
}

std::string cli_stdout(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  run_cli(args, out, err);
  return out.str();
}

void cli_round_trip(Checker& c) {
  const auto dir = std::filesystem::temp_directory_path() / "gm_acceptance_corpus";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(11);
  std::vector<std::string> paths;
  for (int k = 0; k < 50; ++k) {
    const auto path = (dir / ("model" + std::to_string(k) + ".uai")).string();
    write_file(path, write_model(random_model(rng, 10, 4, 3)));
    paths.push_back(path);
  }
  for (const auto& path : paths) {
    const GraphicalModel once = parse_model(read_file(path));
    const std::string text = write_model(once);
    c.expect(write_model(parse_model(text)) == text, path + ": not a fixed point");
    c.expect(text == read_file(path), path + ": canonical text changed");
  }
  const std::vector<std::vector<std::string>> runs = {
      {"pr", paths[0], "--heuristic", "rand", "--seed", "17"},
      {"mar", paths[1], "--seed", "17"},
      {"map", paths[2], "--heuristic", "mindegree"},
      {"tw", paths[3], "--heuristic", "rand", "--seed", "17", "--decomposition"},
      {"lbp", paths[4], "--damping", "0.3"},
      {"bench", paths[5], paths[6], paths[7], "--seed", "17"},
  };
  for (const auto& args : runs) c.expect(cli_stdout(args) == cli_stdout(args), "task " + args[0] + " is not byte-stable");
  std::filesystem::remove_all(dir);
}

struct Criterion {
  const char* name;
  void (*run)(Checker&);
};

const Criterion kCriteria[] = {
    {"oracle equivalence (counting)", counting},
    {"oracle equivalence (optimization)", optimization},
    {"ordering invariance", ordering_invariance},
    {"named-instance treewidth", treewidth},
    {"decomposition correctness", decomposition},
    {"message passing exact on trees", tree_message_passing},
    {"calibration and reparametrization", calibration},
    {"Bethe identity on trees", bethe},
    {"mean field", mean_field},
    {"coupled HMM", coupled_hmm},
    {"CLI determinism and round trip", cli_round_trip},
};

}  // namespace

int main(int argc, char** argv) {
  const int count = static_cast<int>(std::size(kCriteria));
  int first = 1, last = count;
  if (argc > 1) first = last = std::atoi(argv[1]);
  if (first < 1 || last > count) {
    std::fprintf(stderr, "usage: %s [1-%d]\n", argv[0], count);
    return 2;
  }
  int failed = 0;
  for (int k = first; k <= last; ++k) {
    Checker c;
    const auto t0 = Clock::now();
    try {
      kCriteria[k - 1].run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    std::printf("criterion %2d %-36s %s  (%s, %.2f s)\n", k, kCriteria[k - 1].name, c.passed() ? "PASS" : "FAIL",
                c.summary().c_str(), seconds_since(t0));
    if (!c.passed()) ++failed;
  }
  return failed == 0 ? 0 : 1;
}

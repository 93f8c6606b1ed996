#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gm/chmm.hpp"
#include "gm/core.hpp"
#include "gm/treewidth.hpp"

namespace gm {

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view text);

/// Shortest text that parses back to the same double.
std::string format_exact(double v);
/// printf %.{digits}g
std::string format_sig(double v, int digits = 6);

/// UAI model text: preamble (MARKOV or BAYES), n, cardinalities, factor count,
/// scope lines, then one table per factor (count, values). Tokens may be split
/// across lines arbitrarily. Scopes are stored ascending.
GraphicalModel parse_model(std::string_view text);
/// Canonical form: one item per line group, shortest round-trip values.
std::string write_model(const GraphicalModel& m);

/// "count var value var value ..."; a repeated variable keeps its last value and
/// appends a notice to warnings. With a model, indices are range-checked.
Evidence parse_evidence(std::string_view text, const GraphicalModel* m = nullptr,
                        std::vector<std::string>* warnings = nullptr);
std::string write_evidence(const Evidence& e);

/// "count id id ...", eliminated first to last.
EliminationOrdering parse_ordering(std::string_view text);
std::string write_ordering(const EliminationOrdering& pi);

/// First line: cluster count C. Next C lines: cluster members. Remaining lines:
/// one tree edge "a b" each.
TreeDecomposition parse_decomposition(std::string_view text);
std::string write_decomposition(const TreeDecomposition& td);

/// CHMM
/// I T K M
/// initial <K values>
/// transition <K*K values, row = previous state>
/// emission <K*M values>
/// coupling pairwise <K*K values> | coupling full <K^I values>
/// Each section's values are preceded by their count.
CHMMParams parse_chmm_params(std::string_view text);
std::string write_chmm_params(const CHMMParams& p);

/// One row per time step, one column per chain.
Observations parse_observations(std::string_view text);
std::string write_observations(const Observations& obs);

/// iteration,objective,seconds
std::string write_em_trace_csv(const EMTrace& trace);

}  // namespace gm

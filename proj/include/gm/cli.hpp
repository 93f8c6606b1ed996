#pragma once

#include <ostream>
#include <span>
#include <string>

namespace gm {

/// gm <task> <model>... [flags]; returns the process exit code.
/// 0 ok, 1 usage, 2 parse/domain/evidence, 3 capacity, 4 other computation error, 5 I/O.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace gm

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cate_forge {

/// Exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitNumerical = 3;

/// Runs the `cate_forge` command line (subcommands simulate, weights,
/// aggregate, evaluate). args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cate_forge

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace biounet::cli {

enum ExitCode : int { kSuccess = 0, kIoFailure = 2, kConfigFailure = 3, kDivergence = 4 };

/// Runs one command line (argv[0] is the program name). Normal output goes
/// to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace biounet::cli

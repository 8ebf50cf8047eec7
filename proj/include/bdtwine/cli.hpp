#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bdtwine {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInvariant = 1,
  kExitSpec = 2,
  kExitIo = 3,
};

/// Runs the command line `args` (without the program name). Results go to
/// `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bdtwine

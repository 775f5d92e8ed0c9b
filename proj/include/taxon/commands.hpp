#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace taxon {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

/// Runs one `taxon` command line (args excludes the program name) and
/// returns its exit code. Output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace taxon

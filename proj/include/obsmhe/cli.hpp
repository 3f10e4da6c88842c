#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace obsmhe {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,           // usage, configuration or I/O error
    kExitCertification = 2,   // no admissible horizon below the scan cap
    kExitFalsified = 3,       // an assumption or guaranteed inequality failed
};

/// Runs the tool on `args` (without the program name), writing results to
/// `out` and diagnostics to `err`. Returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace obsmhe

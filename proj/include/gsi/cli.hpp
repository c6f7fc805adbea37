#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gsi::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  /// Budget exhausted, too many missing candidates, or nothing to work on.
  kExitShortfall = 2,
  /// Bad config, arguments or missing inputs.
  kExitConfig = 3,
  /// Port in use or manifest locked by another review session.
  kExitService = 4,
};

/// Runs `gsi-forge` with `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Asks a running serve-review to shut down gracefully (as SIGINT does).
void request_shutdown();

}  // namespace gsi::cli

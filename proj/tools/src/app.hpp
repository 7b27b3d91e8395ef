#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace voxdiff::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,  // bad arguments or configuration
  kNumerical = 3,
  kCheckpoint = 4,
};

/// Parses `args` (without the program name) and runs one subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace voxdiff::cli

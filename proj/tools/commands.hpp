#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace safe_fbsde::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kConfigError = 2,
  kSafetyViolation = 3,
  kInfeasible = 4,
  kNumericalFailure = 5,
};

/// Parses argv and runs one subcommand. Messages go to `out` / `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace safe_fbsde::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace heteroqa::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kValidation = 2,
  kNumerical = 3,
};

/// Runs one command; args exclude the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace heteroqa::cli

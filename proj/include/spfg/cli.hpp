#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace spfg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsageError = 2;

// Runs one subcommand. `args` excludes the program name. Usage problems go
// to `err` with exit code 2; data and backend failures give exit code 1.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spfg::cli

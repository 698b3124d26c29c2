#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace scan {

/// Exit codes: 0 success, 1 runtime or I/O failure, 2 config or usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (args[0] is the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads SCAN_NUM_THREADS (default 1) and applies it to OpenMP. Throws
/// ConfigError for anything but a positive integer.
int configure_threads();

}  // namespace scan

#pragma once

// The drustat command line: estimate, simulate, lowerbound and plm.

#include <iosfwd>

namespace drustat {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitComputation = 3;

/// Parses argv and runs one subcommand. Reports go to `out` (or to --out),
/// diagnostics to `err`. Returns 0 on success, 2 for invalid input or
/// arguments, 3 when a computation fails.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace drustat

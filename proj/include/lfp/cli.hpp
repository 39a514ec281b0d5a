#pragma once

#include <iosfwd>

namespace lfp {

/// Full command-line entry point. Prints a one-line JSON summary of each
/// successful command to `out`; diagnostics go to `err`. Exit codes:
/// 0 success, 1 validation/runtime failure, 2 usage.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lfp

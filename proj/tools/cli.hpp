#pragma once

#include <iosfwd>

namespace gradpath::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kFailure = 3 };

/// Parses argv (argv[0] is the program name) and runs one subcommand.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gradpath::cli

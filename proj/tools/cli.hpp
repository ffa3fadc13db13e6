#pragma once

#include <iosfwd>

namespace toptrap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitBadInput = 2;
inline constexpr int kExitNumerical = 3;

/// Parses the command line and runs one subcommand. Never throws.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace toptrap::cli

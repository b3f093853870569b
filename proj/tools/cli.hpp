#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cpdgn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `cpdgn` tool. args[0] is the program name.
/// Results go to `out` (or the --output file), diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cpdgn::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mirag {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `mirag` tool. `args` excludes the program name.
/// Subcommands: build-index, run, eval, downsample.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mirag

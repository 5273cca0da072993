#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fused_beam::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs `fused_beam <subcommand> ...`; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fused_beam::cli

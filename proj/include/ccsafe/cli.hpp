#pragma once

#include <string>
#include <vector>

namespace ccsafe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitInternal = 2;

/// Runs one subcommand (table, decide, gradcheck, navsim, prodplan, scaling, bias).
/// `args` excludes the program name. Settings merge defaults, then the --config file, then flags.
int dispatch(const std::vector<std::string>& args);

}  // namespace ccsafe::cli

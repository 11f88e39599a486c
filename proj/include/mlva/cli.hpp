// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace mlva {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitDataOrConfig = 2;
inline constexpr int kExitNumerical = 3;

/// Subcommands: gen-data, train, eval, heatmap, gradcheck.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mlva

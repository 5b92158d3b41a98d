// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cli.hpp
 * @brief  Command-line entry point: ingest-check, synth-gen, train, eval,
 *         gradcheck and export-detections.
 */
#pragma once

#include <iosfwd>

namespace tfn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Parses argv and dispatches a subcommand. Returns 0 on success, 1 on a
/// usage error and 2 on a runtime error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tfn::cli

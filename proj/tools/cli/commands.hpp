// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cli/run_config.hpp"

namespace pic::cli {

/// Runs config.command. Returns 0 on success and 1 on runtime failure after
/// printing a diagnostic to stderr.
int run(const RunConfig& config);

/// parse_and_validate followed by run.
int main_entry(int argc, const char* const* argv);

}  // namespace pic::cli

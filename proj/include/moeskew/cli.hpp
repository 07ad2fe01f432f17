// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace moeskew::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,     // bad flags or an invalid configuration
  kData = 2,      // malformed input, failed validation, or I/O failure
  kInternal = 3,  // anything else
};

/// Runs one subcommand. args excludes the program name. Diagnostics go to
/// err; CSV written to "-" and one-line results go to out.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace moeskew::cli

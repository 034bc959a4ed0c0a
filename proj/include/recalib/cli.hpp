#pragma once

#include <ostream>

namespace recalib {

enum ExitCode { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2 };

/// Parses and runs one subcommand (count, train, eval, ablate, trace, zero,
/// time). Returns the process exit code. Output files are staged and only
/// renamed into place once every one of them has been written.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace recalib

#pragma once

#include <iosfwd>

namespace mobmine {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2, kExitPrivacy = 3 };

// Entry point of the mobmine tool. Never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mobmine

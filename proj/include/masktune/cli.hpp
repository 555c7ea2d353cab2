#pragma once

#include <ostream>
#include <span>
#include <string>

namespace masktune {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point behind the `masktune` binary. `args` excludes the program
/// name. Returns the process exit code.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

/// Version string recorded in run manifests.
const char* version_string();

}  // namespace masktune

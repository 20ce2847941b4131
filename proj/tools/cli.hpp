#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace capfuse::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitData = 3,
    kExitProvider = 4,
    kExitInternal = 5,
};

/// Runs one invocation. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace capfuse::cli

#pragma once

#include <string>
#include <vector>

namespace kpx::cli {

/// Entry point behind the kpx binary. `args` excludes the program name.
/// Returns 0 on success, 2 on usage errors, 1 on runtime errors.
int run(const std::vector<std::string>& args);

}  // namespace kpx::cli

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hiertax {

// Full command-line entry point, callable in-process for tests. `args`
// excludes the program name. Returns the process exit status: 0 success,
// 1 usage error, 2 data/contract error, 3 numerical divergence.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace hiertax

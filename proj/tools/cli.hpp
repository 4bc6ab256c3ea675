#pragma once

#include <string>
#include <vector>

namespace uicl::cli {

// Runs the command line and returns the process exit code: 0 success,
// 2 config error, 3 data error, 4 numerical failure.
int run(const std::vector<std::string>& args);

}  // namespace uicl::cli

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace perfkit::cli {

/// Exit codes: 0 success, 1 usage or validation error, 2 I/O or format error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace perfkit::cli

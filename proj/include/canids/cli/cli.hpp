#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace canids::cli {

// Entry point behind the `canids` executable. Returns the process exit status:
// 0 on success, 1 with a one-line diagnostic (and usage for bad flags).
// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace canids::cli

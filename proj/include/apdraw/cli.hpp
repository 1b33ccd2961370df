#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace apdraw::cli {

/// Runs one subcommand. Returns 0 on success, 1 for usage / validation / config
/// errors and 2 for runtime failures.
int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);
/// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace apdraw::cli

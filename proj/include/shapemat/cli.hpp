#pragma once

#include <string>
#include <vector>

namespace shapemat {

/// Runs one pipeline subcommand. Returns 0 on success, 1 on a module error
/// and 2 on a usage error. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace shapemat

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace arbcost::cli {

/// Runs one command line (args[0] is the program name). Results go to `out`
/// unless --out names a file; diagnostics go to `err`. Returns the exit
/// status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace arbcost::cli

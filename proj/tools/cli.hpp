#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace micpq::cli {

/// Runs one command line (without the program name). Exit codes: 0 success,
/// 1 runtime or data error, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace micpq::cli

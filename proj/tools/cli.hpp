#pragma once

// The `vismem` command line. Every subcommand writes a JSON report
//   { tool, version, command, run_config, timestamp, result }
// (or a CSV table with --csv) and maps failures to exit codes:
// 0 ok, 2 usage, 3 format, 4 invariant, 5 I/O.

#include <iosfwd>
#include <string>
#include <vector>

namespace vismem::cli {

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vismem::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nowcast::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kDataOrConfig = 3,
  kNumeric = 4,
};

/// Runs the tool on `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

/// Reads a key=value config file into "--key=value" arguments. Blank lines
/// and lines starting with '#' or ';' are skipped; "[section]" headers are
/// ignored.
std::vector<std::string> config_arguments(const std::string& path);

}  // namespace nowcast::cli

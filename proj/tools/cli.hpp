#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stereolidar::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Runs one command line (args[0] is the program name) and returns the exit
/// code. Progress goes to `out`, diagnostics and usage text to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stereolidar::cli

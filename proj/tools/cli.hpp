#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace medic::cli {

/// Exit codes: success, configuration error, data error, numeric abort.
enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kNumericError = 3 };

/// Resolved `key = value` settings.
using Values = std::map<std::string, std::string>;

/// Parses `key = value` lines; `#` starts a comment. Throws ConfigError.
Values parse_config_text(const std::string& text);
std::string format_config(const Values& values);

/// Runs one command line (argv[0] is the program name) and returns its exit
/// code. Diagnostics go to `err`, everything else to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace medic::cli

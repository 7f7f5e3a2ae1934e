#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace edgecap::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitInternalError = 2;

// Parses and runs one command line (argv[0] is the program name). Data goes
// to `out`, diagnostics and progress to `err`.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

// Every subcommand with the long flags its parser accepts.
std::map<std::string, std::vector<std::string>> subcommand_flags();

}  // namespace edgecap::cli

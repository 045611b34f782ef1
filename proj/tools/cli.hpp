#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmnet::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_usage = 2,
    exit_data = 3,
    exit_numeric = 4,
};

// Runs one command line (without the program name). Errors are reported on
// `err` and mapped to an exit code; nothing is thrown.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

} // namespace mmnet::cli

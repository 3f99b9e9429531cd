#pragma once

#include <ostream>
#include <span>
#include <string>

namespace afm::cli {

// Exit codes: 0 success, 1 unexpected failure, 2 validation error, 3
// numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

// Runs one command line (without the program name). Summaries go to `out`,
// error messages to `err`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

int main_entry(int argc, char** argv);

}  // namespace afm::cli

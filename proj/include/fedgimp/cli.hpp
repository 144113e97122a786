#pragma once

// Command-line front end: make-data, train, reconstruct, evaluate.
//
// Every command takes an optional JSON config (--config); flags override
// config values, and the fully resolved config is written next to the
// outputs as <command>.resolved.json.
//
// Exit codes: 0 success, 2 configuration/input errors, 3 runtime errors.
// The error name (e.g. "not-found") starts the message on stderr.

#include <iosfwd>
#include <string>
#include <vector>

#include "fedgimp/error.hpp"

namespace fedgimp::cli {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int exit_code(ErrorCode code);

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedgimp::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cxit {

// Exit codes returned by run().
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,     // invalid input, failed gradient check, anything else
  kExitBadConfig = 2,   // unknown flag, unknown or ill-typed config key
  kExitMissingFile = 3, // unreadable or unwritable file
  kExitDiverged = 4,    // non-finite loss or gradient during training
};

// Entry point of the `cxit` tool. args excludes the program name. Errors are
// reported on `err` as one JSON object per line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cxit

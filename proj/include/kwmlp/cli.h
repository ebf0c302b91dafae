#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kwmlp::cli {

enum ExitCode : int {
  kOk = 0,
  kBadFlags = 1,
  kBadWeights = 2,
  kBadAudio = 3,
  kBadManifest = 4,
  kShapeMismatch = 5,
  kIoFailure = 6,
};

// Entry point of the `kwmlp` tool. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kwmlp::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace seqlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
// Numeric divergence or an internal contract failure.
inline constexpr int kExitFailure = 3;

// Runs one `seqlab` invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace seqlab::cli

#pragma once

#include <iosfwd>

namespace optistack::cli {

// Exit codes: 0 success, 1 usage error, 2 runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace optistack::cli

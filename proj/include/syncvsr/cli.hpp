#pragma once

#include <iosfwd>

namespace syncvsr {

/// Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace syncvsr

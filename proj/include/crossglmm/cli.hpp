#pragma once

#include <iosfwd>

namespace crossglmm {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
/// 3 a verification check failed.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crossglmm

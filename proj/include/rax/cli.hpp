#pragma once

#include <iosfwd>

namespace rax {

// Entry point of the raxcrash command line. Returns the process exit code:
// 0 success, 1 usage/config error, 2 data error, 3 backend error. Errors are
// reported as one JSON object on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rax

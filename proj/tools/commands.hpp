#pragma once

#include <iosfwd>

namespace hat {

// Entry point of the `hat` tool. Returns the process exit status: 0 on
// success, 1 when a check run by the command fails, 2 on usage, config or
// data errors. Progress goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hat

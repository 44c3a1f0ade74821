#pragma once

#include <ostream>

namespace pdnet {

// Runs the built-in verification suites; returns 0 on success, 1 on the
// first failing suite (named on the stream).
int run_selfcheck(std::ostream& out);

}  // namespace pdnet

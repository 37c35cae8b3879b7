#pragma once

#include <iosfwd>

namespace parscale::cli {

// Entry point behind the `parscale` binary. Exit codes: 0 success,
// 2 usage or input error, 3 contract or identifiability error, 1 anything
// else.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace parscale::cli

#pragma once

#include <string>
#include <vector>

namespace dmsr::cli {

// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace dmsr::cli

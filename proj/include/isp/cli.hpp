#pragma once

namespace isp::cli {

// Full command surface; returns the process exit code
// (0 ok, 1 config/runtime error, 2 usage error).
int dispatch(int argc, const char* const* argv);

}  // namespace isp::cli

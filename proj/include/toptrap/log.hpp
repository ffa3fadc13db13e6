#pragma once

#include <string_view>

namespace toptrap::log {

// Verbosity comes from the TOPTRAP_LOG environment variable
// (trace, debug, info, warn, error, off). Default: warn.
void warn(std::string_view msg);
void info(std::string_view msg);
void debug(std::string_view msg);

} // namespace toptrap::log

#include "toptrap/log.hpp"

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace toptrap::log {
namespace {

spdlog::logger &logger() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto lg = spdlog::stderr_color_mt("toptrap");
        lg->set_pattern("[%l] %v");
        auto level = spdlog::level::warn;
        if (const char *env = std::getenv("TOPTRAP_LOG")) {
            level = spdlog::level::from_str(env);
        }
        lg->set_level(level);
        return lg;
    }();
    return *instance;
}

} // namespace

void warn(std::string_view msg) { logger().warn("{}", msg); }
void info(std::string_view msg) { logger().info("{}", msg); }
void debug(std::string_view msg) { logger().debug("{}", msg); }

} // namespace toptrap::log

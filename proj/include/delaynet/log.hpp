#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace delaynet::log {

enum class Level { error = 0, info = 1, debug = 2 };

inline Level threshold() {
    static Level lvl = [] {
        const char* env = std::getenv("DELAYNET_LOG");
        if (env == nullptr) return Level::info;
        if (std::strcmp(env, "debug") == 0) return Level::debug;
        if (std::strcmp(env, "error") == 0) return Level::error;
        return Level::info;
    }();
    return lvl;
}

template <typename... Args>
void emit(Level lvl, const char* tag, const char* fmt, Args... args) {
    if (lvl > threshold()) return;
    std::fprintf(stderr, "[delaynet %s] ", tag);
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
}

template <typename... Args>
void error(const char* fmt, Args... args) { emit(Level::error, "error", fmt, args...); }
template <typename... Args>
void info(const char* fmt, Args... args) { emit(Level::info, "info", fmt, args...); }
template <typename... Args>
void debug(const char* fmt, Args... args) { emit(Level::debug, "debug", fmt, args...); }

} // namespace delaynet::log

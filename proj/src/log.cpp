// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace wfc {

namespace {

std::atomic<LogLevel> g_level{LogLevel::warning};
std::mutex g_mu;

const char* level_name(LogLevel l) {
  switch (l) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warning: return "warning";
    case LogLevel::error: return "error";
    case LogLevel::silent: break;
  }
  return "";
}

}  // namespace

void set_log_level(LogLevel level) { g_level.store(level); }
LogLevel log_level() { return g_level.load(); }

void log(LogLevel level, std::string_view message) {
  if (level < g_level.load() || level == LogLevel::silent) return;
  std::lock_guard lock(g_mu);
  std::cerr << "wfc " << level_name(level) << ": " << message << '\n';
}

}  // namespace wfc

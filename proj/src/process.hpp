#pragma once

#include <string>

namespace visunpack::detail {

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  bool signaled = false;
};

/// Runs `command` through /bin/sh in its own process group. On timeout the
/// whole group is killed.
ProcessResult run_shell(const std::string& command, double timeout_seconds);

/// Single-quotes `text` for /bin/sh.
std::string shell_quote(const std::string& text);

}  // namespace visunpack::detail

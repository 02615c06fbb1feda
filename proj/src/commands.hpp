#pragma once

#include <string>

#include "config.hpp"

namespace ct {

// Dispatches one orchestration command (gen, train, eval, attack, sweep,
// render, inspect) with its key=value configuration. A "config" key names a
// file whose entries are loaded first; the remaining keys override it.
// Throws ConfigError/InvalidArgumentError for bad requests and the other
// error types for failures while running.
void run_command(const std::string& name, const ConfigMap& cfg);

}  // namespace ct

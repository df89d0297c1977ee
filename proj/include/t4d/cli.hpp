#pragma once

// Command-line front end. Exit codes: 0 success, 1 invalid input or a failed
// check, 2 file I/O failure. Diagnostics go to standard error.

#include "t4d/config.hpp"
#include "t4d/train.hpp"

namespace t4d {

// Training options from the [train], [model] and [render] sections.
TrainConfig train_config_from(const Config& c);
Config to_config(const TrainConfig& cfg);

int run_cli(int argc, char** argv);

} // namespace t4d

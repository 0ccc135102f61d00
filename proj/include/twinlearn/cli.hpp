#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twinlearn/pipelines.hpp"

namespace twinlearn {

struct RunConfig {
  std::string command;       // generate | train | predict | p1-pointwise |
                             // p1-norm | p2-attribute | report
  std::string config_path;   // empty = documented defaults
  std::string out_dir;
  std::optional<std::uint64_t> seed;  // overrides the config's master seed
  std::optional<Learner> learner;
};

// Runs the selected pipeline; all outputs (plus manifest.json) land under
// out_dir. Returns 0 on success, 2 on config errors, 3 on numerical
// failures, 4 on I/O errors.
int dispatch(const RunConfig& run);

// Full command-line front end (args excludes argv[0]).
int run_cli(const std::vector<std::string>& args);

}  // namespace twinlearn

#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "twinlearn/pipelines.hpp"

namespace twinlearn {

// Parse the flat key/value experiment config (INI-style sections, '#'
// comments). Every key has a documented default, so an empty file yields the
// default spec; unknown sections or keys are rejected with the offending
// line number.
ExperimentSpec parse_config(const std::filesystem::path& path);

// Parse from an already-loaded string (the path only labels errors).
ExperimentSpec parse_config_text(const std::string& text, const std::string& label);

// Fully-resolved spec as JSON, embedded in run manifests so a run can be
// reproduced without the original config file.
nlohmann::json spec_to_json(const ExperimentSpec& spec);
ExperimentSpec spec_from_json(const nlohmann::json& j);

std::string learner_name(Learner learner);
Learner learner_from_name(const std::string& name);

}  // namespace twinlearn

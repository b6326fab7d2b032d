#ifndef REFBCM_SCENARIO_IO_HPP
#define REFBCM_SCENARIO_IO_HPP

#include <filesystem>
#include <string>
#include <string_view>

#include "refbcm/sim.hpp"

namespace refbcm {

/// Reads a scenario from TOML. Keys left out keep the values of the
/// built-in design named by `hypothesis` and `ice_level`.
ScenarioConfig parse_scenario(std::string_view toml_text, std::string_view source = "scenario");
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Fully resolved scenario as TOML; parse_scenario of the result gives back
/// the same configuration.
std::string scenario_to_toml(const ScenarioConfig& scenario);

}  // namespace refbcm

#endif  // REFBCM_SCENARIO_IO_HPP

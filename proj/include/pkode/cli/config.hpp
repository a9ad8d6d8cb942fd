#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pkode/latentode/train.hpp"
#include "pkode/mapbe/mapbe.hpp"
#include "pkode/pksim/population.hpp"

namespace pkode::cli {

/// Every tunable of the pipeline with its default. Subcommands read the
/// fields they need.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t n = 1000;  // simulate
  pksim::SimulationConfig simulation;
  latentode::ModelConfig model;
  latentode::TrainConfig train;
  int posterior_samples = 0;  // 0: predict from the posterior mean
  mapbe::EstimatorConfig estimator;
  int runs = 10;
  std::size_t n_train = 200;
  std::size_t n_test = 800;
  std::vector<std::size_t> sizes = {25, 50, 100, 141};
  int repeats = 10;

  void validate() const;
};

/// Sorted list of accepted keys.
std::vector<std::string> config_keys();

/// Closest accepted key by edit distance.
std::string nearest_key(std::string_view key);

std::size_t edit_distance(std::string_view a, std::string_view b);

/// Sets one key from its text form. Throws ParseError for an unknown key
/// (naming the nearest valid key) or a malformed value.
void set_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_value(const RunConfig& cfg, std::string_view key);

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored,
/// a key may appear once. Unset keys keep their defaults.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
/// Applies `text` on top of `base`.
void apply_config(RunConfig& base, std::string_view text);

/// Every key with its resolved value, one `key = value` line each, sorted.
/// parse_config(emit_config(c)) reproduces c exactly.
std::string emit_config(const RunConfig& cfg);

nlohmann::json to_json(const RunConfig& cfg);

}  // namespace pkode::cli

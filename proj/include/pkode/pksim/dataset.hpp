#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "pkode/pksim/population.hpp"

namespace pkode::pksim {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr const char* kGeneratorVersion = "pkode 0.1.0";

/// A simulated population plus the configuration that produced it.
///
/// On disk this is JSON Lines: line 1 is the header object
///   {"format": "pkode-dataset", "schema_version", "generator", "n",
///    "clipped_observations", "config": {...SimulationConfig...}}
/// and each following line is one PatientRecord object with keys
///   id, covariates{cyp,st,dose,hct}, truth{ktr,cl,vc,q,vp,vmax,km,eta[5]},
///   dense_curve{times[],conc[]}, true_auc, rich_obs{times[],values[]},
///   sparse_obs{times[],values[]}, clipped.
/// Reals are written in shortest round-trip form, so reading back is lossless.
struct Dataset {
  SimulationConfig config;
  std::vector<PatientRecord> records;
  nlohmann::json provenance = nlohmann::json::object();  // free-form, e.g. the producing command
};

void write_dataset(std::ostream& out, const Dataset& ds);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::filesystem::path& path);

nlohmann::json to_json(const SimulationConfig& cfg);
SimulationConfig simulation_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PopulationParams& pop);
PopulationParams population_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PatientRecord& rec);
PatientRecord record_from_json(const nlohmann::json& j);

}  // namespace pkode::pksim

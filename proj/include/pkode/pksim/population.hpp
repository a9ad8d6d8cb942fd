#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pkode/pksim/model.hpp"

namespace pkode::pksim {

struct ObservationSet {
  std::vector<double> times;   // h
  std::vector<double> values;  // ng/mL

  std::size_t size() const noexcept { return times.size(); }
  bool empty() const noexcept { return times.empty(); }
  friend bool operator==(const ObservationSet&, const ObservationSet&) = default;
};

struct PatientRecord {
  std::uint64_t id = 0;
  PatientCovariates covariates;
  IndividualParams truth;
  std::vector<double> dense_times;
  std::vector<double> dense_conc;
  double true_auc = 0.0;
  ObservationSet rich;
  ObservationSet sparse;
  std::size_t clipped = 0;  // noisy values raised to 0
};

/// Sampling distributions of the patient covariates.
struct CovariateDistribution {
  double p_cyp = 0.2;
  double p_st = 0.5;
  double dose_min = 1.0;
  double dose_max = 12.0;
  double dose_step = 0.5;
  double hct_mean = 35.0;
  double hct_sd = 5.0;
  double hct_min = 20.0;
  double hct_max = 55.0;
  std::optional<double> fixed_hct;  // overrides the draw (draw still consumed)

  void validate() const;
};

std::vector<double> default_rich_times();
std::vector<double> default_sparse_times();

struct SimulationConfig {
  Scenario scenario = Scenario::correct;
  std::uint64_t seed = 0;
  PopulationParams pop;
  CovariateDistribution covariates;
  DosingProtocol dosing;
  numcore::SolverConfig solver = default_simulation_solver();
  std::vector<double> rich_times = default_rich_times();
  std::vector<double> sparse_times = default_sparse_times();
  bool residual_error = true;

  void validate() const;
};

/// Independent generator for (seed, patient index, stream). Results never
/// depend on how patients are scheduled across threads.
std::mt19937_64 patient_stream(std::uint64_t seed, std::uint64_t index, std::uint32_t stream);

inline constexpr std::uint32_t kStreamCovariates = 0;
inline constexpr std::uint32_t kStreamResidual = 1;

PatientCovariates sample_covariates(const CovariateDistribution& dist, std::mt19937_64& rng);
Eta sample_eta(const PopulationParams& pop, std::mt19937_64& rng);

/// y = C (1 + e_prop) + e_add, negative results clipped to 0. `clipped`, if
/// given, is incremented once per clipped value.
std::vector<double> add_residual_error(std::span<const double> conc, const PopulationParams& pop,
                                       std::mt19937_64& rng, std::size_t* clipped = nullptr);

PatientRecord simulate_patient(std::uint64_t index, const SimulationConfig& cfg);

/// OpenMP-parallel over patients.
std::vector<PatientRecord> sample_population(std::size_t n, const SimulationConfig& cfg);
/// Single-threaded reference; must produce identical records.
std::vector<PatientRecord> sample_population_serial(std::size_t n, const SimulationConfig& cfg);

std::size_t count_clipped(std::span<const PatientRecord> records);

}  // namespace pkode::pksim

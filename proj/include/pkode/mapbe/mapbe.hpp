#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "pkode/mapbe/nelder_mead.hpp"
#include "pkode/pksim/population.hpp"

namespace pkode::mapbe {

/// Population prior used by the estimator: fixed effects, diagonal Omega
/// (variances) and the combined residual-error SDs. The dosing protocol must
/// match the one the observations were generated under.
struct PriorSpec {
  pksim::PopulationParams pop;
  pksim::Eta omega_var{};
  double sigma_prop = 0.0;
  double sigma_add = 0.0;
  pksim::DosingProtocol dosing;

  static PriorSpec from_population(const pksim::PopulationParams& pop, const pksim::DosingProtocol& dosing);
  void validate() const;
};

/// {"population": {...}, "dosing": {...}, "omega_var": [5], "sigma_prop", "sigma_add"}.
/// When omega_var or the sigmas are absent they follow the population block.
nlohmann::json to_json(const PriorSpec& prior);
PriorSpec prior_from_json(const nlohmann::json& j);

struct EstimatorConfig {
  int starts = 5;               // eta = 0 plus (starts - 1) draws from the prior
  double tol_diameter = 1e-6;
  std::size_t max_evaluations = 5000;  // per start
  double initial_step = 0.5;    // simplex edge, in prior SDs
  std::uint64_t seed = 0;

  void validate() const;
};

struct EtaEstimate {
  pksim::Eta eta_hat{};
  double objective_value = 0.0;
  bool converged = false;
  int n_restarts_used = 0;
  std::size_t evaluations = 0;
};

/// sum_j (y_j - m_j)^2 / g_j^2 + eta' Omega^-1 eta, with m the linear-model
/// steady-state prediction and g_j^2 = sigma_add^2 + sigma_prop^2 m_j^2.
double map_objective(const pksim::Eta& eta, const pksim::ObservationSet& obs, const pksim::PatientCovariates& cov,
                     const PriorSpec& prior);

/// Multistart Nelder-Mead. `patient_key` selects the random stream for the
/// prior-draw starts so results do not depend on evaluation order.
EtaEstimate estimate_eta(const pksim::ObservationSet& obs, const pksim::PatientCovariates& cov,
                         const PriorSpec& prior, const EstimatorConfig& cfg, std::uint64_t patient_key = 0);

/// AUC of the linear model at the fitted parameters, simulated on the same
/// grid and protocol as the ground truth. Throws if the estimate did not
/// converge.
double predict_auc_mapbe(const EtaEstimate& est, const pksim::PatientCovariates& cov, const PriorSpec& prior,
                         const numcore::SolverConfig& solver = pksim::default_simulation_solver());
double predict_auc_mapbe(const pksim::Eta& eta, const pksim::PatientCovariates& cov, const PriorSpec& prior,
                         const numcore::SolverConfig& solver = pksim::default_simulation_solver());

struct PatientFit {
  std::uint64_t id = 0;
  EtaEstimate estimate;
  double auc = 0.0;  // NaN when not converged
};

/// Fits every record from its sparse observations. OpenMP-parallel over
/// patients; results are in input order.
std::vector<PatientFit> fit_population(std::span<const pksim::PatientRecord> records, const PriorSpec& prior,
                                       const EstimatorConfig& cfg);
std::vector<PatientFit> fit_population_serial(std::span<const pksim::PatientRecord> records,
                                              const PriorSpec& prior, const EstimatorConfig& cfg);

PatientFit fit_patient(const pksim::PatientRecord& rec, const PriorSpec& prior, const EstimatorConfig& cfg);

}  // namespace pkode::mapbe

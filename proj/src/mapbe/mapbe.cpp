#include "pkode/mapbe/mapbe.hpp"

#include <cmath>
#include <exception>
#include <limits>

#include "pkode/mapbe/linear_predictor.hpp"
#include "pkode/numcore/errors.hpp"
#include "pkode/pksim/dataset.hpp"

namespace pkode::mapbe {

PriorSpec PriorSpec::from_population(const pksim::PopulationParams& pop, const pksim::DosingProtocol& dosing) {
  PriorSpec p;
  p.pop = pop;
  for (std::size_t k = 0; k < pksim::kEtaSize; ++k) p.omega_var[k] = pop.omega[k] * pop.omega[k];
  p.sigma_prop = pop.sigma_prop;
  p.sigma_add = pop.sigma_add;
  p.dosing = dosing;
  return p;
}

void PriorSpec::validate() const {
  pop.validate();
  dosing.validate();
  for (double v : omega_var) require(v > 0.0, "PriorSpec: omega variances must be > 0");
  require(sigma_prop >= 0.0 && sigma_add >= 0.0 && sigma_prop + sigma_add > 0.0,
          "PriorSpec: residual SDs must be >= 0 and not both zero");
}

nlohmann::json to_json(const PriorSpec& prior) {
  return {{"population", pksim::to_json(prior.pop)},
          {"dosing",
           {{"loading_doses", prior.dosing.loading_doses},
            {"interval", prior.dosing.interval},
            {"grid_step", prior.dosing.grid_step}}},
          {"omega_var", prior.omega_var},
          {"sigma_prop", prior.sigma_prop},
          {"sigma_add", prior.sigma_add}};
}

PriorSpec prior_from_json(const nlohmann::json& j) {
  try {
    pksim::DosingProtocol dosing;
    if (j.contains("dosing")) {
      const auto& d = j.at("dosing");
      dosing.loading_doses = d.at("loading_doses").get<int>();
      dosing.interval = d.at("interval").get<double>();
      dosing.grid_step = d.at("grid_step").get<double>();
    }
    PriorSpec p = PriorSpec::from_population(pksim::population_from_json(j.at("population")), dosing);
    if (j.contains("omega_var")) p.omega_var = j.at("omega_var").get<pksim::Eta>();
    if (j.contains("sigma_prop")) p.sigma_prop = j.at("sigma_prop").get<double>();
    if (j.contains("sigma_add")) p.sigma_add = j.at("sigma_add").get<double>();
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("prior specification: ") + e.what());
  }
}

void EstimatorConfig::validate() const {
  require(starts >= 1, "EstimatorConfig: starts must be >= 1");
  require(tol_diameter > 0.0 && initial_step > 0.0, "EstimatorConfig: tolerances must be > 0");
  require(max_evaluations > pksim::kEtaSize, "EstimatorConfig: max_evaluations too small");
}

double map_objective(const pksim::Eta& eta, const pksim::ObservationSet& obs, const pksim::PatientCovariates& cov,
                     const PriorSpec& prior) {
  require(!obs.empty(), "map_objective: no observations");
  const auto params = pksim::individual_params(prior.pop, cov, eta, pksim::Scenario::correct);
  const auto pred = linear_steady_state_concentrations(params, cov.dose, prior.dosing, obs.times);
  double residual = 0.0;
  for (std::size_t j = 0; j < obs.size(); ++j) {
    const double g2 = prior.sigma_add * prior.sigma_add + prior.sigma_prop * prior.sigma_prop * pred[j] * pred[j];
    const double r = obs.values[j] - pred[j];
    residual += r * r / g2;
  }
  double penalty = 0.0;
  for (std::size_t k = 0; k < pksim::kEtaSize; ++k) penalty += eta[k] * eta[k] / prior.omega_var[k];
  return residual + penalty;
}

EtaEstimate estimate_eta(const pksim::ObservationSet& obs, const pksim::PatientCovariates& cov,
                         const PriorSpec& prior, const EstimatorConfig& cfg, std::uint64_t patient_key) {
  require(!obs.empty(), "estimate_eta: no observations");
  cfg.validate();
  constexpr Eigen::Index n = pksim::kEtaSize;
  Eigen::VectorXd sd(n);
  for (Eigen::Index k = 0; k < n; ++k) sd[k] = std::sqrt(prior.omega_var[static_cast<std::size_t>(k)]);

  auto objective = [&](const Eigen::VectorXd& x) {
    pksim::Eta eta{};
    for (Eigen::Index k = 0; k < n; ++k) eta[static_cast<std::size_t>(k)] = x[k];
    return map_objective(eta, obs, cov, prior);
  };
  NelderMeadOptions nm;
  nm.tol_diameter = cfg.tol_diameter;
  nm.max_evaluations = cfg.max_evaluations;

  auto rng = pksim::patient_stream(cfg.seed, patient_key, 2);
  std::normal_distribution<double> normal(0.0, 1.0);

  EtaEstimate best;
  best.objective_value = std::numeric_limits<double>::infinity();
  bool have_converged = false;
  for (int s = 0; s < cfg.starts; ++s) {
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
    if (s > 0) {
      for (Eigen::Index k = 0; k < n; ++k) x0[k] = sd[k] * normal(rng);
    }
    const NelderMeadResult r = nelder_mead(objective, x0, cfg.initial_step * sd, nm);
    best.evaluations += r.evaluations;
    ++best.n_restarts_used;
    // A converged run always beats an unconverged one.
    const bool better = (r.converged && !have_converged) ||
                        (r.converged == have_converged && r.value < best.objective_value);
    if (better) {
      for (Eigen::Index k = 0; k < n; ++k) best.eta_hat[static_cast<std::size_t>(k)] = r.x[k];
      best.objective_value = r.value;
      have_converged = have_converged || r.converged;
    }
  }
  best.converged = have_converged && std::isfinite(best.objective_value);
  return best;
}

double predict_auc_mapbe(const pksim::Eta& eta, const pksim::PatientCovariates& cov, const PriorSpec& prior,
                         const numcore::SolverConfig& solver) {
  const auto params = pksim::individual_params(prior.pop, cov, eta, pksim::Scenario::correct);
  return pksim::simulate_profile(params, cov, pksim::Scenario::correct, solver, prior.dosing).auc;
}

double predict_auc_mapbe(const EtaEstimate& est, const pksim::PatientCovariates& cov, const PriorSpec& prior,
                         const numcore::SolverConfig& solver) {
  if (!est.converged) throw std::runtime_error("predict_auc_mapbe: eta estimate did not converge");
  return predict_auc_mapbe(est.eta_hat, cov, prior, solver);
}

PatientFit fit_patient(const pksim::PatientRecord& rec, const PriorSpec& prior, const EstimatorConfig& cfg) {
  PatientFit fit;
  fit.id = rec.id;
  fit.estimate = estimate_eta(rec.sparse, rec.covariates, prior, cfg, rec.id);
  fit.auc = fit.estimate.converged ? predict_auc_mapbe(fit.estimate, rec.covariates, prior)
                                   : std::numeric_limits<double>::quiet_NaN();
  return fit;
}

std::vector<PatientFit> fit_population_serial(std::span<const pksim::PatientRecord> records,
                                              const PriorSpec& prior, const EstimatorConfig& cfg) {
  prior.validate();
  std::vector<PatientFit> out;
  out.reserve(records.size());
  for (const auto& rec : records) out.push_back(fit_patient(rec, prior, cfg));
  return out;
}

std::vector<PatientFit> fit_population(std::span<const pksim::PatientRecord> records, const PriorSpec& prior,
                                       const EstimatorConfig& cfg) {
  prior.validate();
  std::vector<PatientFit> out(records.size());
  std::exception_ptr failure;
  const auto count = static_cast<std::int64_t>(records.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = fit_patient(records[static_cast<std::size_t>(i)], prior, cfg);
    } catch (...) {
#pragma omp critical(pkode_fit_population)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace pkode::mapbe

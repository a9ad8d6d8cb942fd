#include "pkode/pksim/model.hpp"

#include <cmath>

#include "pkode/numcore/errors.hpp"
#include "pkode/numcore/quadrature.hpp"

namespace pkode::pksim {

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::correct: return "correct";
    case Scenario::unaccounted_covariate: return "unaccounted_covariate";
    case Scenario::michaelis_menten: return "michaelis_menten";
  }
  return "?";
}

Scenario parse_scenario(std::string_view text) {
  if (text == "1" || text == "correct") return Scenario::correct;
  if (text == "2" || text == "unaccounted_covariate") return Scenario::unaccounted_covariate;
  if (text == "3" || text == "michaelis_menten") return Scenario::michaelis_menten;
  throw ContractViolation("unknown scenario '" + std::string(text) +
                          "' (1|correct, 2|unaccounted_covariate, 3|michaelis_menten)");
}

int scenario_number(Scenario s) { return static_cast<int>(s) + 1; }

std::string to_string(CovariateReading r) {
  return r == CovariateReading::multiplicative ? "multiplicative" : "additive";
}

CovariateReading parse_covariate_reading(std::string_view text) {
  if (text == "multiplicative") return CovariateReading::multiplicative;
  if (text == "additive") return CovariateReading::additive;
  throw ContractViolation("unknown covariate reading '" + std::string(text) + "' (multiplicative, additive)");
}

void PopulationParams::validate() const {
  for (double v : {theta_ktr, theta_cl, theta_st_ktr, theta_cyp_cl, theta_vc, theta_st_vc, theta_q, theta_vp,
                   km, vmax}) {
    require(v > 0.0 && std::isfinite(v), "PopulationParams: structural constants must be positive");
  }
  require(std::isfinite(theta_hct), "PopulationParams: theta_hct must be finite");
  for (double w : omega) require(w >= 0.0, "PopulationParams: omega entries must be >= 0");
  require(sigma_prop >= 0.0 && sigma_add >= 0.0, "PopulationParams: residual SDs must be >= 0");
}

void PatientCovariates::validate() const {
  require(cyp == 0 || cyp == 1, "PatientCovariates: cyp must be 0 or 1");
  require(st == 0 || st == 1, "PatientCovariates: st must be 0 or 1");
  require(dose >= 0.0 && std::isfinite(dose), "PatientCovariates: dose must be >= 0");
  require(hct >= 20.0 && hct <= 55.0, "PatientCovariates: hct must lie in [20, 55]");
}

void DosingProtocol::validate() const {
  require(loading_doses >= 0, "DosingProtocol: loading_doses must be >= 0");
  require(interval > 0.0 && grid_step > 0.0 && grid_step <= interval, "DosingProtocol: bad interval/grid");
}

IndividualParams individual_params(const PopulationParams& pop, const PatientCovariates& cov, const Eta& eta,
                                   Scenario scenario) {
  for (double e : eta) require(std::isfinite(e), "individual_params: eta must be finite");
  auto effect = [&](double theta) {
    return pop.reading == CovariateReading::multiplicative ? std::log(theta) : theta;
  };
  const double st = cov.st;
  const double cyp = cov.cyp;

  double log_cl = std::log(pop.theta_cl) + effect(pop.theta_cyp_cl) * cyp;
  if (scenario == Scenario::unaccounted_covariate) log_cl += pop.theta_hct * std::log(cov.hct / 35.0);
  log_cl += eta[kEtaCl];

  IndividualParams p;
  p.eta = eta;
  p.ktr = std::exp(std::log(pop.theta_ktr) + effect(pop.theta_st_ktr) * st + eta[kEtaKtr]);
  p.cl = std::exp(log_cl);
  p.vc = std::exp(std::log(pop.theta_vc) + effect(pop.theta_st_vc) * st + eta[kEtaVc]);
  p.q = std::exp(std::log(pop.theta_q) + eta[kEtaQ]);
  p.vp = std::exp(std::log(pop.theta_vp) + eta[kEtaVp]);
  // Saturable elimination keeps the genotype and random effect of CL, scaled
  // so that Vmax/Km * 1000 equals CL at the population level.
  p.km = pop.km;
  p.vmax = pop.vmax * (p.cl / pop.theta_cl);
  return p;
}

void structural_rhs(const Vector& s, const IndividualParams& p, Scenario scenario, Vector& ds) {
  const double ktr = p.ktr;
  const double k12 = p.k12();
  const double k21 = p.k21();
  ds[0] = -ktr * s[0];
  ds[1] = ktr * (s[0] - s[1]);
  ds[2] = ktr * (s[1] - s[2]);
  ds[3] = ktr * (s[2] - s[3]);
  double elimination;
  if (scenario == Scenario::michaelis_menten) {
    const double cc = s[kCentral] / p.vc * 1000.0;
    elimination = p.vmax * cc / (p.km + cc);
  } else {
    elimination = p.k10() * s[kCentral];
  }
  ds[kCentral] = ktr * s[3] - elimination - k12 * s[kCentral] + k21 * s[kPeripheral];
  ds[kPeripheral] = k12 * s[kCentral] - k21 * s[kPeripheral];
}

numcore::SolverConfig default_simulation_solver() {
  numcore::SolverConfig cfg;
  cfg.method = numcore::SolverMethod::dopri5;
  cfg.rel_tol = 1e-9;
  cfg.abs_tol = 1e-12;
  cfg.max_steps = 200000;
  return cfg;
}

double SteadyStateCurve::concentration(double t) const { return traj_.at(t)[kCentral] / vc_ * 1000.0; }

SteadyStateCurve simulate_interval(const IndividualParams& params, const PatientCovariates& cov,
                                   Scenario scenario, const numcore::SolverConfig& solver,
                                   const DosingProtocol& dosing) {
  require(cov.dose >= 0.0, "simulate_interval: dose must be >= 0");
  dosing.validate();
  const numcore::OdeRhs rhs = [&](double, const Vector& y, Vector& dy) {
    structural_rhs(y, params, scenario, dy);
  };
  Vector state = Vector::Zero(kStateSize);
  for (int k = 0; k < dosing.loading_doses; ++k) {
    state[0] += cov.dose;
    state = numcore::ode_solve(rhs, state, 0.0, dosing.interval, solver).final_state();
  }
  state[0] += cov.dose;
  return SteadyStateCurve(numcore::ode_solve(rhs, state, 0.0, dosing.interval, solver), params.vc);
}

Profile profile_from_curve(const SteadyStateCurve& curve, const DosingProtocol& dosing) {
  Profile prof;
  prof.times = numcore::uniform_grid(0.0, dosing.interval, dosing.grid_step);
  prof.conc.reserve(prof.times.size());
  for (double t : prof.times) prof.conc.push_back(curve.concentration(t));
  prof.auc = numcore::trapezoid_auc(prof.times, prof.conc);
  return prof;
}

Profile simulate_profile(const IndividualParams& params, const PatientCovariates& cov, Scenario scenario,
                         const numcore::SolverConfig& solver, const DosingProtocol& dosing) {
  return profile_from_curve(simulate_interval(params, cov, scenario, solver, dosing), dosing);
}

}  // namespace pkode::pksim

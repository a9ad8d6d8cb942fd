#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "pkode/numcore/ode.hpp"

namespace pkode::pksim {

using numcore::Vector;

enum class Scenario { correct, unaccounted_covariate, michaelis_menten };

std::string to_string(Scenario s);
/// Accepts "1"/"2"/"3" as well as the tag names.
Scenario parse_scenario(std::string_view text);
int scenario_number(Scenario s);

/// How the formulation/genotype constants enter the log-parameter equations.
/// multiplicative: log(P) += log(theta_cov) * covariate (theta is a fold change)
/// additive:       log(P) += theta_cov * covariate
enum class CovariateReading { multiplicative, additive };

std::string to_string(CovariateReading r);
CovariateReading parse_covariate_reading(std::string_view text);

/// Index of each random effect inside an eta vector.
enum EtaIndex : std::size_t { kEtaKtr = 0, kEtaCl = 1, kEtaVc = 2, kEtaQ = 3, kEtaVp = 4 };
inline constexpr std::size_t kEtaSize = 5;
using Eta = std::array<double, kEtaSize>;

struct PopulationParams {
  double theta_ktr = 3.34;    // 1/h
  double theta_cl = 21.2;     // L/h
  double theta_st_ktr = 1.53;
  double theta_hct = -1.14;
  double theta_cyp_cl = 2.00;
  double theta_vc = 486.0;    // L
  double theta_st_vc = 0.29;
  double theta_q = 79.0;      // L/h
  double theta_vp = 271.0;    // L
  Eta omega = {0.24, 0.28, 0.31, 0.54, 0.60};  // SDs in EtaIndex order
  double sigma_prop = 0.113;
  double sigma_add = 0.71;    // ng/mL
  double km = 15.0;           // ng/mL, saturable elimination only
  double vmax = 0.318;        // mg/h, saturable elimination only
  CovariateReading reading = CovariateReading::multiplicative;

  void validate() const;
};

struct PatientCovariates {
  int cyp = 0;        // 1 = CYP3A5 expresser
  int st = 0;         // 1 = immediate-release formulation
  double dose = 0.0;  // mg per administration
  double hct = 35.0;  // %, used by the unaccounted-covariate scenario only

  void validate() const;
};

struct IndividualParams {
  double ktr = 0.0;   // 1/h
  double cl = 0.0;    // L/h
  double vc = 0.0;    // L
  double q = 0.0;     // L/h
  double vp = 0.0;    // L
  double vmax = 0.0;  // mg/h (michaelis_menten)
  double km = 0.0;    // ng/mL (michaelis_menten)
  Eta eta{};

  double k10() const { return cl / vc; }
  double k12() const { return q / vc; }
  double k21() const { return q / vp; }
};

IndividualParams individual_params(const PopulationParams& pop, const PatientCovariates& cov, const Eta& eta,
                                   Scenario scenario);

/// Compartment amounts (mg): transit 1..4, central, peripheral.
inline constexpr Eigen::Index kStateSize = 6;
inline constexpr Eigen::Index kCentral = 4;
inline constexpr Eigen::Index kPeripheral = 5;

void structural_rhs(const Vector& state, const IndividualParams& p, Scenario scenario, Vector& dstate);

/// Once-daily dosing: `loading_doses` full intervals, then the recorded one.
/// Every dose (including the recorded interval's) lands in transit compartment 1.
struct DosingProtocol {
  int loading_doses = 30;
  double interval = 24.0;   // h
  double grid_step = 0.1;   // h

  void validate() const;
};

numcore::SolverConfig default_simulation_solver();

/// Concentration (ng/mL) in the recorded dosing interval, evaluable at any
/// time in [0, interval].
class SteadyStateCurve {
 public:
  SteadyStateCurve(numcore::Trajectory traj, double vc) : traj_(std::move(traj)), vc_(vc) {}

  double concentration(double t) const;
  const numcore::Trajectory& trajectory() const noexcept { return traj_; }
  double central_volume() const noexcept { return vc_; }

 private:
  numcore::Trajectory traj_;
  double vc_;
};

SteadyStateCurve simulate_interval(const IndividualParams& params, const PatientCovariates& cov,
                                   Scenario scenario, const numcore::SolverConfig& solver,
                                   const DosingProtocol& dosing);

struct Profile {
  std::vector<double> times;  // 0.1 h grid over the interval
  std::vector<double> conc;   // noiseless, ng/mL
  double auc = 0.0;           // h*ng/mL, trapezoid over the grid
};

Profile profile_from_curve(const SteadyStateCurve& curve, const DosingProtocol& dosing);

Profile simulate_profile(const IndividualParams& params, const PatientCovariates& cov, Scenario scenario,
                         const numcore::SolverConfig& solver, const DosingProtocol& dosing);

}  // namespace pkode::pksim

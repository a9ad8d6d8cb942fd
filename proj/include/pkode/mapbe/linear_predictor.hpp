#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pkode/pksim/model.hpp"

namespace pkode::mapbe {

using SystemMatrix = Eigen::Matrix<double, 6, 6>;

/// Rate matrix of the linear (first-order elimination) structural model, so
/// that d(state)/dt = A * state.
SystemMatrix linear_system_matrix(const pksim::IndividualParams& p);

/// Central concentrations (ng/mL) of the linear model in the recorded
/// interval, under the same dosing protocol as the simulator, evaluated
/// exactly through matrix exponentials instead of numerical integration.
std::vector<double> linear_steady_state_concentrations(const pksim::IndividualParams& p, double dose,
                                                       const pksim::DosingProtocol& dosing,
                                                       std::span<const double> times);

}  // namespace pkode::mapbe

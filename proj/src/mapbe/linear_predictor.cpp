#include "pkode/mapbe/linear_predictor.hpp"

#include <unsupported/Eigen/MatrixFunctions>

namespace pkode::mapbe {

using State = Eigen::Matrix<double, 6, 1>;

SystemMatrix linear_system_matrix(const pksim::IndividualParams& p) {
  SystemMatrix a = SystemMatrix::Zero();
  const double ktr = p.ktr;
  a(0, 0) = -ktr;
  for (int i = 1; i < 4; ++i) {
    a(i, i - 1) = ktr;
    a(i, i) = -ktr;
  }
  a(4, 3) = ktr;
  a(4, 4) = -(p.k10() + p.k12());
  a(4, 5) = p.k21();
  a(5, 4) = p.k12();
  a(5, 5) = -p.k21();
  return a;
}

std::vector<double> linear_steady_state_concentrations(const pksim::IndividualParams& p, double dose,
                                                       const pksim::DosingProtocol& dosing,
                                                       std::span<const double> times) {
  const SystemMatrix a = linear_system_matrix(p);
  const SystemMatrix step = (a * dosing.interval).exp();
  State x = State::Zero();
  for (int k = 0; k < dosing.loading_doses; ++k) {
    x[0] += dose;
    x = step * x;
  }
  x[0] += dose;

  std::vector<double> conc;
  conc.reserve(times.size());
  for (double t : times) {
    const double amount = t == 0.0 ? x[pksim::kCentral] : ((a * t).exp() * x)[pksim::kCentral];
    conc.push_back(amount / p.vc * 1000.0);
  }
  return conc;
}

}  // namespace pkode::mapbe

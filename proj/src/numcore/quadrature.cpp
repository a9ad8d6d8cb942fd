#include "pkode/numcore/quadrature.hpp"

#include <cmath>
#include <string>

#include "pkode/numcore/errors.hpp"

namespace pkode::numcore {

double trapezoid_auc(std::span<const double> times, std::span<const double> values) {
  require(times.size() == values.size(), "trapezoid_auc: times and values differ in length");
  require(times.size() >= 2, "trapezoid_auc: need at least two points");
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    const double dt = times[i + 1] - times[i];
    if (!(dt > 0.0)) {
      throw ContractViolation("trapezoid_auc: times not strictly increasing at index " + std::to_string(i + 1));
    }
    area += 0.5 * dt * (values[i] + values[i + 1]);
  }
  return area;
}

std::vector<double> uniform_grid(double t0, double t1, double step) {
  require(step > 0.0 && t1 > t0, "uniform_grid: need step > 0 and t1 > t0");
  const auto n = static_cast<std::size_t>(std::llround((t1 - t0) / step));
  require(n >= 1, "uniform_grid: step larger than interval");
  std::vector<double> grid(n + 1);
  // (t1 - t0) * i / n keeps whole-hour points exact on a 0.1 h grid.
  for (std::size_t i = 0; i <= n; ++i) {
    grid[i] = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(n);
  }
  grid.back() = t1;
  return grid;
}

}  // namespace pkode::numcore

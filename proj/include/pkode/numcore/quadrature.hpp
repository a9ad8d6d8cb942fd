#pragma once

#include <span>
#include <vector>

namespace pkode::numcore {

/// Area under a sampled curve by the trapezoidal rule. Times must be strictly
/// increasing and match `values` in length (at least two points).
double trapezoid_auc(std::span<const double> times, std::span<const double> values);

/// n+1 equally spaced points t0, t0+step, ..., t1 with the last point pinned
/// to t1 exactly.
std::vector<double> uniform_grid(double t0, double t1, double step);

}  // namespace pkode::numcore

#pragma once

#include <cstddef>
#include <functional>

#include <Eigen/Dense>

namespace pkode::mapbe {

struct NelderMeadOptions {
  double tol_diameter = 1e-6;  // stop when every vertex is this close to the best one
  std::size_t max_evaluations = 5000;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  bool converged = false;
  std::size_t evaluations = 0;
};

/// Downhill simplex minimization (reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2). The initial simplex is x0 plus one vertex per axis offset by
/// `step[i]`. Non-finite objective values are treated as +infinity.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                             const NelderMeadOptions& options);

}  // namespace pkode::mapbe

#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pkode/numcore/diff_graph.hpp"

namespace pkode::numcore {

enum class SolverMethod { euler, rk4, dopri5 };

std::string to_string(SolverMethod m);
SolverMethod parse_solver_method(std::string_view name);

struct SolverConfig {
  SolverMethod method = SolverMethod::dopri5;
  double fixed_step = 0.25;  // euler / rk4
  double rel_tol = 1e-6;     // dopri5
  double abs_tol = 1e-8;     // dopri5
  std::size_t max_steps = 100000;

  void validate() const;
};

/// dy/dt written into `dydt`, which arrives already sized like y.
using OdeRhs = std::function<void(double t, const Vector& y, Vector& dydt)>;

/// Accepted steps of one integration. For dopri5 each step also keeps the
/// coefficients of the 4th-order continuous extension, so dense_eval is
/// accurate between steps; fixed-step trajectories interpolate linearly.
class Trajectory {
 public:
  SolverMethod method() const noexcept { return method_; }
  const std::vector<double>& times() const noexcept { return times_; }
  const std::vector<Vector>& states() const noexcept { return states_; }
  double start_time() const { return times_.front(); }
  double end_time() const { return times_.back(); }
  const Vector& final_state() const { return states_.back(); }
  std::size_t rhs_evaluations() const noexcept { return rhs_evals_; }

  Vector at(double t) const;

 private:
  friend Trajectory ode_solve(const OdeRhs&, const Vector&, double, double, const SolverConfig&);

  SolverMethod method_ = SolverMethod::dopri5;
  std::vector<double> times_;
  std::vector<Vector> states_;
  std::vector<std::array<Vector, 5>> dense_;  // dopri5 only, one per step
  std::size_t rhs_evals_ = 0;
};

/// Integrates y' = rhs(t, y) from t0 to t1 (t1 >= t0). Throws IntegrationError
/// once cfg.max_steps step attempts are used up.
Trajectory ode_solve(const OdeRhs& rhs, const Vector& y0, double t0, double t1, const SolverConfig& cfg);

/// States at the query times, which must lie inside the trajectory interval.
std::vector<Vector> dense_eval(const Trajectory& traj, std::span<const double> query_times);

/// Right-hand side recorded on a DiffGraph: returns dy/dt for state y.
using GraphRhs = std::function<Var(DiffGraph& g, double t, Var y)>;

/// Fixed-step (euler or rk4) integration recorded on `g`, so gradients flow
/// through every stage. Each interval between consecutive targets is split
/// into equal steps no longer than `max_step`; targets may run forward or
/// backward in time but must be monotone. Returns the state at each target.
std::vector<Var> solve_fixed_at(DiffGraph& g, const GraphRhs& rhs, Var y0, double t0,
                                std::span<const double> targets, SolverMethod method, double max_step);

}  // namespace pkode::numcore

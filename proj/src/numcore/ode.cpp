#include "pkode/numcore/ode.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pkode/numcore/errors.hpp"

namespace pkode::numcore {

std::string to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::euler: return "euler";
    case SolverMethod::rk4: return "rk4";
    case SolverMethod::dopri5: return "dopri5";
  }
  return "?";
}

SolverMethod parse_solver_method(std::string_view name) {
  if (name == "euler") return SolverMethod::euler;
  if (name == "rk4") return SolverMethod::rk4;
  if (name == "dopri5") return SolverMethod::dopri5;
  throw ContractViolation("unknown solver method '" + std::string(name) + "' (euler, rk4, dopri5)");
}

void SolverConfig::validate() const {
  require(fixed_step > 0.0 && std::isfinite(fixed_step), "SolverConfig: fixed_step must be > 0");
  require(rel_tol > 0.0 && abs_tol > 0.0, "SolverConfig: tolerances must be > 0");
  require(max_steps >= 1, "SolverConfig: max_steps must be >= 1");
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
// Continuous extension.
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

double scaled_rms(const Vector& v, const Vector& scale) {
  return std::sqrt((v.array() / scale.array()).square().mean());
}

void check_finite(const Vector& y, double t) {
  if (!y.allFinite()) {
    std::ostringstream msg;
    msg << "ode_solve: state became non-finite at t=" << t;
    throw IntegrationError(msg.str(), t);
  }
}

}  // namespace

Vector Trajectory::at(double t) const {
  const double lo = times_.front();
  const double hi = times_.back();
  if (!(t >= lo && t <= hi)) {
    std::ostringstream msg;
    msg << "dense_eval: query time " << t << " outside [" << lo << ", " << hi << "]";
    throw ContractViolation(msg.str());
  }
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return states_.front();
  std::size_t i = static_cast<std::size_t>(it - times_.begin()) - 1;
  if (times_[i] == t || i + 1 == times_.size()) return states_[i];
  const double h = times_[i + 1] - times_[i];
  const double s = (t - times_[i]) / h;
  if (method_ == SolverMethod::dopri5) {
    const auto& r = dense_[i];
    const double s1 = 1.0 - s;
    return r[0] + s * (r[1] + s1 * (r[2] + s * (r[3] + s1 * r[4])));
  }
  return (1.0 - s) * states_[i] + s * states_[i + 1];
}

std::vector<Vector> dense_eval(const Trajectory& traj, std::span<const double> query_times) {
  std::vector<Vector> out;
  out.reserve(query_times.size());
  for (double t : query_times) out.push_back(traj.at(t));
  return out;
}

Trajectory ode_solve(const OdeRhs& rhs, const Vector& y0, double t0, double t1, const SolverConfig& cfg) {
  cfg.validate();
  require(std::isfinite(t0) && std::isfinite(t1) && t1 >= t0, "ode_solve: need finite t1 >= t0");
  Trajectory traj;
  traj.method_ = cfg.method;
  traj.times_.push_back(t0);
  traj.states_.push_back(y0);
  if (t1 == t0) return traj;

  const Eigen::Index n = y0.size();
  auto f = [&](double t, const Vector& y, Vector& out) {
    out.resize(n);
    rhs(t, y, out);
    ++traj.rhs_evals_;
  };

  if (cfg.method != SolverMethod::dopri5) {
    const double span = t1 - t0;
    const double steps_real = std::ceil(span / cfg.fixed_step - 1e-9);
    if (steps_real > static_cast<double>(cfg.max_steps)) {
      throw IntegrationError("ode_solve: interval needs more than max_steps fixed steps", t0);
    }
    const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(steps_real));
    const double h = span / static_cast<double>(steps);
    Vector y = y0, k1(n), k2(n), k3(n), k4(n);
    for (std::size_t i = 0; i < steps; ++i) {
      const double t = t0 + static_cast<double>(i) * h;
      if (cfg.method == SolverMethod::euler) {
        f(t, y, k1);
        y += h * k1;
      } else {
        f(t, y, k1);
        f(t + 0.5 * h, y + 0.5 * h * k1, k2);
        f(t + 0.5 * h, y + 0.5 * h * k2, k3);
        f(t + h, y + h * k3, k4);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      const double t_next = (i + 1 == steps) ? t1 : t0 + static_cast<double>(i + 1) * h;
      check_finite(y, t_next);
      traj.times_.push_back(t_next);
      traj.states_.push_back(y);
    }
    return traj;
  }

  const double rtol = cfg.rel_tol;
  const double atol = cfg.abs_tol;
  Vector y = y0;
  Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), y1(n), ytmp(n), err(n), sk(n);
  double t = t0;
  f(t, y, k1);

  // Initial step guess (Hairer, Norsett & Wanner, II.4).
  double h;
  {
    sk = atol + rtol * y.array().abs();
    const double dy0 = scaled_rms(y, sk);
    const double df0 = scaled_rms(k1, sk);
    double h0 = (dy0 < 1e-5 || df0 < 1e-5) ? 1e-6 : 0.01 * dy0 / df0;
    h0 = std::min(h0, t1 - t0);
    ytmp = y + h0 * k1;
    f(t + h0, ytmp, k2);
    const double d2 = scaled_rms(k2 - k1, sk) / h0;
    const double dmax = std::max(df0, d2);
    const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 0.2);
    h = std::min({100.0 * h0, h1, t1 - t0});
  }

  bool last_rejected = false;
  std::size_t attempts = 0;
  while (t < t1) {
    if (++attempts > cfg.max_steps) {
      std::ostringstream msg;
      msg << "ode_solve: exceeded max_steps=" << cfg.max_steps << " at t=" << t;
      throw IntegrationError(msg.str(), t);
    }
    bool final_step = false;
    if (t + h >= t1 || t + 1.01 * h >= t1) {
      h = t1 - t;
      final_step = true;
    }
    ytmp = y + h * a21 * k1;
    f(t + c2 * h, ytmp, k2);
    ytmp = y + h * (a31 * k1 + a32 * k2);
    f(t + c3 * h, ytmp, k3);
    ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(t + c4 * h, ytmp, k4);
    ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(t + c5 * h, ytmp, k5);
    ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    const double t_new = final_step ? t1 : t + h;
    f(t_new, ytmp, k6);
    y1 = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    f(t_new, y1, k7);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    sk = atol + rtol * y.array().abs().max(y1.array().abs());
    const double err_norm = scaled_rms(err, sk);
    if (!std::isfinite(err_norm)) {
      if (h < 1e-14 * std::max(1.0, std::abs(t))) check_finite(y1, t);
      h *= 0.1;
      last_rejected = true;
      continue;
    }

    double fac = err_norm == 0.0 ? 10.0 : 0.9 * std::pow(err_norm, -0.2);
    if (err_norm <= 1.0) {
      std::array<Vector, 5> r;
      r[0] = y;
      r[1] = y1 - y;
      r[2] = h * k1 - r[1];
      r[3] = r[1] - h * k7 - r[2];
      r[4] = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      traj.dense_.push_back(std::move(r));
      y = y1;
      k1 = k7;
      t = t_new;
      traj.times_.push_back(t);
      traj.states_.push_back(y);
      if (final_step) break;
      fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 10.0);
      h *= fac;
      last_rejected = false;
    } else {
      h *= std::clamp(fac, 0.2, 1.0);
      last_rejected = true;
      if (h < 1e-14 * std::max(1.0, std::abs(t))) {
        std::ostringstream msg;
        msg << "ode_solve: step size underflow at t=" << t;
        throw IntegrationError(msg.str(), t);
      }
    }
  }
  return traj;
}

std::vector<Var> solve_fixed_at(DiffGraph& g, const GraphRhs& rhs, Var y0, double t0,
                                std::span<const double> targets, SolverMethod method, double max_step) {
  require(method != SolverMethod::dopri5, "solve_fixed_at: only euler and rk4 are recorded on a graph");
  require(max_step > 0.0, "solve_fixed_at: max_step must be > 0");
  std::vector<Var> out;
  out.reserve(targets.size());
  Var y = y0;
  double t = t0;
  int direction = 0;
  for (double target : targets) {
    const double span = target - t;
    if (span != 0.0) {
      const int dir = span > 0 ? 1 : -1;
      require(direction == 0 || dir == direction, "solve_fixed_at: targets must be monotone");
      direction = dir;
    }
    const auto steps = static_cast<std::size_t>(std::ceil(std::abs(span) / max_step - 1e-9));
    const double h = steps == 0 ? 0.0 : span / static_cast<double>(steps);
    for (std::size_t i = 0; i < steps; ++i) {
      const double ti = t + static_cast<double>(i) * h;
      if (method == SolverMethod::euler) {
        Var k1 = rhs(g, ti, y);
        const Var terms[] = {y, k1};
        const double coeffs[] = {1.0, h};
        y = g.weighted_sum(terms, coeffs);
      } else {
        Var k1 = rhs(g, ti, y);
        const Var s2[] = {y, k1};
        const double c2h[] = {1.0, 0.5 * h};
        Var k2 = rhs(g, ti + 0.5 * h, g.weighted_sum(s2, c2h));
        const Var s3[] = {y, k2};
        Var k3 = rhs(g, ti + 0.5 * h, g.weighted_sum(s3, c2h));
        const Var s4[] = {y, k3};
        const double c4h[] = {1.0, h};
        Var k4 = rhs(g, ti + h, g.weighted_sum(s4, c4h));
        const Var terms[] = {y, k1, k2, k3, k4};
        const double coeffs[] = {1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0};
        y = g.weighted_sum(terms, coeffs);
      }
    }
    t = target;
    out.push_back(y);
  }
  return out;
}

}  // namespace pkode::numcore

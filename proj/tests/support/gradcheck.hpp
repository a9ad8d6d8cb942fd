#pragma once

// Finite-difference gradient oracle shared by the unit tests and the
// acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pkode/numcore/diff_graph.hpp"

namespace pkode::testing {

using GraphFn = std::function<numcore::Var(numcore::DiffGraph&, const numcore::ParameterStore&)>;

struct GradCheckResult {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double worst_coord_error = 0.0;
  std::size_t coords = 0;
  std::string worst_name;
};

inline double eval_scalar(const GraphFn& f, const numcore::ParameterStore& store) {
  numcore::DiffGraph g;
  return g.value(f(g, store))(0, 0);
}

/// Central differences on up to `max_coords` randomly chosen coordinates
/// (all of them when the store is smaller).
inline GradCheckResult check_gradient(numcore::ParameterStore& store, const GraphFn& f, std::uint64_t seed,
                                      std::size_t max_coords = 60, double h = 1e-5) {
  numcore::DiffGraph g;
  const numcore::Var out = f(g, store);
  const auto grads = numcore::gradient(g, out, store);

  struct Coord {
    std::string name;
    Eigen::Index index;
  };
  std::vector<Coord> coords;
  for (const auto& e : store.entries()) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i) coords.push_back({e.name, i});
  }
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > max_coords) coords.resize(max_coords);

  double diff_sq = 0.0;
  double a_sq = 0.0;
  double n_sq = 0.0;
  GradCheckResult r;
  for (const auto& c : coords) {
    double& x = store.get(c.name).data()[c.index];
    const double saved = x;
    x = saved + h;
    const double up = eval_scalar(f, store);
    x = saved - h;
    const double down = eval_scalar(f, store);
    x = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads.at(c.name).data()[c.index];
    diff_sq += (analytic - numeric) * (analytic - numeric);
    a_sq += analytic * analytic;
    n_sq += numeric * numeric;
    const double coord_err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    if (coord_err > r.worst_coord_error) {
      r.worst_coord_error = coord_err;
      r.worst_name = c.name + "[" + std::to_string(c.index) + "]";
    }
  }
  const double scale = std::max(std::sqrt(a_sq), std::sqrt(n_sq));
  r.rel_error = scale > 0.0 ? std::sqrt(diff_sq) / scale : 0.0;
  r.coords = coords.size();
  return r;
}

}  // namespace pkode::testing

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "pkode/numcore/errors.hpp"
#include "pkode/numcore/quadrature.hpp"
#include "pkode/pksim/dataset.hpp"
#include "pkode/pksim/model.hpp"
#include "pkode/pksim/population.hpp"
#include "support/expm_oracle.hpp"

using namespace pkode;
using namespace pkode::pksim;

namespace {

constexpr Eta kZeroEta{};

PatientCovariates typical(double dose = 5.0) {
  PatientCovariates c;
  c.dose = dose;
  return c;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]) / std::abs(b[i]));
  return m;
}

}  // namespace

TEST_CASE("individual parameters of the typical patient") {
  const PopulationParams pop;
  const auto p = individual_params(pop, typical(), kZeroEta, Scenario::correct);
  CHECK(p.ktr == doctest::Approx(3.34));
  CHECK(p.cl == doctest::Approx(21.2));
  CHECK(p.vc == doctest::Approx(486.0));
  CHECK(p.q == doctest::Approx(79.0));
  CHECK(p.vp == doctest::Approx(271.0));
  CHECK(p.k10() == doctest::Approx(0.04362).epsilon(1e-3));
  CHECK(p.k12() == doctest::Approx(0.16255).epsilon(1e-3));
  CHECK(p.k21() == doctest::Approx(0.29151).epsilon(1e-3));

  PatientCovariates cyp = typical();
  cyp.cyp = 1;
  CHECK(individual_params(pop, cyp, kZeroEta, Scenario::correct).cl == doctest::Approx(42.4));
  PopulationParams additive = pop;
  additive.reading = CovariateReading::additive;
  CHECK(individual_params(additive, cyp, kZeroEta, Scenario::correct).cl == doctest::Approx(21.2 * std::exp(2.0)));

  PatientCovariates st = typical();
  st.st = 1;
  const auto ps = individual_params(pop, st, kZeroEta, Scenario::correct);
  CHECK(ps.ktr == doctest::Approx(3.34 * 1.53));
  CHECK(ps.vc == doctest::Approx(486.0 * 0.29));

  PatientCovariates hct = typical();
  hct.hct = 35.0;
  CHECK(individual_params(pop, hct, kZeroEta, Scenario::unaccounted_covariate).cl ==
        individual_params(pop, hct, kZeroEta, Scenario::correct).cl);
  hct.hct = 45.0;
  CHECK(individual_params(pop, hct, kZeroEta, Scenario::unaccounted_covariate).cl ==
        doctest::Approx(21.2 * std::pow(45.0 / 35.0, -1.14)));
}

TEST_CASE("structural right-hand side") {
  const PopulationParams pop;
  const auto p = individual_params(pop, typical(), kZeroEta, Scenario::correct);
  Vector ds(kStateSize);
  structural_rhs(Vector::Zero(kStateSize), p, Scenario::correct, ds);
  CHECK(ds.isZero());

  // Saturation: elimination approaches vmax when Cc >> Km.
  const auto mm = individual_params(pop, typical(), kZeroEta, Scenario::michaelis_menten);
  Vector s = Vector::Zero(kStateSize);
  s[kCentral] = 1e6;  // mg, so Cc is astronomically above Km
  structural_rhs(s, mm, Scenario::michaelis_menten, ds);
  const double elimination = -(ds[kCentral] + mm.k12() * s[kCentral]);
  CHECK(elimination == doctest::Approx(mm.vmax).epsilon(1e-5));
}

TEST_CASE("linear simulation matches the matrix-exponential oracle") {
  const PopulationParams pop;
  DosingProtocol dosing;
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Eta eta = sample_eta(pop, rng);
    const auto p = individual_params(pop, typical(2.0 + trial), eta, Scenario::correct);
    const auto prof = simulate_profile(p, typical(2.0 + trial), Scenario::correct, default_simulation_solver(), dosing);
    const auto oracle =
        testing::oracle_concentrations(p, 2.0 + trial, dosing.loading_doses, dosing.interval, prof.times);
    CHECK(max_rel_diff(prof.conc, oracle) < 1e-6);
  }
}

TEST_CASE("mass balance with an augmented elimination state") {
  const PopulationParams pop;
  for (auto scenario : {Scenario::correct, Scenario::michaelis_menten}) {
    const auto p = individual_params(pop, typical(8.0), kZeroEta, scenario);
    const numcore::OdeRhs rhs = [&](double, const Vector& y, Vector& dy) {
      Vector ds(kStateSize);
      structural_rhs(y.head(kStateSize), p, scenario, ds);
      dy.resize(kStateSize + 1);
      dy.head(kStateSize) = ds;
      dy[kStateSize] = -ds.sum();  // whatever leaves the system is elimination
    };
    Vector y = Vector::Zero(kStateSize + 1);
    double dosed = 0.0;
    for (int k = 0; k < 6; ++k) {
      y[0] += 8.0;
      dosed += 8.0;
      const auto traj = numcore::ode_solve(rhs, y, 0.0, 24.0, default_simulation_solver());
      for (const auto& state : traj.states()) CHECK(std::abs(state.sum() - dosed) < 1e-8 * dosed);
      y = traj.final_state();
    }
    // The elimination state must equal the integral of the elimination rate.
    const auto traj = numcore::ode_solve(rhs, y, 0.0, 24.0, default_simulation_solver());
    double integral = 0.0;
    for (std::size_t i = 1; i < traj.times().size(); ++i) {
      const double h = traj.times()[i] - traj.times()[i - 1];
      auto rate = [&](const Vector& st) {
        if (scenario == Scenario::correct) return p.k10() * st[kCentral];
        const double cc = st[kCentral] / p.vc * 1000.0;
        return p.vmax * cc / (p.km + cc);
      };
      integral += 0.5 * h * (rate(traj.states()[i]) + rate(traj.states()[i - 1]));
    }
    CHECK(traj.final_state()[kStateSize] - y[kStateSize] == doctest::Approx(integral).epsilon(1e-3));
  }
}

TEST_CASE("profile shape, zero dose and steady state") {
  const PopulationParams pop;
  DosingProtocol dosing;
  const auto solver = default_simulation_solver();
  const auto p = individual_params(pop, typical(5.0), kZeroEta, Scenario::correct);
  const auto prof = simulate_profile(p, typical(5.0), Scenario::correct, solver, dosing);
  REQUIRE(prof.times.size() == 241);
  int maxima = 0;
  for (std::size_t i = 1; i + 1 < prof.conc.size(); ++i) {
    maxima += prof.conc[i] > prof.conc[i - 1] && prof.conc[i] >= prof.conc[i + 1];
  }
  CHECK(maxima == 1);
  for (double c : prof.conc) CHECK(c > 0.0);
  CHECK(prof.auc == doctest::Approx(numcore::trapezoid_auc(prof.times, prof.conc)));
  CHECK(std::abs(prof.conc.front() - prof.conc.back()) / prof.conc.front() < 0.01);

  const auto zero = simulate_profile(p, typical(0.0), Scenario::correct, solver, dosing);
  CHECK(zero.auc == 0.0);
  for (double c : zero.conc) CHECK(c == 0.0);
}

TEST_CASE("fast absorption without a peripheral compartment decays with k10") {
  PopulationParams pop;
  pop.theta_ktr = 200.0;
  pop.theta_q = 1e-9;
  DosingProtocol dosing;
  const auto p = individual_params(pop, typical(5.0), kZeroEta, Scenario::correct);
  const auto prof = simulate_profile(p, typical(5.0), Scenario::correct, default_simulation_solver(), dosing);
  const double c2 = prof.conc[20];
  for (std::size_t i = 21; i < prof.times.size(); ++i) {
    const double expected = c2 * std::exp(-p.k10() * (prof.times[i] - 2.0));
    CHECK(std::abs(prof.conc[i] - expected) / expected < 0.02);
  }
}

TEST_CASE("residual error model") {
  PopulationParams pop;
  std::mt19937_64 rng(99);
  std::vector<double> tens(100000, 10.0);
  std::size_t clipped = 0;
  const auto noisy = add_residual_error(tens, pop, rng, &clipped);
  double mean = 0.0;
  for (double v : noisy) mean += v;
  mean /= static_cast<double>(noisy.size());
  double var = 0.0;
  for (double v : noisy) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(noisy.size() - 1));
  CHECK(std::abs(sd - 1.336) / 1.336 < 0.03);

  const std::vector<double> zeros(1000, 0.0);
  for (double v : add_residual_error(zeros, pop, rng)) CHECK(v >= 0.0);

  pop.sigma_prop = 0.0;
  pop.sigma_add = 0.0;
  const std::vector<double> values{0.0, 1.5, 20.0};
  CHECK(add_residual_error(values, pop, rng) == values);
}

TEST_CASE("random-effect spread of clearance") {
  SimulationConfig cfg;
  cfg.seed = 2024;
  std::vector<double> logs;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    auto rng = patient_stream(cfg.seed, i, kStreamCovariates);
    const auto cov = sample_covariates(cfg.covariates, rng);
    const auto eta = sample_eta(cfg.pop, rng);
    const auto p = individual_params(cfg.pop, cov, eta, Scenario::correct);
    logs.push_back(std::log(p.cl) - std::log(cfg.pop.theta_cyp_cl) * cov.cyp);
  }
  double mean = 0.0;
  for (double v : logs) mean += v;
  mean /= static_cast<double>(logs.size());
  double var = 0.0;
  for (double v : logs) var += (v - mean) * (v - mean);
  CHECK(std::abs(std::sqrt(var / static_cast<double>(logs.size() - 1)) - 0.28) < 0.01);
}

TEST_CASE("population sampling invariants") {
  SimulationConfig cfg;
  cfg.seed = 42;
  const auto pop = sample_population(12, cfg);
  REQUIRE(pop.size() == 12);
  for (const auto& r : pop) {
    CHECK(r.rich.size() == 11);
    CHECK(r.sparse.size() == 3);
    CHECK(r.dense_times.size() == 241);
    CHECK(r.true_auc == numcore::trapezoid_auc(r.dense_times, r.dense_conc));
    for (std::size_t j = 0; j < r.sparse.size(); ++j) {
      const auto it = std::find(r.rich.times.begin(), r.rich.times.end(), r.sparse.times[j]);
      REQUIRE(it != r.rich.times.end());
      CHECK(r.rich.values[static_cast<std::size_t>(it - r.rich.times.begin())] == r.sparse.values[j]);
    }
    for (double v : r.rich.values) CHECK(v >= 0.0);
    CHECK(r.covariates.dose >= 1.0);
    CHECK(r.covariates.dose <= 12.0);
    CHECK(r.covariates.hct >= 20.0);
    CHECK(r.covariates.hct <= 55.0);
  }

  const auto serial = sample_population_serial(12, cfg);
  for (std::size_t i = 0; i < pop.size(); ++i) {
    CHECK(serial[i].true_auc == pop[i].true_auc);
    CHECK(serial[i].rich == pop[i].rich);
  }

  // Without noise, rich observations sit exactly on the dense curve.
  cfg.residual_error = false;
  const auto clean = sample_population(3, cfg);
  for (const auto& r : clean) {
    for (std::size_t j = 0; j < r.rich.size(); ++j) {
      const auto it = std::find(r.dense_times.begin(), r.dense_times.end(), r.rich.times[j]);
      if (it == r.dense_times.end()) continue;
      CHECK(r.rich.values[j] == r.dense_conc[static_cast<std::size_t>(it - r.dense_times.begin())]);
    }
  }
}

TEST_CASE("scenario nesting") {
  SimulationConfig s1;
  s1.seed = 5;
  SimulationConfig s2 = s1;
  s2.scenario = Scenario::unaccounted_covariate;
  s2.covariates.fixed_hct = 35.0;
  const auto a = sample_population(8, s1);
  const auto b = sample_population(8, s2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(a[i].dense_conc.data(), b[i].dense_conc.data(), sizeof(double) * a[i].dense_conc.size()) == 0);
    CHECK(a[i].rich == b[i].rich);
    CHECK(a[i].true_auc == b[i].true_auc);
  }

  SimulationConfig s3 = s1;
  s3.scenario = Scenario::michaelis_menten;
  s3.pop.km = 1e4;
  s3.pop.vmax = s3.pop.theta_cl * s3.pop.km / 1000.0;
  s3.residual_error = false;
  s1.residual_error = false;
  const auto lin = sample_population(8, s1);
  const auto mm = sample_population(8, s3);
  for (std::size_t i = 0; i < lin.size(); ++i) CHECK(max_rel_diff(mm[i].dense_conc, lin[i].dense_conc) < 0.01);
}

TEST_CASE("dataset round-trip, determinism and truncation") {
  SimulationConfig cfg;
  cfg.seed = 8;
  cfg.scenario = Scenario::unaccounted_covariate;
  Dataset ds;
  ds.config = cfg;
  ds.records = sample_population(6, cfg);
  ds.provenance = {{"command", "test"}};
  std::ostringstream out;
  write_dataset(out, ds);
  const std::string text = out.str();

  std::istringstream in(text);
  const Dataset back = read_dataset(in);
  REQUIRE(back.records.size() == ds.records.size());
  CHECK(back.config.scenario == cfg.scenario);
  CHECK(back.config.seed == cfg.seed);
  CHECK(back.provenance == ds.provenance);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& x = ds.records[i];
    const auto& y = back.records[i];
    CHECK(std::memcmp(&x.true_auc, &y.true_auc, sizeof(double)) == 0);
    CHECK(x.rich == y.rich);
    CHECK(x.sparse == y.sparse);
    CHECK(x.dense_conc == y.dense_conc);
    CHECK(x.truth.cl == y.truth.cl);
    CHECK(x.truth.eta == y.truth.eta);
    CHECK(x.covariates.hct == y.covariates.hct);
  }

  Dataset again = ds;
  again.records = sample_population(6, cfg);
  std::ostringstream out2;
  write_dataset(out2, again);
  CHECK(out2.str() == text);

  const auto last_newline = text.rfind('\n', text.size() - 2);
  std::istringstream truncated(text.substr(0, last_newline + 1));
  CHECK_THROWS_WITH_AS(read_dataset(truncated), doctest::Contains("truncated"), ParseError);
  std::istringstream cut_mid(text.substr(0, text.size() - 40));
  CHECK_THROWS_AS(read_dataset(cut_mid), ParseError);
  std::istringstream garbage("{\"format\": 1}\nnot json\n");
  CHECK_THROWS_AS(read_dataset(garbage), ParseError);
}

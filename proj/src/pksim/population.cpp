#include "pkode/pksim/population.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "pkode/numcore/errors.hpp"

namespace pkode::pksim {

void CovariateDistribution::validate() const {
  require(p_cyp >= 0.0 && p_cyp <= 1.0 && p_st >= 0.0 && p_st <= 1.0, "CovariateDistribution: bad probability");
  require(dose_min > 0.0 && dose_max >= dose_min && dose_step > 0.0, "CovariateDistribution: bad dose range");
  require(hct_sd >= 0.0 && hct_min < hct_max && hct_min >= 20.0 && hct_max <= 55.0,
          "CovariateDistribution: bad hematocrit range");
  if (fixed_hct) require(*fixed_hct >= 20.0 && *fixed_hct <= 55.0, "CovariateDistribution: fixed_hct out of range");
}

std::vector<double> default_rich_times() { return {0.0, 0.33, 0.67, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 24.0}; }

std::vector<double> default_sparse_times() { return {0.0, 1.0, 3.0}; }

void SimulationConfig::validate() const {
  pop.validate();
  covariates.validate();
  dosing.validate();
  solver.validate();
  require(!rich_times.empty(), "SimulationConfig: rich_times empty");
  require(std::is_sorted(rich_times.begin(), rich_times.end()) &&
              std::adjacent_find(rich_times.begin(), rich_times.end()) == rich_times.end(),
          "SimulationConfig: rich_times must be strictly increasing");
  require(rich_times.front() >= 0.0 && rich_times.back() <= dosing.interval,
          "SimulationConfig: rich_times must lie inside the dosing interval");
  for (double t : sparse_times) {
    require(std::find(rich_times.begin(), rich_times.end(), t) != rich_times.end(),
            "SimulationConfig: every sparse time must be a rich time");
  }
  require(std::is_sorted(sparse_times.begin(), sparse_times.end()), "SimulationConfig: sparse_times unsorted");
}

std::mt19937_64 patient_stream(std::uint64_t seed, std::uint64_t index, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream};
  return std::mt19937_64(seq);
}

PatientCovariates sample_covariates(const CovariateDistribution& dist, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  PatientCovariates cov;
  cov.cyp = unit(rng) < dist.p_cyp ? 1 : 0;
  cov.st = unit(rng) < dist.p_st ? 1 : 0;
  const auto levels = static_cast<std::uint64_t>(std::llround((dist.dose_max - dist.dose_min) / dist.dose_step)) + 1;
  std::uniform_int_distribution<std::uint64_t> pick(0, levels - 1);
  cov.dose = dist.dose_min + static_cast<double>(pick(rng)) * dist.dose_step;
  // Truncated normal by rejection; bounded attempts fall back to clamping.
  double hct = dist.hct_mean;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    hct = dist.hct_mean + dist.hct_sd * normal(rng);
    if (hct >= dist.hct_min && hct <= dist.hct_max) break;
  }
  cov.hct = std::clamp(hct, dist.hct_min, dist.hct_max);
  if (dist.fixed_hct) cov.hct = *dist.fixed_hct;
  return cov;
}

Eta sample_eta(const PopulationParams& pop, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eta eta{};
  for (std::size_t k = 0; k < kEtaSize; ++k) eta[k] = pop.omega[k] * normal(rng);
  return eta;
}

std::vector<double> add_residual_error(std::span<const double> conc, const PopulationParams& pop,
                                       std::mt19937_64& rng, std::size_t* clipped) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out;
  out.reserve(conc.size());
  for (double c : conc) {
    require(c >= 0.0, "add_residual_error: concentrations must be >= 0");
    const double eps_prop = pop.sigma_prop * normal(rng);
    const double eps_add = pop.sigma_add * normal(rng);
    double y = c * (1.0 + eps_prop) + eps_add;
    if (y < 0.0) {
      y = 0.0;
      if (clipped) ++*clipped;
    }
    out.push_back(y);
  }
  return out;
}

PatientRecord simulate_patient(std::uint64_t index, const SimulationConfig& cfg) {
  auto rng = patient_stream(cfg.seed, index, kStreamCovariates);
  PatientRecord rec;
  rec.id = index;
  rec.covariates = sample_covariates(cfg.covariates, rng);
  const Eta eta = sample_eta(cfg.pop, rng);
  rec.truth = individual_params(cfg.pop, rec.covariates, eta, cfg.scenario);

  const SteadyStateCurve curve = simulate_interval(rec.truth, rec.covariates, cfg.scenario, cfg.solver, cfg.dosing);
  Profile prof = profile_from_curve(curve, cfg.dosing);
  rec.dense_times = std::move(prof.times);
  rec.dense_conc = std::move(prof.conc);
  rec.true_auc = prof.auc;

  std::vector<double> exact;
  exact.reserve(cfg.rich_times.size());
  for (double t : cfg.rich_times) exact.push_back(std::max(0.0, curve.concentration(t)));
  rec.rich.times = cfg.rich_times;
  if (cfg.residual_error) {
    auto noise_rng = patient_stream(cfg.seed, index, kStreamResidual);
    rec.rich.values = add_residual_error(exact, cfg.pop, noise_rng, &rec.clipped);
  } else {
    rec.rich.values = exact;
  }
  for (double t : cfg.sparse_times) {
    const auto pos = std::find(cfg.rich_times.begin(), cfg.rich_times.end(), t) - cfg.rich_times.begin();
    rec.sparse.times.push_back(t);
    rec.sparse.values.push_back(rec.rich.values[static_cast<std::size_t>(pos)]);
  }
  return rec;
}

std::vector<PatientRecord> sample_population_serial(std::size_t n, const SimulationConfig& cfg) {
  require(n >= 1, "sample_population: n must be >= 1");
  cfg.validate();
  std::vector<PatientRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(simulate_patient(i, cfg));
  return out;
}

std::vector<PatientRecord> sample_population(std::size_t n, const SimulationConfig& cfg) {
  require(n >= 1, "sample_population: n must be >= 1");
  cfg.validate();
  std::vector<PatientRecord> out(n);
  std::exception_ptr failure;
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = simulate_patient(static_cast<std::uint64_t>(i), cfg);
    } catch (...) {
#pragma omp critical(pkode_sample_population)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::size_t count_clipped(std::span<const PatientRecord> records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.clipped;
  return n;
}

}  // namespace pkode::pksim

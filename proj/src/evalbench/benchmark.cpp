#include "pkode/evalbench/benchmark.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <exception>
#include <ostream>
#include <random>

#include "pkode/numcore/errors.hpp"
#include "pkode/pksim/dataset.hpp"

namespace pkode::evalbench {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t word) {
  for (int i = 0; i < 8; ++i) {
    h ^= (word >> (8 * i)) & 0xFF;
    h *= kFnvPrime;
  }
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string mean_pm_sd(const MeanSd& m, const char* spec) { return fmt(spec, m.mean) + " ± " + fmt(spec, m.sd); }

std::string scenario_label(pksim::Scenario s) {
  return "Scenario " + std::to_string(pksim::scenario_number(s)) + " (" + pksim::to_string(s) + ")";
}

}  // namespace

void BenchmarkConfig::validate() const {
  require(runs >= 1, "BenchmarkConfig: runs must be >= 1");
  require(n_train >= 1 && n_test >= 1, "BenchmarkConfig: split sizes must be >= 1");
  require(run_seeds.empty() || run_seeds.size() == static_cast<std::size_t>(runs),
          "BenchmarkConfig: run_seeds must list one seed per run");
  simulation.validate();
  model.validate();
  train.validate();
  estimator.validate();
}

std::uint64_t BenchmarkConfig::seed_for_run(int run) const {
  if (!run_seeds.empty()) return run_seeds.at(static_cast<std::size_t>(run));
  return splitmix64(seed + static_cast<std::uint64_t>(run));
}

nlohmann::json to_json(const BenchmarkConfig& cfg) {
  nlohmann::json seeds = nlohmann::json::array();
  for (int r = 0; r < cfg.runs; ++r) seeds.push_back(cfg.seed_for_run(r));
  return {
      {"simulation", pksim::to_json(cfg.simulation)},
      {"runs", cfg.runs},
      {"n_train", cfg.n_train},
      {"n_test", cfg.n_test},
      {"seed", cfg.seed},
      {"run_seeds", seeds},
      {"model", latentode::to_json(cfg.model)},
      {"train", latentode::to_json(cfg.train)},
      {"predict_samples", cfg.predict.samples},
      {"estimator",
       {{"starts", cfg.estimator.starts},
        {"tol_diameter", cfg.estimator.tol_diameter},
        {"max_evaluations", cfg.estimator.max_evaluations},
        {"initial_step", cfg.estimator.initial_step}}},
  };
}

std::uint64_t sparse_hash(std::span<const pksim::PatientRecord> records) {
  std::uint64_t h = kFnvOffset;
  for (const auto& r : records) {
    fnv_mix(h, r.id);
    fnv_mix(h, r.sparse.size());
    for (double t : r.sparse.times) fnv_mix(h, std::bit_cast<std::uint64_t>(t));
    for (double v : r.sparse.values) fnv_mix(h, std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

RunResult run_once(const BenchmarkConfig& cfg, int run) {
  RunResult out;
  out.run = run;
  out.seed = cfg.seed_for_run(run);

  pksim::SimulationConfig sim = cfg.simulation;
  sim.seed = out.seed;
  const auto population = pksim::sample_population_serial(cfg.n_train + cfg.n_test, sim);
  const std::span<const pksim::PatientRecord> train_set(population.data(), cfg.n_train);
  const std::span<const pksim::PatientRecord> test_set(population.data() + cfg.n_train, cfg.n_test);
  out.sparse_hash = sparse_hash(test_set);

  latentode::TrainConfig tc = cfg.train;
  tc.seed = splitmix64(out.seed ^ 0x6C8E9CF570932BD5ULL);
  const auto trained = latentode::train(train_set, cfg.model, tc);
  out.train_seconds = trained.seconds;
  out.latent_auc = latentode::predict_population_serial(trained.model, test_set, cfg.predict);

  mapbe::EstimatorConfig ec = cfg.estimator;
  ec.seed = splitmix64(out.seed ^ 0x2545F4914F6CDD1DULL);
  const auto prior = mapbe::PriorSpec::from_population(sim.pop, sim.dosing);
  const auto fits = mapbe::fit_population_serial(test_set, prior, ec);

  for (std::size_t i = 0; i < test_set.size(); ++i) {
    out.test_ids.push_back(test_set[i].id);
    out.true_auc.push_back(test_set[i].true_auc);
    if (!fits[i].estimate.converged) {
      ++out.mapbe_nonconverged;
      // The best simplex point is still a posterior-mode estimate; it is used
      // and the count is reported.
      out.mapbe_auc.push_back(mapbe::predict_auc_mapbe(fits[i].estimate.eta_hat, test_set[i].covariates, prior));
    } else {
      out.mapbe_auc.push_back(fits[i].auc);
    }
  }
  out.latent = compute_metrics(out.latent_auc, out.true_auc);
  out.mapbe = compute_metrics(out.mapbe_auc, out.true_auc);
  out.ok = true;
  return out;
}

void summarize(BenchmarkResult& result) {
  std::vector<double> lr, lm, mr, mm;
  for (const auto& r : result.runs) {
    if (!r.ok) continue;
    lr.push_back(r.latent.rmspe);
    lm.push_back(r.latent.mpe);
    mr.push_back(r.mapbe.rmspe);
    mm.push_back(r.mapbe.mpe);
  }
  result.complete = !result.runs.empty() && lr.size() == result.runs.size();
  result.latent = {};
  result.mapbe = {};
  result.rmspe_test.reset();
  result.mpe_test.reset();
  if (lr.empty()) return;
  result.latent = {mean_sd(lr), mean_sd(lm)};
  result.mapbe = {mean_sd(mr), mean_sd(mm)};
  if (lr.size() >= 2) {
    result.rmspe_test = paired_t_test(lr, mr);
    result.mpe_test = paired_t_test(lm, mm);
  }
}

BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const RunCallback& on_run) {
  cfg.validate();
  BenchmarkResult result;
  result.scenario = cfg.simulation.scenario;
  result.runs.resize(static_cast<std::size_t>(cfg.runs));
#pragma omp parallel for schedule(dynamic, 1)
  for (int r = 0; r < cfg.runs; ++r) {
    RunResult rr;
    try {
      rr = run_once(cfg, r);
    } catch (const std::exception& e) {
      rr = RunResult{};
      rr.run = r;
      rr.seed = cfg.seed_for_run(r);
      rr.error = e.what();
    }
    result.runs[static_cast<std::size_t>(r)] = std::move(rr);
    if (on_run) {
#pragma omp critical(pkode_benchmark_callback)
      on_run(result.runs[static_cast<std::size_t>(r)]);
    }
  }
  summarize(result);
  return result;
}

void write_runs_csv(std::ostream& out, std::span<const BenchmarkResult> results) {
  out << "scenario,run,seed,status,method,n,rmspe_percent,mpe_percent,mpe_fraction,sparse_hash,mapbe_nonconverged,"
         "error\n";
  for (const auto& res : results) {
    for (const auto& r : res.runs) {
      for (const auto* method : {kLatentOde, kMapBe}) {
        const MetricsReport& m = method == kLatentOde ? r.latent : r.mapbe;
        char hash[17];
        std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(r.sparse_hash));
        std::string error = r.error;
        std::replace(error.begin(), error.end(), ',', ';');
        std::replace(error.begin(), error.end(), '\n', ' ');
        out << pksim::scenario_number(res.scenario) << ',' << r.run << ',' << r.seed << ','
            << (r.ok ? "ok" : "failed") << ',' << method << ',' << m.n << ',' << fmt("%.10g", m.rmspe) << ','
            << fmt("%.10g", m.mpe) << ',' << fmt("%.10g", m.mpe / 100.0) << ',' << hash << ','
            << r.mapbe_nonconverged << ',' << error << '\n';
      }
    }
  }
}

void write_patients_csv(std::ostream& out, std::span<const BenchmarkResult> results) {
  out << "scenario,run,id,true_auc,latent_ode_auc,map_be_auc\n";
  for (const auto& res : results) {
    for (const auto& r : res.runs) {
      if (!r.ok) continue;
      for (std::size_t i = 0; i < r.true_auc.size(); ++i) {
        out << pksim::scenario_number(res.scenario) << ',' << r.run << ',' << r.test_ids[i] << ','
            << fmt("%.17g", r.true_auc[i]) << ',' << fmt("%.17g", r.latent_auc[i]) << ','
            << fmt("%.17g", r.mapbe_auc[i]) << '\n';
      }
    }
  }
}

void write_summary(std::ostream& out, std::span<const BenchmarkResult> results) {
  out << "| Scenario | Metric | Latent ODE | MAP-BE | t | df | p-value | Significance |\n";
  out << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& res : results) {
    std::size_t done = 0;
    for (const auto& r : res.runs) done += r.ok;
    const std::string label = scenario_label(res.scenario) + ", " + std::to_string(done) + "/" +
                              std::to_string(res.runs.size()) + " runs";
    auto test_cells = [&](const std::optional<TTestResult>& t) {
      if (!t) return std::string("n/a | n/a | n/a | n/a");
      return fmt("%.4f", t->t) + " | " + std::to_string(t->df) + " | " + fmt("%.4g", t->p) + " | " +
             (t->p <= 0.05 ? "p ≤ 0.05" : "n.s.");
    };
    if (done == 0) {
      out << "| " << label << " | all runs failed | | | | | | |\n";
      continue;
    }
    out << "| " << label << " | RMSPE (%) | " << mean_pm_sd(res.latent.rmspe, "%.2f") << " | "
        << mean_pm_sd(res.mapbe.rmspe, "%.2f") << " | " << test_cells(res.rmspe_test) << " |\n";
    out << "| | MPE (%) | " << mean_pm_sd(res.latent.mpe, "%.2f") << " | " << mean_pm_sd(res.mapbe.mpe, "%.2f")
        << " | " << test_cells(res.mpe_test) << " |\n";
    const MeanSd lf{res.latent.mpe.mean / 100.0, res.latent.mpe.sd / 100.0, res.latent.mpe.n};
    const MeanSd mf{res.mapbe.mpe.mean / 100.0, res.mapbe.mpe.sd / 100.0, res.mapbe.mpe.n};
    out << "| | MPE (fraction) | " << mean_pm_sd(lf, "%.4f") << " | " << mean_pm_sd(mf, "%.4f")
        << " | | | | |\n";
  }
}

void ScalingConfig::validate() const {
  require(!sizes.empty(), "ScalingConfig: sizes must not be empty");
  for (auto s : sizes) require(s >= 1, "ScalingConfig: sizes must be >= 1");
  require(repeats >= 1, "ScalingConfig: repeats must be >= 1");
  require(n_test >= 1, "ScalingConfig: n_test must be >= 1");
  model.validate();
  train.validate();
}

nlohmann::json to_json(const ScalingConfig& cfg) {
  return {
      {"sizes", cfg.sizes},
      {"repeats", cfg.repeats},
      {"n_test", cfg.n_test},
      {"seed", cfg.seed},
      {"model", latentode::to_json(cfg.model)},
      {"train", latentode::to_json(cfg.train)},
      {"predict_samples", cfg.predict.samples},
  };
}

ScalingResult size_scaling_study(std::span<const pksim::PatientRecord> records, const ScalingConfig& cfg,
                                 const ScalingCallback& on_row) {
  cfg.validate();
  require(records.size() > cfg.n_test, "size_scaling_study: dataset has no records left for training");
  const std::size_t pool = records.size() - cfg.n_test;
  std::vector<std::size_t> sizes = cfg.sizes;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  require(sizes.back() <= pool, "size_scaling_study: size " + std::to_string(sizes.back()) +
                                    " exceeds the training pool of " + std::to_string(pool) + " records");
  const auto test_set = records.subspan(pool);
  std::vector<double> truth;
  for (const auto& r : test_set) truth.push_back(r.true_auc);

  ScalingResult result;
  result.rows.resize(sizes.size() * static_cast<std::size_t>(cfg.repeats));
  const auto total = static_cast<std::int64_t>(result.rows.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t job = 0; job < total; ++job) {
    try {
      const std::size_t si = static_cast<std::size_t>(job) / static_cast<std::size_t>(cfg.repeats);
      const int rep = static_cast<int>(job % cfg.repeats);
      ScalingRow row;
      row.size = sizes[si];
      row.repeat = rep;
      row.seed = splitmix64(cfg.seed ^ splitmix64(sizes[si] * 1000003ULL + static_cast<std::uint64_t>(rep)));
      std::vector<std::size_t> idx(pool);
      for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
      std::mt19937_64 rng(row.seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(row.size);
      std::sort(idx.begin(), idx.end());
      std::vector<pksim::PatientRecord> subset;
      for (auto i : idx) {
        subset.push_back(records[i]);
        row.train_ids.push_back(records[i].id);
      }
      latentode::TrainConfig tc = cfg.train;
      tc.seed = row.seed;
      const auto trained = latentode::train(subset, cfg.model, tc);
      row.train_seconds = trained.seconds;
      const auto pred = latentode::predict_population_serial(trained.model, test_set, cfg.predict);
      const auto m = compute_metrics(pred, truth);
      row.rmspe = m.rmspe;
      row.mpe = m.mpe;
      result.rows[static_cast<std::size_t>(job)] = row;
      if (on_row) {
#pragma omp critical(pkode_scaling_callback)
        on_row(result.rows[static_cast<std::size_t>(job)]);
      }
    } catch (...) {
#pragma omp critical(pkode_scaling_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t si = 0; si < sizes.size(); ++si) {
    std::vector<double> r, m;
    for (int rep = 0; rep < cfg.repeats; ++rep) {
      const auto& row = result.rows[si * static_cast<std::size_t>(cfg.repeats) + static_cast<std::size_t>(rep)];
      r.push_back(row.rmspe);
      m.push_back(row.mpe);
    }
    result.summary.push_back({sizes[si], mean_sd(r), mean_sd(m)});
  }
  return result;
}

void write_scaling_csv(std::ostream& out, const ScalingResult& result) {
  out << "kind,size,repeat,seed,rmspe_percent,rmspe_sd,mpe_percent,mpe_sd,mpe_fraction\n";
  for (const auto& row : result.rows) {
    out << "run," << row.size << ',' << row.repeat << ',' << row.seed << ',' << fmt("%.10g", row.rmspe) << ",,"
        << fmt("%.10g", row.mpe) << ",," << fmt("%.10g", row.mpe / 100.0) << '\n';
  }
  for (const auto& s : result.summary) {
    out << "summary," << s.size << ",,," << fmt("%.10g", s.rmspe.mean) << ',' << fmt("%.10g", s.rmspe.sd) << ','
        << fmt("%.10g", s.mpe.mean) << ',' << fmt("%.10g", s.mpe.sd) << ',' << fmt("%.10g", s.mpe.mean / 100.0)
        << '\n';
  }
}

}  // namespace pkode::evalbench

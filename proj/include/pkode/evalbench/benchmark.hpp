#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pkode/evalbench/metrics.hpp"
#include "pkode/latentode/train.hpp"
#include "pkode/mapbe/mapbe.hpp"
#include "pkode/pksim/population.hpp"

namespace pkode::evalbench {

inline constexpr const char* kLatentOde = "latent_ode";
inline constexpr const char* kMapBe = "map_be";

struct BenchmarkConfig {
  pksim::SimulationConfig simulation;  // scenario and population; the seed is replaced per run
  int runs = 10;
  std::size_t n_train = 200;
  std::size_t n_test = 800;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> run_seeds;  // empty: derived from `seed`
  latentode::ModelConfig model;
  latentode::TrainConfig train;          // the seed is replaced per run
  latentode::PredictOptions predict;
  mapbe::EstimatorConfig estimator;      // the seed is replaced per run

  void validate() const;
  std::uint64_t seed_for_run(int run) const;
};

nlohmann::json to_json(const BenchmarkConfig& cfg);

struct RunResult {
  int run = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport latent;
  MetricsReport mapbe;
  std::uint64_t sparse_hash = 0;  // FNV-1a over the test patients' sparse observations
  std::size_t mapbe_nonconverged = 0;
  double train_seconds = 0.0;
  std::vector<double> latent_auc;  // test patients, in order
  std::vector<double> mapbe_auc;
  std::vector<double> true_auc;
  std::vector<std::uint64_t> test_ids;
};

struct MethodSummary {
  MeanSd rmspe;
  MeanSd mpe;
};

struct BenchmarkResult {
  pksim::Scenario scenario = pksim::Scenario::correct;
  std::vector<RunResult> runs;  // in run-index order
  bool complete = false;
  MethodSummary latent;
  MethodSummary mapbe;
  std::optional<TTestResult> rmspe_test;  // latent minus MAP-BE; needs >= 2 completed runs
  std::optional<TTestResult> mpe_test;
};

/// FNV-1a over (id, times, values) of each record's sparse observations.
std::uint64_t sparse_hash(std::span<const pksim::PatientRecord> records);

/// One simulation run: fresh population, split, Latent ODE training, both
/// predictors on the test split. Throws on failure.
RunResult run_once(const BenchmarkConfig& cfg, int run);

/// All runs, parallel across runs; a failing run is recorded and the rest
/// continue. Summaries use completed runs only.
using RunCallback = std::function<void(const RunResult&)>;
BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const RunCallback& on_run = {});

/// Recomputes summaries and paired tests from the stored runs.
void summarize(BenchmarkResult& result);

/// Per-run rows: scenario, run, seed, status, method, n, rmspe, mpe (percent
/// and fraction), sparse hash, MAP-BE non-converged count, error text.
void write_runs_csv(std::ostream& out, std::span<const BenchmarkResult> results);
/// Per-patient rows for every run: scenario, run, id, true and predicted AUCs.
void write_patients_csv(std::ostream& out, std::span<const BenchmarkResult> results);
/// Markdown table: scenario x metric x method with mean +- SD and the paired test.
void write_summary(std::ostream& out, std::span<const BenchmarkResult> results);

struct ScalingConfig {
  std::vector<std::size_t> sizes = {25, 50, 100, 141};
  int repeats = 10;
  std::size_t n_test = 800;  // held out from the end of the dataset
  std::uint64_t seed = 1;
  latentode::ModelConfig model;
  latentode::TrainConfig train;
  latentode::PredictOptions predict;

  void validate() const;
};

nlohmann::json to_json(const ScalingConfig& cfg);

struct ScalingRow {
  std::size_t size = 0;
  int repeat = 0;
  std::uint64_t seed = 0;
  double rmspe = 0.0;
  double mpe = 0.0;
  double train_seconds = 0.0;
  std::vector<std::uint64_t> train_ids;
};

struct ScalingSummary {
  std::size_t size = 0;
  MeanSd rmspe;
  MeanSd mpe;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;          // ordered by size, then repeat
  std::vector<ScalingSummary> summary;   // sizes ascending
};

/// Trains one model per (size, repeat) on a subset drawn from the training
/// pool (every record not in the held-out tail) and scores it on the held-out
/// tail. Subsets are drawn independently per (size, repeat) and never overlap
/// the held-out set.
using ScalingCallback = std::function<void(const ScalingRow&)>;
ScalingResult size_scaling_study(std::span<const pksim::PatientRecord> records, const ScalingConfig& cfg,
                                 const ScalingCallback& on_row = {});

void write_scaling_csv(std::ostream& out, const ScalingResult& result);

}  // namespace pkode::evalbench

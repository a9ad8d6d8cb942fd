// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "pkode/latentode/model.hpp"
#include "pkode/mapbe/mapbe.hpp"
#include "pkode/pksim/population.hpp"

using namespace pkode;

namespace {

pksim::SimulationConfig sim_config() {
  pksim::SimulationConfig cfg;
  cfg.seed = 1;
  return cfg;
}

const std::vector<pksim::PatientRecord>& records() {
  static const auto recs = pksim::sample_population(64, sim_config());
  return recs;
}

void BM_SamplePopulationSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(pksim::sample_population_serial(32, sim_config()));
}

void BM_SamplePopulationParallel(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(pksim::sample_population(32, sim_config()));
}

void BM_FitPopulationSerial(benchmark::State& state) {
  const auto prior = mapbe::PriorSpec::from_population(sim_config().pop, sim_config().dosing);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mapbe::fit_population_serial(records(), prior, mapbe::EstimatorConfig{}));
  }
}

void BM_FitPopulationParallel(benchmark::State& state) {
  const auto prior = mapbe::PriorSpec::from_population(sim_config().pop, sim_config().dosing);
  for (auto _ : state) benchmark::DoNotOptimize(mapbe::fit_population(records(), prior, mapbe::EstimatorConfig{}));
}

const latentode::LatentOdeModel& model() {
  static const latentode::LatentOdeModel m(latentode::ModelConfig{}, latentode::Normalization::fit(records()), 1);
  return m;
}

void BM_PredictPopulationSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(latentode::predict_population_serial(model(), records()));
}

void BM_PredictPopulationParallel(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(latentode::predict_population(model(), records()));
}

}  // namespace

BENCHMARK(BM_SamplePopulationSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SamplePopulationParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_FitPopulationSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FitPopulationParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_PredictPopulationSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictPopulationParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();

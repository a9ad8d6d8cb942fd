#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>

#include "pkode/cli/config.hpp"
#include "pkode/evalbench/benchmark.hpp"
#include "pkode/latentode/latents.hpp"
#include "pkode/latentode/train.hpp"
#include "pkode/mapbe/mapbe.hpp"
#include "pkode/numcore/errors.hpp"
#include "pkode/pksim/dataset.hpp"

namespace fs = std::filesystem;
using namespace pkode;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  int workers = 0;
  bool quiet = false;
};

std::string command_line;

cli::RunConfig resolve_unchecked(const Common& common,
                                 const std::vector<std::pair<std::string, std::string>>& flags) {
  cli::RunConfig cfg = common.config_path.empty() ? cli::RunConfig{} : cli::load_config(common.config_path);
  for (const auto& kv : common.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cli::set_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [k, v] : flags) cli::set_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

// Configuration mistakes are usage errors, not runtime failures.
cli::RunConfig resolve(const Common& common, const std::vector<std::pair<std::string, std::string>>& flags) {
  try {
    return resolve_unchecked(common, flags);
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  } catch (const ContractViolation& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
}

void write_csv_preamble(std::ostream& out, const cli::RunConfig& cfg) {
  out << "# generator: " << pksim::kGeneratorVersion << '\n';
  out << "# command: " << command_line << '\n';
  out << "# seed: " << cfg.seed << '\n';
  std::istringstream lines(cli::emit_config(cfg));
  for (std::string line; std::getline(lines, line);) out << "# config: " << line << '\n';
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

nlohmann::json provenance(const cli::RunConfig& cfg) {
  return {{"generator", pksim::kGeneratorVersion},
          {"command", command_line},
          {"seed", cfg.seed},
          {"config", cli::to_json(cfg)}};
}

void log(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << '\n';
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

int cmd_simulate(const Common& common, const std::string& scenario, std::size_t n, const std::string& seed,
                 const fs::path& out_path) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (!scenario.empty()) flags.emplace_back("scenario", scenario);
  if (n > 0) flags.emplace_back("n", std::to_string(n));
  if (!seed.empty()) flags.emplace_back("seed", seed);
  const auto cfg = resolve(common, flags);
  pksim::SimulationConfig sim = cfg.simulation;
  sim.seed = cfg.seed;
  pksim::Dataset ds;
  ds.config = sim;
  ds.records = pksim::sample_population(cfg.n, sim);
  ds.provenance = provenance(cfg);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  pksim::write_dataset(out_path, ds);
  log(common, "simulated " + std::to_string(ds.records.size()) + " patients (" +
                  std::to_string(pksim::count_clipped(ds.records)) + " observations clipped at 0) -> " +
                  out_path.string());
  return 0;
}

int cmd_train(const Common& common, const fs::path& data, const std::string& seed, int epochs,
              const fs::path& out_path) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (!seed.empty()) flags.emplace_back("seed", seed);
  if (epochs > 0) flags.emplace_back("epochs", std::to_string(epochs));
  auto cfg = resolve(common, flags);
  const auto ds = pksim::read_dataset(data);
  latentode::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const int every = std::max(1, tc.epochs / 20);
  auto result = latentode::train(ds.records, cfg.model, tc, [&](const latentode::EpochStats& s) {
    if (s.epoch % every == 0 || s.epoch + 1 == tc.epochs) {
      log(common, "epoch " + std::to_string(s.epoch + 1) + "/" + std::to_string(tc.epochs) + "  elbo " +
                      fixed(s.mean_elbo, 4) + "  beta " + fixed(s.beta, 3) + "  lr " + fixed(s.learning_rate, 6));
    }
  });
  result.model.metadata["provenance"] = provenance(cfg);
  result.model.metadata["data"] = {{"path", data.string()}, {"records", ds.records.size()},
                                   {"provenance", ds.provenance}};
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : result.trace) trace.push_back(s.mean_elbo);
  result.model.metadata["elbo_trace"] = trace;
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  latentode::save_model(out_path, result.model);
  log(common, "trained on " + std::to_string(ds.records.size()) + " patients in " + fixed(result.seconds, 1) +
                  " s -> " + out_path.string());
  return 0;
}

void write_model_preamble(std::ostream& out, const latentode::LatentOdeModel& model, const fs::path& path) {
  out << "# model: " << path.string() << '\n';
  if (model.metadata.contains("provenance")) {
    out << "# model_command: " << model.metadata["provenance"].value("command", "") << '\n';
  }
}

int cmd_predict(const Common& common, const fs::path& model_path, const fs::path& data, int samples,
                const fs::path& out_path) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (samples >= 0) flags.emplace_back("posterior_samples", std::to_string(samples));
  const auto cfg = resolve(common, flags);
  const auto model = latentode::load_model(model_path);
  const auto ds = pksim::read_dataset(data);
  latentode::PredictOptions opts;
  opts.samples = cfg.posterior_samples;
  opts.seed = cfg.seed;
  opts.grid = ds.config.dosing;
  const auto auc = latentode::predict_population(model, ds.records, opts);
  auto out = open_out(out_path);
  write_csv_preamble(out, cfg);
  write_model_preamble(out, model, model_path);
  out << "id,true_auc,predicted_auc\n";
  out.precision(17);
  std::vector<double> truth;
  for (std::size_t i = 0; i < auc.size(); ++i) {
    out << ds.records[i].id << ',' << ds.records[i].true_auc << ',' << auc[i] << '\n';
    truth.push_back(ds.records[i].true_auc);
  }
  const auto m = evalbench::compute_metrics(auc, truth);
  log(common, "predicted " + std::to_string(auc.size()) + " patients: RMSPE " + fixed(m.rmspe, 2) + "%, MPE " +
                  fixed(m.mpe, 2) + "% -> " + out_path.string());
  return 0;
}

int cmd_mapbe(const Common& common, const fs::path& data, const fs::path& prior_path, const fs::path& out_path) {
  const auto cfg = resolve(common, {});
  const auto ds = pksim::read_dataset(data);
  mapbe::PriorSpec prior;
  if (prior_path.empty()) {
    prior = mapbe::PriorSpec::from_population(ds.config.pop, ds.config.dosing);
  } else {
    std::ifstream in(prior_path);
    if (!in) throw std::runtime_error("cannot open prior '" + prior_path.string() + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("prior '" + prior_path.string() + "': " + e.what());
    }
    prior = mapbe::prior_from_json(j);
  }
  mapbe::EstimatorConfig ec = cfg.estimator;
  ec.seed = cfg.seed;
  const auto fits = mapbe::fit_population(ds.records, prior, ec);
  auto out = open_out(out_path);
  write_csv_preamble(out, cfg);
  out << "# prior: " << mapbe::to_json(prior).dump() << '\n';
  out << "id,eta_ktr,eta_cl,eta_vc,eta_q,eta_vp,objective,converged,restarts,evaluations,true_auc,predicted_auc\n";
  out.precision(17);
  std::size_t failed = 0;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    const auto& f = fits[i];
    out << f.id;
    for (double e : f.estimate.eta_hat) out << ',' << e;
    out << ',' << f.estimate.objective_value << ',' << (f.estimate.converged ? 1 : 0) << ','
        << f.estimate.n_restarts_used << ',' << f.estimate.evaluations << ',' << ds.records[i].true_auc << ',';
    if (f.estimate.converged) {
      out << f.auc;
    } else {
      out << "nan";
      ++failed;
    }
    out << '\n';
  }
  log(common, "fitted " + std::to_string(fits.size()) + " patients (" + std::to_string(failed) +
                  " not converged) -> " + out_path.string());
  return 0;
}

int cmd_benchmark(const Common& common, const std::string& scenario, int runs, const std::string& seed,
                  const fs::path& out_dir) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (!scenario.empty()) flags.emplace_back("scenario", scenario);
  if (runs > 0) flags.emplace_back("runs", std::to_string(runs));
  if (!seed.empty()) flags.emplace_back("seed", seed);
  const auto cfg = resolve(common, flags);
  evalbench::BenchmarkConfig bc;
  bc.simulation = cfg.simulation;
  bc.runs = cfg.runs;
  bc.n_train = cfg.n_train;
  bc.n_test = cfg.n_test;
  bc.seed = cfg.seed;
  bc.model = cfg.model;
  bc.train = cfg.train;
  bc.predict.samples = cfg.posterior_samples;
  bc.predict.grid = cfg.simulation.dosing;
  bc.estimator = cfg.estimator;
  const evalbench::BenchmarkResult res = evalbench::run_benchmark(bc, [&](const evalbench::RunResult& r) {
    if (r.ok) {
      log(common, "run " + std::to_string(r.run + 1) + "/" + std::to_string(bc.runs) + ": latent ODE RMSPE " +
                      fixed(r.latent.rmspe, 2) + "%, MAP-BE RMSPE " + fixed(r.mapbe.rmspe, 2) + "% (train " +
                      fixed(r.train_seconds, 1) + " s)");
    } else {
      log(common, "run " + std::to_string(r.run + 1) + " failed: " + r.error);
    }
  });
  fs::create_directories(out_dir);
  const evalbench::BenchmarkResult all[] = {res};
  {
    auto out = open_out(out_dir / "runs.csv");
    write_csv_preamble(out, cfg);
    evalbench::write_runs_csv(out, all);
  }
  {
    auto out = open_out(out_dir / "patients.csv");
    write_csv_preamble(out, cfg);
    evalbench::write_patients_csv(out, all);
  }
  {
    auto out = open_out(out_dir / "summary.md");
    out << "<!-- generator: " << pksim::kGeneratorVersion << " | command: " << command_line << " -->\n\n";
    evalbench::write_summary(out, all);
  }
  {
    auto out = open_out(out_dir / "config.txt");
    out << "# command: " << command_line << '\n' << cli::emit_config(cfg);
  }
  std::ostringstream summary;
  evalbench::write_summary(summary, all);
  std::cout << summary.str();
  if (!res.complete) {
    std::cerr << "benchmark incomplete: some runs failed (see runs.csv)\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_scaling(const Common& common, const fs::path& data, const std::string& sizes, int repeats,
                const fs::path& out_path) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (!sizes.empty()) flags.emplace_back("sizes", sizes);
  if (repeats > 0) flags.emplace_back("repeats", std::to_string(repeats));
  const auto cfg = resolve(common, flags);
  const auto ds = pksim::read_dataset(data);
  evalbench::ScalingConfig sc;
  sc.sizes = cfg.sizes;
  sc.repeats = cfg.repeats;
  sc.n_test = cfg.n_test;
  sc.seed = cfg.seed;
  sc.model = cfg.model;
  sc.train = cfg.train;
  sc.predict.samples = cfg.posterior_samples;
  sc.predict.grid = ds.config.dosing;
  const auto res = evalbench::size_scaling_study(ds.records, sc, [&](const evalbench::ScalingRow& r) {
    log(common, "size " + std::to_string(r.size) + " repeat " + std::to_string(r.repeat + 1) + ": RMSPE " +
                    fixed(r.rmspe, 2) + "%");
  });
  auto out = open_out(out_path);
  write_csv_preamble(out, cfg);
  out << "# data: " << data.string() << '\n';
  evalbench::write_scaling_csv(out, res);
  for (const auto& s : res.summary) {
    std::cout << "size " << s.size << ": RMSPE " << fixed(s.rmspe.mean, 2) << " ± " << fixed(s.rmspe.sd, 2)
              << "%, MPE " << fixed(s.mpe.mean, 2) << " ± " << fixed(s.mpe.sd, 2) << "%\n";
  }
  return 0;
}

int cmd_latent(const Common& common, const fs::path& model_path, const fs::path& data, bool with_pca,
               const fs::path& out_path) {
  const auto cfg = resolve(common, {});
  const auto model = latentode::load_model(model_path);
  const auto ds = pksim::read_dataset(data);
  const auto rows = latentode::export_latents(model, ds.records);
  auto out = open_out(out_path);
  write_csv_preamble(out, cfg);
  write_model_preamble(out, model, model_path);
  if (with_pca) {
    const auto p = latentode::pca(latentode::latent_matrix(rows), 2);
    out << "# pca_explained_variance: " << p.explained_variance[0] << ',' << p.explained_variance[1] << '\n';
    out << "# pca_explained_ratio: " << p.explained_ratio[0] << ',' << p.explained_ratio[1] << '\n';
    latentode::write_latents_csv(out, rows, &p);
    log(common, "PCA explained variance ratio: " + fixed(p.explained_ratio[0], 3) + ", " +
                    fixed(p.explained_ratio[1], 3));
  } else {
    latentode::write_latents_csv(out, rows);
  }
  log(common, "exported " + std::to_string(rows.size()) + " latent rows -> " + out_path.string());
  return 0;
}

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("--config", common.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--set", common.overrides, "override one configuration key (key=value), repeatable");
  sub->add_option("--workers", common.workers, "worker threads (default: $PKODE_WORKERS or all cores)")
      ->check(CLI::PositiveNumber);
  sub->add_flag("--quiet", common.quiet, "suppress progress messages");
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Latent ODE and MAP-BE pipeline for AUC prediction from sparse concentration samples"};
  app.set_version_flag("--version", pksim::kGeneratorVersion);
  app.require_subcommand(1);
  Common common;

  std::string scenario, seed, sizes;
  std::size_t n = 0;
  int epochs = 0, runs = 0, repeats = 0, samples = -1;
  bool with_pca = false;
  fs::path out, data, model, prior;

  auto* simulate = app.add_subcommand("simulate", "simulate a patient population to a dataset file");
  simulate->add_option("--scenario", scenario, "1 (correct), 2 (unaccounted covariate), 3 (Michaelis-Menten)");
  simulate->add_option("--n", n, "number of patients")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", seed, "64-bit seed");
  simulate->add_option("--out", out, "dataset path (JSON lines)")->required();

  auto* train = app.add_subcommand("train", "train a latent ODE model on a dataset");
  train->add_option("--data", data, "dataset path")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "training seed");
  train->add_option("--epochs", epochs, "override the epoch count")->check(CLI::PositiveNumber);
  train->add_option("--out", out, "checkpoint path")->required();

  auto* predict = app.add_subcommand("predict", "predict AUCs from the sparse samples of a dataset");
  predict->add_option("--model", model, "checkpoint path")->required()->check(CLI::ExistingFile);
  predict->add_option("--data", data, "dataset path")->required()->check(CLI::ExistingFile);
  predict->add_option("--samples", samples, "average over this many posterior draws (0: posterior mean)")
      ->check(CLI::NonNegativeNumber);
  predict->add_option("--out", out, "CSV path")->required();

  auto* mapbe_cmd = app.add_subcommand("mapbe", "MAP Bayesian estimation and AUC for every patient of a dataset");
  mapbe_cmd->add_option("--data", data, "dataset path")->required()->check(CLI::ExistingFile);
  mapbe_cmd->add_option("--prior", prior, "prior specification JSON (default: the dataset's population)")
      ->check(CLI::ExistingFile);
  mapbe_cmd->add_option("--out", out, "CSV path")->required();

  auto* bench = app.add_subcommand("benchmark", "repeated simulate / train / compare runs for one scenario");
  bench->add_option("--scenario", scenario, "1, 2 or 3");
  bench->add_option("--runs", runs, "number of runs")->check(CLI::PositiveNumber);
  bench->add_option("--seed", seed, "base seed");
  bench->add_option("--out", out, "output directory")->required();

  auto* scaling = app.add_subcommand("scaling", "latent ODE accuracy against training-set size");
  scaling->add_option("--data", data, "dataset path")->required()->check(CLI::ExistingFile);
  scaling->add_option("--sizes", sizes, "comma-separated training sizes");
  scaling->add_option("--repeats", repeats, "models per size")->check(CLI::PositiveNumber);
  scaling->add_option("--out", out, "CSV path")->required();

  auto* latent = app.add_subcommand("latent", "export posterior means of z0, optionally with a 2-D PCA");
  latent->add_option("--model", model, "checkpoint path")->required()->check(CLI::ExistingFile);
  latent->add_option("--data", data, "dataset path")->required()->check(CLI::ExistingFile);
  latent->add_flag("--pca", with_pca, "append the first two principal components");
  latent->add_option("--out", out, "CSV path")->required();

  for (auto* sub : {simulate, train, predict, mapbe_cmd, bench, scaling, latent}) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  int workers = common.workers;
  if (workers == 0) {
    if (const char* env = std::getenv("PKODE_WORKERS")) {
      try {
        workers = std::stoi(env);
      } catch (const std::exception&) {
        std::cerr << "error: PKODE_WORKERS must be a positive integer\n";
        return kExitUsage;
      }
      if (workers < 1) {
        std::cerr << "error: PKODE_WORKERS must be a positive integer\n";
        return kExitUsage;
      }
    }
  }
  if (workers > 0) omp_set_num_threads(workers);

  try {
    if (*simulate) return cmd_simulate(common, scenario, n, seed, out);
    if (*train) return cmd_train(common, data, seed, epochs, out);
    if (*predict) return cmd_predict(common, model, data, samples, out);
    if (*mapbe_cmd) return cmd_mapbe(common, data, prior, out);
    if (*bench) return cmd_benchmark(common, scenario, runs, seed, out);
    if (*scaling) return cmd_scaling(common, data, sizes, repeats, out);
    if (*latent) return cmd_latent(common, model, data, with_pca, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

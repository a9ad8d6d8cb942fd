#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pkode/numcore/diff_graph.hpp"
#include "pkode/numcore/nn.hpp"
#include "pkode/numcore/ode.hpp"
#include "pkode/pksim/population.hpp"

namespace pkode::latentode {

using numcore::DiffGraph;
using numcore::Matrix;
using numcore::Var;
using numcore::Vector;

/// Bumped whenever the checkpoint header or parameter layout changes.
inline constexpr int kModelSchemaVersion = 1;

/// Number of covariate features fed to the encoder: CYP3A5 status,
/// formulation, normalized dose.
inline constexpr Eigen::Index kCovariateFeatures = 3;

struct ModelConfig {
  Eigen::Index latent_dim = 10;
  Eigen::Index gmm_components = 4;
  Eigen::Index gru_hidden = 100;
  Eigen::Index dynamics_hidden = 100;
  Eigen::Index encoder_ode_hidden = 100;
  Eigen::Index covariate_hidden = 100;
  bool time_input = true;         // false: autonomous latent dynamics f(z)
  double encoder_step = 0.1;      // Euler step of the encoder ODE, normalized time
  double train_step_hours = 0.25; // RK4 step of the generator during training
  numcore::SolverConfig predict_solver{numcore::SolverMethod::dopri5, 0.25, 1e-6, 1e-8, 100000};
  double sigma_obs_init = 0.5;    // normalized concentration units

  void validate() const;
};

/// Frozen transforms between clinical and network units. Times are divided by
/// `time_scale`; concentrations go through log1p and are z-scored; dose is
/// z-scored.
struct Normalization {
  double time_scale = 24.0;
  double conc_mean = 0.0;
  double conc_sd = 1.0;
  double dose_mean = 0.0;
  double dose_sd = 1.0;

  /// Statistics over every sparse and rich observation and every dose of the
  /// given records.
  static Normalization fit(std::span<const pksim::PatientRecord> records);

  double time(double hours) const { return hours / time_scale; }
  double conc(double ng_ml) const;
  double conc_inverse(double normalized) const;  // clipped at 0 ng/mL
  double dose(double mg) const { return (mg - dose_mean) / dose_sd; }
};

struct GmmPrior {
  Vector weights;     // K, sums to 1
  Matrix means;       // K x D
  Matrix variances;   // K x D, positive
};

struct PosteriorZ0 {
  Vector mean;  // D
  Vector sd;    // D, positive
};

/// log sum_k pi_k N(z | mu_k, diag(var_k)), via log-sum-exp.
double prior_log_density(const GmmPrior& prior, const Vector& z);

/// Single-sample Monte Carlo estimate of KL(q || p): log q(z) - log p(z).
double kl_estimate(const PosteriorZ0& posterior, const GmmPrior& prior, const Vector& z);

class LatentOdeModel {
 public:
  LatentOdeModel() = default;
  LatentOdeModel(ModelConfig cfg, Normalization norm, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  const Normalization& normalization() const noexcept { return norm_; }
  const numcore::ParameterStore& params() const noexcept { return params_; }
  numcore::ParameterStore& params() noexcept { return params_; }

  numcore::MlpSpec covariate_mlp() const;
  numcore::GruSpec gru() const;
  numcore::MlpSpec encoder_ode() const;
  numcore::MlpSpec dynamics() const;

  GmmPrior prior() const;
  double sigma_obs() const;

  /// Free-form JSON stored alongside the parameters (training config, data
  /// provenance). Not interpreted by the model.
  nlohmann::json metadata = nlohmann::json::object();

 private:
  friend LatentOdeModel load_model(const std::filesystem::path& path);
  friend LatentOdeModel decode_model(std::string_view bytes);

  ModelConfig cfg_;
  Normalization norm_;
  numcore::ParameterStore params_;
};

/// Mini-batch in network units. Observation times are the sorted union over
/// the batch; a patient missing a time has mask 0 there.
struct Batch {
  std::vector<std::uint64_t> ids;
  Matrix covariates;            // B x 3
  std::vector<double> enc_times;  // normalized, increasing
  Matrix enc_values;            // B x T
  Matrix enc_mask;              // B x T
  std::vector<double> rec_times;  // normalized, increasing
  Matrix rec_values;            // B x M
  Matrix rec_mask;              // B x M

  Eigen::Index size() const { return covariates.rows(); }
};

/// Builds a batch. The encoder reads each record's sparse set; targets are
/// its rich set. Inputs are sorted by time, so storage order does not matter.
Batch make_batch(const LatentOdeModel& model, std::span<const pksim::PatientRecord* const> records);
Batch make_encoder_batch(const LatentOdeModel& model, const pksim::ObservationSet& sparse,
                         const pksim::PatientCovariates& cov);

struct EncodedBatch {
  Var mean;  // B x D
  Var sd;    // B x D
};

/// ODE-RNN encoder: covariate MLP sets the hidden state, observations are read
/// latest first, and between observation times the hidden state follows a
/// learned ODE integrated backwards by Euler. A linear head maps the final
/// state to (mean, softplus scale).
EncodedBatch encode(DiffGraph& g, const LatentOdeModel& model, const Batch& batch);
PosteriorZ0 encode(const LatentOdeModel& model, const pksim::ObservationSet& sparse,
                   const pksim::PatientCovariates& cov);

/// log p(z) under the mixture prior, one row per sample (B x 1).
Var prior_log_density(DiffGraph& g, const LatentOdeModel& model, Var z);
/// log q(z) under the diagonal Gaussian posterior (B x 1).
Var posterior_log_density(DiffGraph& g, Var z, Var mean, Var sd);

/// Latent trajectory on the graph (fixed-step RK4), decoded to normalized
/// concentrations at each of `times` (normalized, non-decreasing, >= 0).
std::vector<Var> decode_on_graph(DiffGraph& g, const LatentOdeModel& model, Var z0, std::span<const double> times);

/// Decoded concentrations (ng/mL) at `query_hours` with the adaptive
/// prediction solver.
std::vector<double> decode_trajectory(const LatentOdeModel& model, const Vector& z0,
                                      std::span<const double> query_hours);
std::vector<double> decode_trajectory(const LatentOdeModel& model, const Vector& z0,
                                      std::span<const double> query_hours, const numcore::SolverConfig& solver);

struct ElboTerms {
  Var objective;        // 1 x 1, mean over the batch of the per-patient ELBO
  Var per_patient;      // B x 1
  Var reconstruction;   // B x 1
  Var kl;               // B x 1
};

/// ELBO with reparameterized z0 = mean + sd * eps; eps is B x D.
ElboTerms elbo(DiffGraph& g, const LatentOdeModel& model, const Batch& batch, const Matrix& eps, double beta);
Matrix draw_eps(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

/// Mean per-patient ELBO over `records`, one batch per patient. Thread-safe.
double mean_elbo(const LatentOdeModel& model, std::span<const pksim::PatientRecord> records, double beta,
                 std::uint64_t seed);

struct PredictOptions {
  int samples = 0;  // 0: posterior mean; S > 0: average AUC over S posterior draws
  std::uint64_t seed = 0;
  pksim::DosingProtocol grid;  // only grid_step and interval are used
};

double predict_auc(const LatentOdeModel& model, const pksim::ObservationSet& sparse,
                   const pksim::PatientCovariates& cov, const PredictOptions& opts = {});

/// OpenMP-parallel over patients; results in input order.
std::vector<double> predict_population(const LatentOdeModel& model, std::span<const pksim::PatientRecord> records,
                                       const PredictOptions& opts = {});
std::vector<double> predict_population_serial(const LatentOdeModel& model,
                                              std::span<const pksim::PatientRecord> records,
                                              const PredictOptions& opts = {});

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Normalization& norm);
Normalization normalization_from_json(const nlohmann::json& j);

std::string encode_model(const LatentOdeModel& model);
LatentOdeModel decode_model(std::string_view bytes);
void save_model(const std::filesystem::path& path, const LatentOdeModel& model);
/// Throws ParseError naming both versions when the schema version differs.
LatentOdeModel load_model(const std::filesystem::path& path);

}  // namespace pkode::latentode

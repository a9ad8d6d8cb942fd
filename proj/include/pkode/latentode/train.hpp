#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "pkode/latentode/model.hpp"

namespace pkode::latentode {

struct TrainConfig {
  int epochs = 150;
  int batch_size = 50;
  double learning_rate = 1e-2;
  double final_lr_fraction = 0.01;  // cosine decay ends at learning_rate * this
  double kl_anneal_fraction = 0.2;  // beta ramps 0 -> 1 over this share of epochs
  int mc_samples = 1;
  double grad_clip = 10.0;          // global L2 norm; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  double learning_rate_at(int epoch) const;
  double beta_at(int epoch) const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochStats {
  int epoch = 0;
  double mean_elbo = 0.0;  // per patient, at this epoch's beta
  double beta = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  LatentOdeModel model;
  std::vector<EpochStats> trace;
  double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Adam ascent on the mini-batch ELBO. Deterministic for a fixed seed and
/// record order. Normalization statistics are fitted on `records` and frozen
/// in the returned model. Throws std::runtime_error naming the epoch and batch
/// if the loss becomes non-finite.
TrainResult train(std::span<const pksim::PatientRecord> records, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Continues training an existing model; its normalization is kept.
TrainResult train(LatentOdeModel model, std::span<const pksim::PatientRecord> records, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace pkode::latentode

#include "pkode/latentode/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include "pkode/numcore/errors.hpp"

namespace pkode::latentode {

void TrainConfig::validate() const {
  require(epochs >= 1, "TrainConfig: epochs must be >= 1");
  require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
  require(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0, "TrainConfig: final_lr_fraction must be in (0, 1]");
  require(kl_anneal_fraction >= 0.0 && kl_anneal_fraction <= 1.0,
          "TrainConfig: kl_anneal_fraction must be in [0, 1]");
  require(mc_samples >= 1, "TrainConfig: mc_samples must be >= 1");
  require(grad_clip >= 0.0, "TrainConfig: grad_clip must be >= 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "TrainConfig: Adam betas must be in [0, 1)");
  require(adam_eps > 0.0, "TrainConfig: adam_eps must be > 0");
}

double TrainConfig::learning_rate_at(int epoch) const {
  const double progress = epochs > 1 ? static_cast<double>(epoch) / static_cast<double>(epochs - 1) : 0.0;
  const double floor = learning_rate * final_lr_fraction;
  return floor + 0.5 * (learning_rate - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

double TrainConfig::beta_at(int epoch) const {
  const double ramp = kl_anneal_fraction * static_cast<double>(epochs);
  if (ramp <= 0.0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / ramp);
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"learning_rate", cfg.learning_rate},
      {"final_lr_fraction", cfg.final_lr_fraction},
      {"kl_anneal_fraction", cfg.kl_anneal_fraction},
      {"mc_samples", cfg.mc_samples},
      {"grad_clip", cfg.grad_clip},
      {"adam_beta1", cfg.adam_beta1},
      {"adam_beta2", cfg.adam_beta2},
      {"adam_eps", cfg.adam_eps},
      {"seed", cfg.seed},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.final_lr_fraction = j.at("final_lr_fraction").get<double>();
  c.kl_anneal_fraction = j.at("kl_anneal_fraction").get<double>();
  c.mc_samples = j.at("mc_samples").get<int>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

namespace {

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

void check_prior(const LatentOdeModel& model, int epoch) {
  const GmmPrior p = model.prior();
  if (!(std::abs(p.weights.sum() - 1.0) < 1e-9) || !(p.weights.minCoeff() > 0.0) ||
      !(p.variances.minCoeff() > 0.0)) {
    throw std::runtime_error("training: invalid mixture prior after epoch " + std::to_string(epoch + 1));
  }
}

}  // namespace

TrainResult train(std::span<const pksim::PatientRecord> records, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  require(!records.empty(), "train: dataset is empty");
  cfg.validate();
  LatentOdeModel model(model_cfg, Normalization::fit(records), cfg.seed);
  return train(std::move(model), records, cfg, on_epoch);
}

TrainResult train(LatentOdeModel model, std::span<const pksim::PatientRecord> records, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  require(!records.empty(), "train: dataset is empty");
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();

  auto& store = model.params();
  const auto& entries = store.entries();
  AdamState adam;
  for (const auto& e : entries) {
    adam.m.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
    adam.v.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
  }

  std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  const Eigen::Index dim = model.config().latent_dim;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double beta = cfg.beta_at(epoch);
    const double lr = cfg.learning_rate_at(epoch);
    double elbo_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += batch_size, ++batch_index) {
      const std::size_t hi = std::min(order.size(), lo + batch_size);
      std::vector<const pksim::PatientRecord*> members;
      for (std::size_t i = lo; i < hi; ++i) members.push_back(&records[order[i]]);
      const Batch batch = make_batch(model, members);

      DiffGraph g;
      std::vector<Var> objectives;
      std::vector<double> weights;
      double batch_elbo = 0.0;
      for (int s = 0; s < cfg.mc_samples; ++s) {
        const auto terms = elbo(g, model, batch, draw_eps(batch.size(), dim, rng), beta);
        objectives.push_back(terms.objective);
        weights.push_back(-1.0 / cfg.mc_samples);
        batch_elbo += g.value(terms.objective)(0, 0) / cfg.mc_samples;
      }
      if (!std::isfinite(batch_elbo)) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(batch_index + 1));
      }
      Var loss = g.weighted_sum(objectives, weights);
      g.backward(loss);

      std::vector<Matrix> grads;
      grads.reserve(entries.size());
      double norm_sq = 0.0;
      const auto& nodes = g.parameter_nodes();
      for (const auto& e : entries) {
        auto it = nodes.find(e.name);
        grads.push_back(it == nodes.end() ? Matrix::Zero(e.value.rows(), e.value.cols())
                                          : g.adjoint(Var{it->second}));
        norm_sq += grads.back().squaredNorm();
      }
      if (!std::isfinite(norm_sq)) {
        throw std::runtime_error("training diverged: non-finite gradient at epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(batch_index + 1));
      }
      const double norm = std::sqrt(norm_sq);
      const double clip = cfg.grad_clip > 0.0 && norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;

      ++adam.step;
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.step));
      for (std::size_t i = 0; i < entries.size(); ++i) {
        const Matrix grad = grads[i] * clip;
        adam.m[i] = cfg.adam_beta1 * adam.m[i] + (1.0 - cfg.adam_beta1) * grad;
        adam.v[i] = cfg.adam_beta2 * adam.v[i] + (1.0 - cfg.adam_beta2) * grad.cwiseAbs2();
        Matrix& value = store.get(entries[i].name);
        value.array() -= lr * (adam.m[i].array() / bc1) / ((adam.v[i].array() / bc2).sqrt() + cfg.adam_eps);
      }
      elbo_sum += batch_elbo * static_cast<double>(hi - lo);
    }
    check_prior(model, epoch);
    EpochStats stats{epoch, elbo_sum / static_cast<double>(records.size()), beta, lr};
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  model.metadata["train_config"] = to_json(cfg);
  model.metadata["train_patients"] = records.size();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.model = std::move(model);
  return result;
}

}  // namespace pkode::latentode

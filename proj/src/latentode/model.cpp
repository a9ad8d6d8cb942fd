#include "pkode/latentode/model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <set>

#include "pkode/numcore/errors.hpp"
#include "pkode/numcore/quadrature.hpp"

namespace pkode::latentode {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)
constexpr double kVarianceFloor = 1e-6;
constexpr double kSdFloor = 1e-6;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

std::string indexed(const char* prefix, Eigen::Index k) { return std::string(prefix) + std::to_string(k); }

Var ones_like_row(DiffGraph& g, Eigen::Index cols) { return g.constant(Matrix::Ones(1, cols)); }

}  // namespace

void ModelConfig::validate() const {
  require(latent_dim >= 1, "ModelConfig: latent_dim must be >= 1");
  require(gmm_components >= 1, "ModelConfig: gmm_components must be >= 1");
  require(gru_hidden >= 1 && dynamics_hidden >= 1 && encoder_ode_hidden >= 1 && covariate_hidden >= 1,
          "ModelConfig: hidden sizes must be >= 1");
  require(encoder_step > 0.0, "ModelConfig: encoder_step must be > 0");
  require(train_step_hours > 0.0, "ModelConfig: train_step_hours must be > 0");
  require(sigma_obs_init > 0.0, "ModelConfig: sigma_obs_init must be > 0");
  predict_solver.validate();
}

double Normalization::conc(double ng_ml) const { return (std::log1p(std::max(ng_ml, 0.0)) - conc_mean) / conc_sd; }

double Normalization::conc_inverse(double normalized) const {
  return std::max(std::expm1(normalized * conc_sd + conc_mean), 0.0);
}

Normalization Normalization::fit(std::span<const pksim::PatientRecord> records) {
  require(!records.empty(), "Normalization::fit: no records");
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;
  double dose_sum = 0.0;
  double dose_sq = 0.0;
  for (const auto& rec : records) {
    for (const auto* set : {&rec.sparse, &rec.rich}) {
      for (double c : set->values) {
        const double v = std::log1p(std::max(c, 0.0));
        sum += v;
        sum_sq += v * v;
        ++n;
      }
    }
    dose_sum += rec.covariates.dose;
    dose_sq += rec.covariates.dose * rec.covariates.dose;
  }
  require(n > 0, "Normalization::fit: records carry no observations");
  Normalization norm;
  const auto nd = static_cast<double>(n);
  const auto nr = static_cast<double>(records.size());
  norm.conc_mean = sum / nd;
  const double conc_var = sum_sq / nd - norm.conc_mean * norm.conc_mean;
  norm.conc_sd = conc_var > 1e-12 ? std::sqrt(conc_var) : 1.0;
  norm.dose_mean = dose_sum / nr;
  const double dose_var = dose_sq / nr - norm.dose_mean * norm.dose_mean;
  norm.dose_sd = dose_var > 1e-12 ? std::sqrt(dose_var) : 1.0;
  return norm;
}

double prior_log_density(const GmmPrior& prior, const Vector& z) {
  const Eigen::Index k_count = prior.means.rows();
  require(z.size() == prior.means.cols(), "prior_log_density: dimension mismatch");
  require(z.allFinite(), "prior_log_density: z must be finite");
  Vector terms(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    double q = 0.0;
    double logdet = 0.0;
    for (Eigen::Index d = 0; d < z.size(); ++d) {
      const double diff = z[d] - prior.means(k, d);
      q += diff * diff / prior.variances(k, d);
      logdet += std::log(prior.variances(k, d));
    }
    terms[k] = std::log(prior.weights[k]) - 0.5 * (q + logdet + static_cast<double>(z.size()) * kLog2Pi);
  }
  const double m = terms.maxCoeff();
  return m + std::log((terms.array() - m).exp().sum());
}

double kl_estimate(const PosteriorZ0& posterior, const GmmPrior& prior, const Vector& z) {
  double log_q = 0.0;
  for (Eigen::Index d = 0; d < z.size(); ++d) {
    const double u = (z[d] - posterior.mean[d]) / posterior.sd[d];
    log_q += -0.5 * u * u - std::log(posterior.sd[d]) - 0.5 * kLog2Pi;
  }
  return log_q - prior_log_density(prior, z);
}

LatentOdeModel::LatentOdeModel(ModelConfig cfg, Normalization norm, std::uint64_t seed)
    : cfg_(std::move(cfg)), norm_(norm) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  numcore::init_mlp(params_, "cov", covariate_mlp(), rng);
  numcore::init_gru(params_, "gru", gru(), rng);
  numcore::init_mlp(params_, "enc_ode", encoder_ode(), rng);
  numcore::init_mlp(params_, "head", numcore::MlpSpec{{cfg_.gru_hidden, 2 * cfg_.latent_dim}}, rng);
  numcore::init_mlp(params_, "dyn", dynamics(), rng);
  numcore::init_mlp(params_, "dec", numcore::MlpSpec{{cfg_.latent_dim, 1}}, rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  params_.add("gmm.logits", Matrix::Zero(1, cfg_.gmm_components));
  for (Eigen::Index k = 0; k < cfg_.gmm_components; ++k) {
    Matrix mean(1, cfg_.latent_dim);
    for (Eigen::Index d = 0; d < cfg_.latent_dim; ++d) mean(0, d) = normal(rng);
    params_.add(indexed("gmm.mean", k), std::move(mean));
    params_.add(indexed("gmm.var", k), Matrix::Constant(1, cfg_.latent_dim, softplus_inverse(1.0)));
  }
  params_.add("obs.sigma", Matrix::Constant(1, 1, softplus_inverse(cfg_.sigma_obs_init)));
}

numcore::MlpSpec LatentOdeModel::covariate_mlp() const {
  return {{kCovariateFeatures, cfg_.covariate_hidden, cfg_.gru_hidden},
          numcore::Activation::tanh,
          numcore::Activation::tanh};
}

numcore::GruSpec LatentOdeModel::gru() const { return {2, cfg_.gru_hidden}; }

numcore::MlpSpec LatentOdeModel::encoder_ode() const {
  return {{cfg_.gru_hidden, cfg_.encoder_ode_hidden, cfg_.gru_hidden}};
}

numcore::MlpSpec LatentOdeModel::dynamics() const {
  return {{cfg_.latent_dim + (cfg_.time_input ? 1 : 0), cfg_.dynamics_hidden, cfg_.latent_dim}};
}

GmmPrior LatentOdeModel::prior() const {
  GmmPrior p;
  const Eigen::Index k_count = cfg_.gmm_components;
  const Matrix& logits = params_.get("gmm.logits");
  const double m = logits.maxCoeff();
  p.weights = (logits.row(0).array() - m).exp().transpose();
  p.weights /= p.weights.sum();
  p.means.resize(k_count, cfg_.latent_dim);
  p.variances.resize(k_count, cfg_.latent_dim);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    p.means.row(k) = params_.get(indexed("gmm.mean", k)).row(0);
    p.variances.row(k) = params_.get(indexed("gmm.var", k)).row(0).unaryExpr(&softplus).array() + kVarianceFloor;
  }
  return p;
}

double LatentOdeModel::sigma_obs() const { return softplus(params_.get("obs.sigma")(0, 0)) + kSdFloor; }

namespace {

struct Sorted {
  std::vector<double> times;
  std::vector<double> values;
};

Sorted sorted_observations(const pksim::ObservationSet& obs, const char* what) {
  require(obs.times.size() == obs.values.size(), std::string(what) + ": times and values differ in length");
  std::vector<std::size_t> order(obs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return obs.times[a] < obs.times[b]; });
  Sorted s;
  for (auto i : order) {
    require(std::isfinite(obs.times[i]) && obs.times[i] >= 0.0, std::string(what) + ": times must be >= 0");
    require(std::isfinite(obs.values[i]), std::string(what) + ": values must be finite");
    require(s.times.empty() || obs.times[i] > s.times.back(), std::string(what) + ": duplicate observation time");
    s.times.push_back(obs.times[i]);
    s.values.push_back(obs.values[i]);
  }
  return s;
}

void fill_block(const Normalization& norm, const std::vector<Sorted>& sets, std::vector<double>& times,
                Matrix& values, Matrix& mask) {
  std::set<double> all;
  for (const auto& s : sets) all.insert(s.times.begin(), s.times.end());
  std::vector<double> hours(all.begin(), all.end());
  const auto rows = static_cast<Eigen::Index>(sets.size());
  const auto cols = static_cast<Eigen::Index>(hours.size());
  values = Matrix::Zero(rows, cols);
  mask = Matrix::Zero(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& s = sets[static_cast<std::size_t>(r)];
    for (std::size_t j = 0; j < s.times.size(); ++j) {
      const auto c = std::lower_bound(hours.begin(), hours.end(), s.times[j]) - hours.begin();
      values(r, c) = norm.conc(s.values[j]);
      mask(r, c) = 1.0;
    }
  }
  times.clear();
  for (double h : hours) times.push_back(norm.time(h));
}

Matrix covariate_row(const Normalization& norm, const pksim::PatientCovariates& cov) {
  Matrix row(1, kCovariateFeatures);
  row << static_cast<double>(cov.cyp), static_cast<double>(cov.st), norm.dose(cov.dose);
  return row;
}

}  // namespace

Batch make_batch(const LatentOdeModel& model, std::span<const pksim::PatientRecord* const> records) {
  require(!records.empty(), "make_batch: no records");
  const auto& norm = model.normalization();
  Batch b;
  b.covariates.resize(static_cast<Eigen::Index>(records.size()), kCovariateFeatures);
  std::vector<Sorted> enc;
  std::vector<Sorted> rec;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = *records[i];
    require(!r.sparse.empty(), "make_batch: patient " + std::to_string(r.id) + " has no sparse observations");
    require(!r.rich.empty(), "make_batch: patient " + std::to_string(r.id) + " has no rich observations");
    b.ids.push_back(r.id);
    b.covariates.row(static_cast<Eigen::Index>(i)) = covariate_row(norm, r.covariates);
    enc.push_back(sorted_observations(r.sparse, "sparse observations"));
    rec.push_back(sorted_observations(r.rich, "rich observations"));
  }
  fill_block(norm, enc, b.enc_times, b.enc_values, b.enc_mask);
  fill_block(norm, rec, b.rec_times, b.rec_values, b.rec_mask);
  return b;
}

Batch make_encoder_batch(const LatentOdeModel& model, const pksim::ObservationSet& sparse,
                         const pksim::PatientCovariates& cov) {
  require(!sparse.empty(), "encode: empty observation set");
  Batch b;
  b.ids.push_back(0);
  b.covariates = covariate_row(model.normalization(), cov);
  fill_block(model.normalization(), {sorted_observations(sparse, "sparse observations")}, b.enc_times,
             b.enc_values, b.enc_mask);
  return b;
}

EncodedBatch encode(DiffGraph& g, const LatentOdeModel& model, const Batch& batch) {
  require(!batch.enc_times.empty(), "encode: empty observation set");
  const auto& store = model.params();
  const auto& cfg = model.config();
  const Eigen::Index rows = batch.size();
  const auto gru = model.gru();
  const auto ode = model.encoder_ode();
  const numcore::GraphRhs rhs = [&](DiffGraph& gg, double, Var h) {
    return numcore::mlp_forward(gg, store, "enc_ode", ode, h);
  };

  Var h = numcore::mlp_forward(g, store, "cov", model.covariate_mlp(), g.constant(batch.covariates));
  for (auto j = static_cast<Eigen::Index>(batch.enc_times.size()) - 1; j >= 0; --j) {
    const double t = batch.enc_times[static_cast<std::size_t>(j)];
    Matrix x(rows, 2);
    x.col(0) = batch.enc_values.col(j);
    x.col(1).setConstant(t);
    Var updated = numcore::gru_step(g, store, "gru", gru, h, g.constant(std::move(x)));
    if (batch.enc_mask.col(j).minCoeff() == 1.0) {
      h = updated;
    } else {
      h = g.add(h, g.mul_col(g.sub(updated, h), g.constant(Matrix(batch.enc_mask.col(j)))));
    }
    const double next = j > 0 ? batch.enc_times[static_cast<std::size_t>(j - 1)] : 0.0;
    if (next < t) {
      const double target[] = {next};
      h = numcore::solve_fixed_at(g, rhs, h, t, target, numcore::SolverMethod::euler, cfg.encoder_step)[0];
    }
  }
  Var out = numcore::mlp_forward(g, store, "head", numcore::MlpSpec{{cfg.gru_hidden, 2 * cfg.latent_dim}}, h);
  EncodedBatch enc;
  enc.mean = g.slice_cols(out, 0, cfg.latent_dim);
  enc.sd = g.add_scalar(g.softplus(g.slice_cols(out, cfg.latent_dim, cfg.latent_dim)), kSdFloor);
  return enc;
}

PosteriorZ0 encode(const LatentOdeModel& model, const pksim::ObservationSet& sparse,
                   const pksim::PatientCovariates& cov) {
  const Batch b = make_encoder_batch(model, sparse, cov);
  DiffGraph g;
  const EncodedBatch enc = encode(g, model, b);
  return PosteriorZ0{g.value(enc.mean).row(0).transpose(), g.value(enc.sd).row(0).transpose()};
}

Var prior_log_density(DiffGraph& g, const LatentOdeModel& model, Var z) {
  const auto& store = model.params();
  const Eigen::Index k_count = model.config().gmm_components;
  const Eigen::Index dim = model.config().latent_dim;
  require(g.value(z).cols() == dim, "prior_log_density: z has wrong width");
  Var logits = g.parameter(store, "gmm.logits");
  Var log_weights = g.sub(logits, g.mul_col(ones_like_row(g, k_count), g.row_logsumexp(logits)));
  Var ones = ones_like_row(g, dim);
  std::vector<Var> comps;
  comps.reserve(static_cast<std::size_t>(k_count));
  for (Eigen::Index k = 0; k < k_count; ++k) {
    Var mean = g.parameter(store, indexed("gmm.mean", k));
    Var var = g.add_scalar(g.softplus(g.parameter(store, indexed("gmm.var", k))), kVarianceFloor);
    Var diff = g.add_row(z, g.scale(mean, -1.0));
    Var q = g.row_sum(g.mul_row(g.square(diff), g.div(ones, var)));
    Var offset = g.add_scalar(g.scale(g.sum(g.log(var)), -0.5), -0.5 * static_cast<double>(dim) * kLog2Pi);
    comps.push_back(g.add_row(g.scale(q, -0.5), offset));
  }
  return g.row_logsumexp(g.add_row(g.concat_cols(comps), log_weights));
}

Var posterior_log_density(DiffGraph& g, Var z, Var mean, Var sd) {
  const auto dim = g.value(z).cols();
  Var u = g.div(g.sub(z, mean), sd);
  Var quad = g.scale(g.row_sum(g.square(u)), -0.5);
  return g.add_scalar(g.sub(quad, g.row_sum(g.log(sd))), -0.5 * static_cast<double>(dim) * kLog2Pi);
}

std::vector<Var> decode_on_graph(DiffGraph& g, const LatentOdeModel& model, Var z0, std::span<const double> times) {
  const auto& store = model.params();
  const auto& cfg = model.config();
  const auto spec = model.dynamics();
  const Eigen::Index rows = g.value(z0).rows();
  const numcore::GraphRhs rhs = [&](DiffGraph& gg, double t, Var z) {
    if (!cfg.time_input) return numcore::mlp_forward(gg, store, "dyn", spec, z);
    const Var parts[] = {z, gg.constant(Matrix::Constant(rows, 1, t))};
    return numcore::mlp_forward(gg, store, "dyn", spec, gg.concat_cols(parts));
  };
  for (std::size_t i = 0; i < times.size(); ++i) {
    require(times[i] >= 0.0 && (i == 0 || times[i] >= times[i - 1]), "decode: times must be increasing and >= 0");
  }
  const double step = model.normalization().time(cfg.train_step_hours);
  const auto states = numcore::solve_fixed_at(g, rhs, z0, 0.0, times, numcore::SolverMethod::rk4, step);
  const numcore::MlpSpec dec{{cfg.latent_dim, 1}};
  std::vector<Var> out;
  out.reserve(states.size());
  for (Var s : states) out.push_back(numcore::mlp_forward(g, store, "dec", dec, s));
  return out;
}

std::vector<double> decode_trajectory(const LatentOdeModel& model, const Vector& z0,
                                      std::span<const double> query_hours) {
  return decode_trajectory(model, z0, query_hours, model.config().predict_solver);
}

std::vector<double> decode_trajectory(const LatentOdeModel& model, const Vector& z0,
                                      std::span<const double> query_hours, const numcore::SolverConfig& solver) {
  const auto& cfg = model.config();
  const auto& norm = model.normalization();
  require(z0.size() == cfg.latent_dim, "decode_trajectory: z0 has wrong dimension");
  std::vector<double> t;
  t.reserve(query_hours.size());
  for (std::size_t i = 0; i < query_hours.size(); ++i) {
    require(query_hours[i] >= 0.0 && (i == 0 || query_hours[i] > query_hours[i - 1]),
            "decode_trajectory: query times must be increasing and >= 0");
    t.push_back(norm.time(query_hours[i]));
  }
  if (t.empty()) return {};

  const auto& store = model.params();
  const auto spec = model.dynamics();
  Matrix input(1, spec.input_size());
  const numcore::OdeRhs rhs = [&](double time, const Vector& z, Vector& dz) {
    input.leftCols(cfg.latent_dim) = z.transpose();
    if (cfg.time_input) input(0, cfg.latent_dim) = time;
    dz = numcore::mlp_forward(store, "dyn", spec, input).row(0).transpose();
  };

  std::vector<Vector> states;
  if (t.back() == 0.0) {
    states.assign(t.size(), z0);
  } else {
    const auto traj = numcore::ode_solve(rhs, z0, 0.0, t.back(), solver);
    states = numcore::dense_eval(traj, t);
  }
  const Matrix& w = store.get("dec.W0");
  const double b = store.get("dec.b0")(0, 0);
  std::vector<double> conc;
  conc.reserve(states.size());
  for (const auto& s : states) conc.push_back(norm.conc_inverse(s.dot(w.col(0)) + b));
  return conc;
}

Matrix draw_eps(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix eps(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) eps(r, c) = normal(rng);
  }
  return eps;
}

ElboTerms elbo(DiffGraph& g, const LatentOdeModel& model, const Batch& batch, const Matrix& eps, double beta) {
  require(!batch.rec_times.empty(), "elbo: no reconstruction targets");
  const Eigen::Index rows = batch.size();
  require(eps.rows() == rows && eps.cols() == model.config().latent_dim, "elbo: eps has wrong shape");
  const EncodedBatch enc = encode(g, model, batch);
  Var z = g.add(enc.mean, g.mul(enc.sd, g.constant(eps)));

  const auto preds = decode_on_graph(g, model, z, batch.rec_times);
  Var pred = g.concat_cols(preds);
  Var resid = g.sub(g.constant(batch.rec_values), pred);
  Var sq = g.row_sum(g.mul(g.square(resid), g.constant(batch.rec_mask)));
  Var sigma = g.add_scalar(g.softplus(g.parameter(model.params(), "obs.sigma")), kSdFloor);
  Var inv_var = g.div(g.constant(1.0), g.square(sigma));
  const Matrix counts = batch.rec_mask.rowwise().sum();
  Var recon = g.sub(g.scale(g.mul_row(sq, inv_var), -0.5), g.mul_row(g.constant(counts), g.log(sigma)));
  recon = g.sub(recon, g.constant(Matrix(0.5 * kLog2Pi * counts)));

  ElboTerms out;
  out.reconstruction = recon;
  out.kl = g.sub(posterior_log_density(g, z, enc.mean, enc.sd), prior_log_density(g, model, z));
  out.per_patient = g.sub(recon, g.scale(out.kl, beta));
  out.objective = g.scale(g.sum(out.per_patient), 1.0 / static_cast<double>(rows));
  return out;
}

double mean_elbo(const LatentOdeModel& model, std::span<const pksim::PatientRecord> records, double beta,
                 std::uint64_t seed) {
  require(!records.empty(), "mean_elbo: no records");
  double total = 0.0;
  for (const auto& rec : records) {
    auto rng = pksim::patient_stream(seed, rec.id, 3);
    const pksim::PatientRecord* one[] = {&rec};
    const Batch b = make_batch(model, one);
    DiffGraph g;
    const auto terms = elbo(g, model, b, draw_eps(1, model.config().latent_dim, rng), beta);
    total += g.value(terms.objective)(0, 0);
  }
  return total / static_cast<double>(records.size());
}

double predict_auc(const LatentOdeModel& model, const pksim::ObservationSet& sparse,
                   const pksim::PatientCovariates& cov, const PredictOptions& opts) {
  require(opts.samples >= 0, "predict_auc: samples must be >= 0");
  const PosteriorZ0 post = encode(model, sparse, cov);
  const auto grid = numcore::uniform_grid(0.0, opts.grid.interval, opts.grid.grid_step);
  if (opts.samples == 0) return numcore::trapezoid_auc(grid, decode_trajectory(model, post.mean, grid));

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double total = 0.0;
  for (int s = 0; s < opts.samples; ++s) {
    Vector z = post.mean;
    for (Eigen::Index d = 0; d < z.size(); ++d) z[d] += post.sd[d] * normal(rng);
    total += numcore::trapezoid_auc(grid, decode_trajectory(model, z, grid));
  }
  return total / static_cast<double>(opts.samples);
}

namespace {

PredictOptions for_patient(const PredictOptions& opts, std::uint64_t id) {
  PredictOptions o = opts;
  if (o.samples > 0) o.seed = opts.seed ^ (0x9E3779B97F4A7C15ULL * (id + 1));
  return o;
}

}  // namespace

std::vector<double> predict_population_serial(const LatentOdeModel& model,
                                              std::span<const pksim::PatientRecord> records,
                                              const PredictOptions& opts) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(predict_auc(model, r.sparse, r.covariates, for_patient(opts, r.id)));
  return out;
}

std::vector<double> predict_population(const LatentOdeModel& model, std::span<const pksim::PatientRecord> records,
                                       const PredictOptions& opts) {
  std::vector<double> out(records.size());
  std::exception_ptr failure;
  const auto count = static_cast<std::int64_t>(records.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      const auto& r = records[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(i)] = predict_auc(model, r.sparse, r.covariates, for_patient(opts, r.id));
    } catch (...) {
#pragma omp critical(pkode_predict_population)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {
      {"latent_dim", cfg.latent_dim},
      {"gmm_components", cfg.gmm_components},
      {"gru_hidden", cfg.gru_hidden},
      {"dynamics_hidden", cfg.dynamics_hidden},
      {"encoder_ode_hidden", cfg.encoder_ode_hidden},
      {"covariate_hidden", cfg.covariate_hidden},
      {"time_input", cfg.time_input},
      {"encoder_step", cfg.encoder_step},
      {"train_step_hours", cfg.train_step_hours},
      {"predict_solver",
       {{"method", numcore::to_string(cfg.predict_solver.method)},
        {"fixed_step", cfg.predict_solver.fixed_step},
        {"rel_tol", cfg.predict_solver.rel_tol},
        {"abs_tol", cfg.predict_solver.abs_tol},
        {"max_steps", cfg.predict_solver.max_steps}}},
      {"sigma_obs_init", cfg.sigma_obs_init},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.latent_dim = j.at("latent_dim").get<Eigen::Index>();
  cfg.gmm_components = j.at("gmm_components").get<Eigen::Index>();
  cfg.gru_hidden = j.at("gru_hidden").get<Eigen::Index>();
  cfg.dynamics_hidden = j.at("dynamics_hidden").get<Eigen::Index>();
  cfg.encoder_ode_hidden = j.at("encoder_ode_hidden").get<Eigen::Index>();
  cfg.covariate_hidden = j.at("covariate_hidden").get<Eigen::Index>();
  cfg.time_input = j.at("time_input").get<bool>();
  cfg.encoder_step = j.at("encoder_step").get<double>();
  cfg.train_step_hours = j.at("train_step_hours").get<double>();
  const auto& s = j.at("predict_solver");
  cfg.predict_solver.method = numcore::parse_solver_method(s.at("method").get<std::string>());
  cfg.predict_solver.fixed_step = s.at("fixed_step").get<double>();
  cfg.predict_solver.rel_tol = s.at("rel_tol").get<double>();
  cfg.predict_solver.abs_tol = s.at("abs_tol").get<double>();
  cfg.predict_solver.max_steps = s.at("max_steps").get<std::size_t>();
  cfg.sigma_obs_init = j.at("sigma_obs_init").get<double>();
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const Normalization& norm) {
  return {{"time_scale", norm.time_scale}, {"conc_mean", norm.conc_mean}, {"conc_sd", norm.conc_sd},
          {"dose_mean", norm.dose_mean},   {"dose_sd", norm.dose_sd}};
}

Normalization normalization_from_json(const nlohmann::json& j) {
  Normalization n;
  n.time_scale = j.at("time_scale").get<double>();
  n.conc_mean = j.at("conc_mean").get<double>();
  n.conc_sd = j.at("conc_sd").get<double>();
  n.dose_mean = j.at("dose_mean").get<double>();
  n.dose_sd = j.at("dose_sd").get<double>();
  require(n.time_scale > 0.0 && n.conc_sd > 0.0 && n.dose_sd > 0.0, "normalization: scales must be > 0");
  return n;
}

std::string encode_model(const LatentOdeModel& model) {
  const nlohmann::json header = {
      {"kind", "pkode-latent-ode"},
      {"model_schema_version", kModelSchemaVersion},
      {"model_config", to_json(model.config())},
      {"normalization", to_json(model.normalization())},
      {"metadata", model.metadata},
  };
  return numcore::encode_checkpoint(numcore::Checkpoint{header.dump(), model.params()});
}

LatentOdeModel decode_model(std::string_view bytes) {
  numcore::Checkpoint ckpt = numcore::decode_checkpoint(bytes);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(ckpt.header);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("kind", std::string()) != "pkode-latent-ode") {
    throw ParseError("checkpoint does not hold a latent ODE model");
  }
  const int version = header.value("model_schema_version", -1);
  if (version != kModelSchemaVersion) {
    throw ParseError("checkpoint model schema version " + std::to_string(version) + " is not supported (expected " +
                     std::to_string(kModelSchemaVersion) + ")");
  }
  LatentOdeModel model;
  try {
    model.cfg_ = model_config_from_json(header.at("model_config"));
    model.norm_ = normalization_from_json(header.at("normalization"));
    model.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  // The parameter layout must be exactly what this configuration builds.
  const LatentOdeModel reference(model.cfg_, model.norm_, 0);
  const auto& want = reference.params().entries();
  const auto& got = ckpt.params.entries();
  if (want.size() != got.size()) throw ParseError("checkpoint parameter count does not match its configuration");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].name != got[i].name || want[i].value.rows() != got[i].value.rows() ||
        want[i].value.cols() != got[i].value.cols()) {
      throw ParseError("checkpoint parameter '" + got[i].name + "' does not match its configuration");
    }
  }
  model.params_ = std::move(ckpt.params);
  return model;
}

void save_model(const std::filesystem::path& path, const LatentOdeModel& model) {
  numcore::Checkpoint ckpt = numcore::decode_checkpoint(encode_model(model));
  numcore::write_checkpoint(path, ckpt);
}

LatentOdeModel load_model(const std::filesystem::path& path) {
  const numcore::Checkpoint ckpt = numcore::read_checkpoint(path);
  return decode_model(numcore::encode_checkpoint(ckpt));
}

}  // namespace pkode::latentode

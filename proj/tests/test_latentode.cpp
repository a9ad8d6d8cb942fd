#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "pkode/latentode/latents.hpp"
#include "pkode/latentode/model.hpp"
#include "pkode/latentode/train.hpp"
#include "pkode/numcore/errors.hpp"
#include "pkode/numcore/parameter_store.hpp"
#include "pkode/numcore/quadrature.hpp"
#include "pkode/pksim/population.hpp"
#include "support/gradcheck.hpp"

using namespace pkode;
using namespace pkode::latentode;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

ModelConfig small_config() {
  ModelConfig c;
  c.latent_dim = 3;
  c.gmm_components = 2;
  c.gru_hidden = 6;
  c.dynamics_hidden = 6;
  c.encoder_ode_hidden = 6;
  c.covariate_hidden = 6;
  c.encoder_step = 0.25;
  c.train_step_hours = 2.0;
  return c;
}

std::vector<pksim::PatientRecord> patients(std::size_t n, std::uint64_t seed) {
  pksim::SimulationConfig sim;
  sim.seed = seed;
  return pksim::sample_population(n, sim);
}

std::vector<const pksim::PatientRecord*> pointers(const std::vector<pksim::PatientRecord>& recs) {
  std::vector<const pksim::PatientRecord*> out;
  for (const auto& r : recs) out.push_back(&r);
  return out;
}

GmmPrior single_standard(Eigen::Index dim) {
  GmmPrior p;
  p.weights = Vector::Ones(1);
  p.means = Matrix::Zero(1, dim);
  p.variances = Matrix::Ones(1, dim);
  return p;
}

}  // namespace

TEST_CASE("model shapes and initial values") {
  const auto recs = patients(4, 1);
  const LatentOdeModel model(ModelConfig{}, Normalization::fit(recs), 3);
  const auto post = encode(model, recs[0].sparse, recs[0].covariates);
  CHECK(post.mean.size() == 10);
  CHECK(post.sd.size() == 10);
  CHECK((post.sd.array() > 0.0).all());
  CHECK(model.sigma_obs() == doctest::Approx(0.5).epsilon(1e-5));
  const auto prior = model.prior();
  CHECK(prior.weights.size() == 4);
  CHECK(prior.weights.sum() == doctest::Approx(1.0));
  CHECK((prior.variances.array() > 0.0).all());
}

TEST_CASE("encoder ignores observation order") {
  const auto recs = patients(2, 2);
  const LatentOdeModel model(small_config(), Normalization::fit(recs), 5);
  auto shuffled = recs[1].sparse;
  std::reverse(shuffled.times.begin(), shuffled.times.end());
  std::reverse(shuffled.values.begin(), shuffled.values.end());
  const auto a = encode(model, recs[1].sparse, recs[1].covariates);
  const auto b = encode(model, shuffled, recs[1].covariates);
  CHECK(a.mean == b.mean);
  CHECK(a.sd == b.sd);

  auto dup = recs[1].sparse;
  dup.times.push_back(dup.times.front());
  dup.values.push_back(1.0);
  CHECK_THROWS_AS(encode(model, dup, recs[1].covariates), ContractViolation);
}

TEST_CASE("mixture prior density") {
  auto p = single_standard(1);
  CHECK(prior_log_density(p, Vector::Zero(1)) == doctest::Approx(-0.918939).epsilon(1e-6));
  CHECK(prior_log_density(p, Vector::Ones(1)) == doctest::Approx(-1.418939).epsilon(1e-6));

  // Identical components collapse to a single Gaussian whatever the weights.
  GmmPrior twin;
  twin.weights = Vector(2);
  twin.weights << 0.3, 0.7;
  twin.means = Matrix::Constant(2, 3, 0.4);
  twin.variances = Matrix::Constant(2, 3, 2.0);
  GmmPrior one;
  one.weights = Vector::Ones(1);
  one.means = Matrix::Constant(1, 3, 0.4);
  one.variances = Matrix::Constant(1, 3, 2.0);
  Vector z(3);
  z << 0.1, -1.0, 2.5;
  CHECK(prior_log_density(twin, z) == doctest::Approx(prior_log_density(one, z)).epsilon(1e-12));

  // Graph and numeric densities agree on a trained-looking prior.
  const auto recs = patients(2, 3);
  const LatentOdeModel model(small_config(), Normalization::fit(recs), 9);
  numcore::DiffGraph g;
  Matrix zs(1, 3);
  zs << 0.3, -0.2, 1.1;
  const double graph = g.value(prior_log_density(g, model, g.constant(zs)))(0, 0);
  CHECK(graph == doctest::Approx(prior_log_density(model.prior(), zs.row(0).transpose())).epsilon(1e-12));
}

TEST_CASE("Monte Carlo KL estimates") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto prior = single_standard(1);
  PosteriorZ0 narrow{Vector::Zero(1), Vector::Constant(1, 0.5)};
  PosteriorZ0 same{Vector::Zero(1), Vector::Ones(1)};
  double kl_narrow = 0.0;
  double kl_same = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double e = normal(rng);
    kl_narrow += kl_estimate(narrow, prior, Vector::Constant(1, 0.5 * e));
    kl_same += kl_estimate(same, prior, Vector::Constant(1, e));
  }
  CHECK(std::abs(kl_narrow / n - 0.318) < 0.02);
  CHECK(std::abs(kl_same / n) < 0.01);
}

TEST_CASE("decoder outputs") {
  const auto recs = patients(2, 4);
  const LatentOdeModel model(small_config(), Normalization::fit(recs), 2);
  const Vector z0 = Vector::Constant(3, 0.2);
  const double zero[] = {0.0};
  const auto at0 = decode_trajectory(model, z0, zero);
  REQUIRE(at0.size() == 1);
  const auto& w = model.params().get("dec.W0");
  const double b = model.params().get("dec.b0")(0, 0);
  CHECK(at0[0] == doctest::Approx(model.normalization().conc_inverse(z0.dot(w.col(0)) + b)));

  const auto grid = numcore::uniform_grid(0.0, 24.0, 0.1);
  const auto curve = decode_trajectory(model, z0, grid);
  REQUIRE(curve.size() == grid.size());
  for (double c : curve) {
    CHECK(std::isfinite(c));
    CHECK(c >= 0.0);
  }
}

TEST_CASE("reconstruction term matches the Gaussian log-likelihood") {
  const auto recs = patients(3, 5);
  LatentOdeModel model(small_config(), Normalization::fit(recs), 4);
  // Zero decoder weights make the prediction the constant bias.
  model.params().get("dec.W0").setZero();
  const double bias = 0.3;
  model.params().get("dec.b0")(0, 0) = bias;
  const auto ptrs = pointers(recs);
  const Batch batch = make_batch(model, ptrs);
  numcore::DiffGraph g;
  const auto terms = elbo(g, model, batch, Matrix::Zero(3, 3), 1.0);
  const double sigma = model.sigma_obs();
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    double expected = 0.0;
    for (Eigen::Index j = 0; j < batch.rec_values.cols(); ++j) {
      if (batch.rec_mask(i, j) == 0.0) continue;
      const double r = batch.rec_values(i, j) - bias;
      expected += -0.5 * r * r / (sigma * sigma) - std::log(sigma) - 0.5 * kLog2Pi;
    }
    CHECK(g.value(terms.reconstruction)(i, 0) == doctest::Approx(expected).epsilon(1e-10));
  }

  // Perfect fit at unit noise leaves only the normalizing constant.
  LatentOdeModel exact = model;
  exact.params().get("obs.sigma")(0, 0) = std::log(std::expm1(1.0 - 1e-6));
  Batch flat = batch;
  flat.rec_values.setConstant(bias);
  numcore::DiffGraph g2;
  const auto t2 = elbo(g2, exact, flat, Matrix::Zero(3, 3), 1.0);
  const double m = static_cast<double>(flat.rec_mask.row(0).sum());
  CHECK(g2.value(t2.reconstruction)(0, 0) == doctest::Approx(-0.5 * m * kLog2Pi).epsilon(1e-9));
}

TEST_CASE("ELBO gradient matches finite differences") {
  const auto recs = patients(3, 6);
  LatentOdeModel model(small_config(), Normalization::fit(recs), 8);
  const auto ptrs = pointers(recs);
  const Batch batch = make_batch(model, ptrs);
  std::mt19937_64 rng(1);
  const Matrix eps = draw_eps(3, 3, rng);
  const testing::GraphFn f = [&](numcore::DiffGraph& g, const numcore::ParameterStore&) {
    return elbo(g, model, batch, eps, 0.7).objective;
  };
  const auto r = testing::check_gradient(model.params(), f, 77, 80);
  INFO("worst coordinate: " << r.worst_name);
  CHECK(r.rel_error < 1e-3);
}

TEST_CASE("batch rows do not interact") {
  const auto recs = patients(4, 7);
  const LatentOdeModel model(small_config(), Normalization::fit(recs), 1);
  const auto ptrs = pointers(recs);
  std::mt19937_64 rng(2);
  const Matrix eps = draw_eps(4, 3, rng);
  numcore::DiffGraph g;
  const auto all = elbo(g, model, make_batch(model, ptrs), eps, 1.0);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const pksim::PatientRecord* one[] = {ptrs[static_cast<std::size_t>(i)]};
    numcore::DiffGraph gi;
    const auto single = elbo(gi, model, make_batch(model, one), Matrix(eps.row(i)), 1.0);
    CHECK(gi.value(single.per_patient)(0, 0) == doctest::Approx(g.value(all.per_patient)(i, 0)).epsilon(1e-12));
  }
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  const auto recs = patients(12, 8);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 5;
  tc.seed = 4;
  const auto a = train(recs, small_config(), tc);
  const auto b = train(recs, small_config(), tc);
  CHECK(encode_model(a.model) == encode_model(b.model));
  CHECK(a.trace.size() == 2);

  const LatentOdeModel back = decode_model(encode_model(a.model));
  CHECK(back.params() == a.model.params());
  for (const auto& r : recs) {
    CHECK(predict_auc(back, r.sparse, r.covariates) == predict_auc(a.model, r.sparse, r.covariates));
  }

  auto ckpt = numcore::decode_checkpoint(encode_model(a.model));
  auto header = nlohmann::json::parse(ckpt.header);
  header["model_schema_version"] = 2;
  ckpt.header = header.dump();
  CHECK_THROWS_WITH_AS(decode_model(numcore::encode_checkpoint(ckpt)),
                       "checkpoint model schema version 2 is not supported (expected 1)", ParseError);

  ModelConfig other = small_config();
  other.latent_dim = 4;
  const LatentOdeModel wrong(other, a.model.normalization(), 0);
  auto mixed = numcore::decode_checkpoint(encode_model(a.model));
  mixed.params = wrong.params();
  CHECK_THROWS_AS(decode_model(numcore::encode_checkpoint(mixed)), ParseError);
}

TEST_CASE("one epoch raises the mean ELBO") {
  const auto recs = patients(200, 9);
  const auto norm = Normalization::fit(recs);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LatentOdeModel init(ModelConfig{}, norm, seed);
    TrainConfig tc;
    tc.epochs = 1;
    tc.seed = seed;
    const double before = mean_elbo(init, recs, 1.0, 99);
    const auto trained = train(init, recs, tc);
    CHECK(mean_elbo(trained.model, recs, 1.0, 99) > before);
  }
}

TEST_CASE("default training makes progress") {
  const auto recs = patients(200, 10);
  TrainConfig tc;
  tc.seed = 1;
  const auto res = train(recs, ModelConfig{}, tc);
  REQUIRE(res.trace.size() == static_cast<std::size_t>(tc.epochs));
  for (const auto& s : res.trace) CHECK(std::isfinite(s.mean_elbo));
  CHECK(res.trace.back().mean_elbo > res.trace.front().mean_elbo);
  CHECK(res.trace.front().beta == 0.0);
  CHECK(res.trace.back().beta == 1.0);
  CHECK(res.trace.back().learning_rate == doctest::Approx(tc.learning_rate * tc.final_lr_fraction).epsilon(0.05));
}

TEST_CASE("prediction modes and population helpers") {
  const auto recs = patients(5, 10);
  const LatentOdeModel model(small_config(), Normalization::fit(recs), 3);
  const auto par = predict_population(model, recs);
  const auto ser = predict_population_serial(model, recs);
  CHECK(par == ser);
  PredictOptions sampled;
  sampled.samples = 4;
  sampled.seed = 1;
  const auto s1 = predict_population(model, recs, sampled);
  CHECK(s1 == predict_population_serial(model, recs, sampled));
  for (double v : s1) CHECK(std::isfinite(v));
}

TEST_CASE("PCA recovers the dominant axis") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector axis(4);
  axis << 1.0, 2.0, -1.0, 0.5;
  axis.normalize();
  Matrix x(2000, 4);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double s = 5.0 * normal(rng);
    for (Eigen::Index d = 0; d < 4; ++d) x(i, d) = 3.0 + s * axis[d] + 0.1 * normal(rng);
  }
  const auto p = pca(x, 3);
  CHECK(std::abs(p.components.col(0).dot(axis)) > 0.999);
  CHECK(p.explained_variance[0] >= p.explained_variance[1]);
  CHECK(p.explained_variance[1] >= p.explained_variance[2]);
  CHECK(p.explained_ratio[0] > 0.99);
  const Matrix proj = p.project(x);
  CHECK(proj.rows() == 2000);
  CHECK(proj.cols() == 3);
  CHECK(std::abs(proj.col(0).mean()) < 1e-9);
}

TEST_CASE("logistic classifier separates shifted clusters") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(400, 2);
  std::vector<int> y(400);
  for (Eigen::Index i = 0; i < 400; ++i) {
    y[static_cast<std::size_t>(i)] = i % 4 == 0 ? 1 : 0;
    const double shift = y[static_cast<std::size_t>(i)] ? 3.0 : 0.0;
    x(i, 0) = shift + normal(rng);
    x(i, 1) = normal(rng);
  }
  const auto clf = fit_logistic(x, y);
  const auto s = score(clf.predict(x), y);
  CHECK(s.accuracy > 0.9);
  CHECK(s.balanced_accuracy > 0.85);

  const std::vector<int> all_zero(400, 0);
  const auto majority = score(all_zero, y);
  CHECK(majority.accuracy == doctest::Approx(0.75));
  CHECK(majority.balanced_accuracy == doctest::Approx(0.5));
}

TEST_CASE("latent export and CSV") {
  const auto recs = patients(6, 11);
  const LatentOdeModel model(small_config(), Normalization::fit(recs), 3);
  const auto rows = export_latents(model, recs);
  REQUIRE(rows.size() == 6);
  const Matrix m = latent_matrix(rows);
  CHECK(m.rows() == 6);
  CHECK(m.cols() == 3);
  CHECK(Vector(m.row(2).transpose()) == encode(model, recs[2].sparse, recs[2].covariates).mean);
  const auto p = pca(m, 2);
  std::ostringstream out;
  write_latents_csv(out, rows, &p);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  while (!header.empty() && header[0] == '#') std::getline(in, header);
  CHECK(header == "id,cyp,st,dose,hct,z0,z1,z2,pc1,pc2");
}

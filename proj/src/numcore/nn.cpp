#include "pkode/numcore/nn.hpp"

#include <cmath>

#include "pkode/numcore/errors.hpp"

namespace pkode::numcore {

namespace {

std::string key(std::string_view prefix, std::string_view suffix) {
  std::string k(prefix);
  k += '.';
  k += suffix;
  return k;
}

std::string layer_key(std::string_view prefix, char kind, std::size_t i) {
  std::string k(prefix);
  k += '.';
  k += kind;
  k += std::to_string(i);
  return k;
}

void check_spec(const MlpSpec& spec) {
  require(spec.sizes.size() >= 2, "MlpSpec: need at least input and output sizes");
  for (auto s : spec.sizes) require(s >= 1, "MlpSpec: layer sizes must be positive");
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index r = 0; r < fan_in; ++r) {
    for (Eigen::Index c = 0; c < fan_out; ++c) w(r, c) = dist(rng);
  }
  return w;
}

void init_mlp(ParameterStore& store, std::string_view prefix, const MlpSpec& spec, std::mt19937_64& rng) {
  check_spec(spec);
  for (std::size_t i = 0; i < spec.layers(); ++i) {
    store.add(layer_key(prefix, 'W', i), xavier_uniform(spec.sizes[i], spec.sizes[i + 1], rng));
    store.add(layer_key(prefix, 'b', i), Matrix::Zero(1, spec.sizes[i + 1]));
  }
}

void init_gru(ParameterStore& store, std::string_view prefix, const GruSpec& spec, std::mt19937_64& rng) {
  require(spec.input >= 1 && spec.hidden >= 1, "GruSpec: sizes must be positive");
  const Eigen::Index h = spec.hidden;
  Matrix wx(spec.input, 3 * h);
  for (int block = 0; block < 3; ++block) wx.middleCols(block * h, h) = xavier_uniform(spec.input, h, rng);
  Matrix uh(h, 2 * h);
  for (int block = 0; block < 2; ++block) uh.middleCols(block * h, h) = xavier_uniform(h, h, rng);
  store.add(key(prefix, "Wx"), std::move(wx));
  store.add(key(prefix, "Uh"), std::move(uh));
  store.add(key(prefix, "Un"), xavier_uniform(h, h, rng));
  store.add(key(prefix, "b"), Matrix::Zero(1, 3 * h));
}

Var activate(DiffGraph& g, Activation act, Var x) {
  switch (act) {
    case Activation::identity: return x;
    case Activation::tanh: return g.tanh(x);
    case Activation::sigmoid: return g.sigmoid(x);
    case Activation::softplus: return g.softplus(x);
  }
  return x;
}

Matrix activate(Activation act, const Matrix& x) {
  switch (act) {
    case Activation::identity: return x;
    case Activation::tanh: return x.array().tanh();
    case Activation::sigmoid: return x.unaryExpr(&sigmoid_scalar);
    case Activation::softplus: return x.unaryExpr(&softplus_scalar);
  }
  return x;
}

Var mlp_forward(DiffGraph& g, const ParameterStore& store, std::string_view prefix, const MlpSpec& spec,
                Var input) {
  check_spec(spec);
  require(g.value(input).cols() == spec.input_size(),
          "mlp_forward: input has " + std::to_string(g.value(input).cols()) + " features, expected " +
              std::to_string(spec.input_size()));
  Var x = input;
  for (std::size_t i = 0; i < spec.layers(); ++i) {
    Var w = g.parameter(store, layer_key(prefix, 'W', i));
    Var b = g.parameter(store, layer_key(prefix, 'b', i));
    x = g.affine(x, w, b);
    x = activate(g, i + 1 == spec.layers() ? spec.output : spec.hidden, x);
  }
  return x;
}

Matrix mlp_forward(const ParameterStore& store, std::string_view prefix, const MlpSpec& spec,
                   const Matrix& input) {
  check_spec(spec);
  require(input.cols() == spec.input_size(),
          "mlp_forward: input has " + std::to_string(input.cols()) + " features, expected " +
              std::to_string(spec.input_size()));
  Matrix x = input;
  for (std::size_t i = 0; i < spec.layers(); ++i) {
    const Matrix& w = store.get(layer_key(prefix, 'W', i));
    const Matrix& b = store.get(layer_key(prefix, 'b', i));
    Matrix y(x.rows(), w.cols());
    y.noalias() = x * w;
    y.rowwise() += b.row(0);
    x = activate(i + 1 == spec.layers() ? spec.output : spec.hidden, y);
  }
  return x;
}

Var gru_step(DiffGraph& g, const ParameterStore& store, std::string_view prefix, const GruSpec& spec,
             Var hidden, Var input) {
  const Eigen::Index h = spec.hidden;
  require(g.value(hidden).cols() == h, "gru_step: hidden state has wrong width");
  require(g.value(input).cols() == spec.input, "gru_step: input has wrong width");
  require(g.value(hidden).rows() == g.value(input).rows(), "gru_step: batch mismatch");
  Var xw = g.affine(input, g.parameter(store, key(prefix, "Wx")), g.parameter(store, key(prefix, "b")));
  Var hu = g.matmul(hidden, g.parameter(store, key(prefix, "Uh")));
  Var r = g.sigmoid(g.add(g.slice_cols(xw, 0, h), g.slice_cols(hu, 0, h)));
  Var u = g.sigmoid(g.add(g.slice_cols(xw, h, h), g.slice_cols(hu, h, h)));
  Var rh = g.matmul(g.mul(r, hidden), g.parameter(store, key(prefix, "Un")));
  Var n = g.tanh(g.add(g.slice_cols(xw, 2 * h, h), rh));
  return g.add(n, g.mul(u, g.sub(hidden, n)));
}

Matrix gru_step(const ParameterStore& store, std::string_view prefix, const GruSpec& spec,
                const Matrix& hidden, const Matrix& input) {
  const Eigen::Index h = spec.hidden;
  require(hidden.cols() == h, "gru_step: hidden state has wrong width");
  require(input.cols() == spec.input, "gru_step: input has wrong width");
  require(hidden.rows() == input.rows(), "gru_step: batch mismatch");
  Matrix xw = input * store.get(key(prefix, "Wx"));
  xw.rowwise() += store.get(key(prefix, "b")).row(0);
  const Matrix hu = hidden * store.get(key(prefix, "Uh"));
  const Matrix r = (xw.middleCols(0, h) + hu.middleCols(0, h)).unaryExpr(&sigmoid_scalar);
  const Matrix u = (xw.middleCols(h, h) + hu.middleCols(h, h)).unaryExpr(&sigmoid_scalar);
  const Matrix rh = r.cwiseProduct(hidden) * store.get(key(prefix, "Un"));
  const Matrix n = (xw.middleCols(2 * h, h) + rh).array().tanh();
  return n + u.cwiseProduct(hidden - n);
}

}  // namespace pkode::numcore

#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pkode/numcore/diff_graph.hpp"
#include "pkode/numcore/parameter_store.hpp"

namespace pkode::numcore {

enum class Activation { identity, tanh, sigmoid, softplus };

/// Fully connected network. Layer i maps sizes[i] -> sizes[i+1] and stores
/// `<prefix>.W<i>` (in x out) and `<prefix>.b<i>` (1 x out).
struct MlpSpec {
  std::vector<Eigen::Index> sizes;
  Activation hidden = Activation::tanh;
  Activation output = Activation::identity;

  Eigen::Index input_size() const { return sizes.front(); }
  Eigen::Index output_size() const { return sizes.back(); }
  std::size_t layers() const { return sizes.size() - 1; }
};

/// Gated recurrent unit with a tanh candidate:
///   r = sigmoid(x Wr + h Ur + br), u = sigmoid(x Wu + h Uu + bu)
///   n = tanh(x Wn + (r*h) Un + bn),  h' = u*h + (1-u)*n
/// Stored as `<prefix>.Wx` (in x 3H, blocks r|u|n), `<prefix>.Uh` (H x 2H,
/// blocks r|u), `<prefix>.Un` (H x H) and `<prefix>.b` (1 x 3H).
struct GruSpec {
  Eigen::Index input = 1;
  Eigen::Index hidden = 1;
};

/// Glorot-uniform weights, zero biases.
Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng);

void init_mlp(ParameterStore& store, std::string_view prefix, const MlpSpec& spec, std::mt19937_64& rng);
void init_gru(ParameterStore& store, std::string_view prefix, const GruSpec& spec, std::mt19937_64& rng);

Var mlp_forward(DiffGraph& g, const ParameterStore& store, std::string_view prefix, const MlpSpec& spec,
                Var input);
Matrix mlp_forward(const ParameterStore& store, std::string_view prefix, const MlpSpec& spec,
                   const Matrix& input);

Var gru_step(DiffGraph& g, const ParameterStore& store, std::string_view prefix, const GruSpec& spec,
             Var hidden, Var input);
Matrix gru_step(const ParameterStore& store, std::string_view prefix, const GruSpec& spec,
                const Matrix& hidden, const Matrix& input);

Var activate(DiffGraph& g, Activation act, Var x);
Matrix activate(Activation act, const Matrix& x);

}  // namespace pkode::numcore

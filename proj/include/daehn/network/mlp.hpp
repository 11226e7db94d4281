#pragma once

// Fully connected tanh backbone with an output head yhat and a multiplier head
// lambdahat sharing the final linear layer.
//
// Inputs are standardized inside the network; derivatives are always returned
// with respect to the physical inputs.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "daehn/autodiff/dual2.hpp"
#include "daehn/projection/newton.hpp"
#include "daehn/symbolic/kkt.hpp"

namespace daehn::net {

enum class Activation { tanh, identity };

struct BackboneConfig {
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  std::size_t multiplier_dim = 0;
  std::size_t hidden_dim = 32;
  std::size_t model_depth = 4;  // hidden layers
  std::size_t num_softplus = 0;  // trailing multiplier slots that hold slacks
  Activation activation = Activation::tanh;
  std::uint64_t seed = 0;
};

struct Layer {
  std::size_t in = 0, out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;
};

struct NetworkParams {
  BackboneConfig config;
  std::vector<Layer> layers;
  std::vector<double> input_shift;  // standardized = (x - shift) / scale
  std::vector<double> input_scale;
  std::vector<std::string> phys_names;
  std::vector<double> phys_params;

  std::size_t weight_count() const;
  std::size_t parameter_count() const { return weight_count() + phys_params.size(); }
  /// Layer weights and biases in order, then phys_params.
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
};

/// Closed form (in+1)h + (depth-1)(h+1)h + (h+1)(out+mult).
std::size_t layer_parameter_count(const BackboneConfig& config);

NetworkParams init(const BackboneConfig& config, std::vector<std::pair<std::string, double>> phys = {});
NetworkParams init_zero(const BackboneConfig& config);

/// Sets the standardization from training inputs (rows of input_dim values).
void fit_standardization(NetworkParams& params, std::span<const double> inputs);

template <class T>
struct HeadOutput {
  std::vector<T> y_hat;
  std::vector<T> lambda_hat;
};

namespace detail {

template <class T>
T activate(Activation a, const T& z) {
  using std::tanh;
  using ad::tanh;
  return a == Activation::tanh ? T(tanh(z)) : z;
}

}  // namespace detail

/// One dense pass. T may be double, ad::Var or (nested) ad::Dual2.
template <class T>
HeadOutput<T> forward(const NetworkParams& params, std::span<const T> point) {
  const auto& cfg = params.config;
  std::vector<T> h(cfg.input_dim);
  for (std::size_t i = 0; i < cfg.input_dim; ++i) h[i] = (point[i] - params.input_shift[i]) / params.input_scale[i];
  std::vector<T> next;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const Layer& L = params.layers[l];
    const bool last = l + 1 == params.layers.size();
    next.assign(L.out, T(0.0));
    for (std::size_t r = 0; r < L.out; ++r) {
      T s = T(L.bias[r]);
      for (std::size_t c = 0; c < L.in; ++c)
        if (L.weight[r * L.in + c] != 0.0) s += L.weight[r * L.in + c] * h[c];
      next[r] = last ? s : detail::activate(cfg.activation, s);
    }
    h.swap(next);
  }
  HeadOutput<T> out;
  out.y_hat.assign(h.begin(), h.begin() + cfg.output_dim);
  out.lambda_hat.assign(h.begin() + cfg.output_dim, h.end());
  const std::size_t first_slack = out.lambda_hat.size() - cfg.num_softplus;
  for (std::size_t k = first_slack; k < out.lambda_hat.size(); ++k) {
    using ad::softplus;
    out.lambda_hat[k] = softplus(out.lambda_hat[k]);
  }
  return out;
}

/// Single-point bundle: dhat in registry order via second-order forward mode
/// along each needed axis, neighbor evaluations at point + delta e_axis.
template <class T>
proj::BackboneBundle<T> forward_with_derivatives(const NetworkParams& params, std::span<const T> point,
                                                 const sym::ConstraintSet& registry,
                                                 const std::optional<sym::TaylorCoupling>& coupling) {
  using D = ad::Dual2<T>;
  const std::size_t n_in = params.config.input_dim;
  proj::BackboneBundle<T> b;
  b.inputs.assign(point.begin(), point.end());
  auto head = forward<T>(params, point);
  b.y_hat = std::move(head.y_hat);
  b.lambda_hat = std::move(head.lambda_hat);

  std::vector<std::optional<HeadOutput<D>>> jets(n_in);
  b.d_hat.reserve(registry.deriv_vars.size());
  for (const auto& v : registry.deriv_vars) {
    if (!jets[v.axis]) {
      std::vector<D> x(n_in);
      for (std::size_t i = 0; i < n_in; ++i) x[i] = i == v.axis ? D::variable(point[i]) : D::constant(point[i]);
      jets[v.axis] = forward<D>(params, std::span<const D>(x));
    }
    const D& y = jets[v.axis]->y_hat[v.output];
    b.d_hat.push_back(v.order == 1 ? y.d1 : y.d2);
  }

  if (coupling) {
    b.neighbor_evals.assign(params.config.output_dim * n_in, T(0.0));
    for (std::size_t a = 0; a < n_in; ++a) {
      std::vector<T> x(point.begin(), point.end());
      x[a] = x[a] + coupling->delta;
      const auto n = forward<T>(params, std::span<const T>(x));
      for (std::size_t p = 0; p < params.config.output_dim; ++p)
        b.neighbor_evals[sym::neighbor_index(p, a, n_in)] = n.y_hat[p];
    }
  }
  return b;
}

/// Which Taylor channels the batched pass propagates.
struct JetRequest {
  bool first = false;
  bool second = false;  // implies first
  bool neighbors = false;
  double delta = 0.1;
};

/// Batched forward cache. Every activation matrix has rows = layer width and
/// columns = channel * batch + b, where channel 0 is the value, then one first
/// derivative channel per axis, one second derivative channel per axis, then
/// one neighbor value channel per axis (each group only when requested).
struct JetCache {
  std::size_t batch = 0, num_axes = 0, channels = 0;
  JetRequest request;
  std::vector<std::vector<double>> X;  // input of each layer
  std::vector<std::vector<double>> Z;  // pre-activation of each layer

  std::size_t cols() const { return channels * batch; }
  std::size_t ch_first(std::size_t axis) const { return 1 + axis; }
  std::size_t ch_second(std::size_t axis) const { return 1 + num_axes + axis; }
  std::size_t ch_neighbor(std::size_t axis) const {
    return 1 + (request.first ? num_axes : 0) + (request.second ? num_axes : 0) + axis;
  }
  /// Final-layer output row r (y rows first, then raw multiplier rows).
  double out(std::size_t row, std::size_t channel, std::size_t b) const {
    return Z.back()[row * cols() + channel * batch + b];
  }
};

/// inputs: batch rows of input_dim physical values.
void jet_forward(const NetworkParams& params, std::span<const double> inputs, const JetRequest& request,
                 JetCache& cache);

/// Reverse pass: out_grad has the layout of the final-layer output matrix
/// (rows x cols). Adds dLoss/dweights into grad (flatten() order, size >=
/// weight_count()).
void jet_backward(const NetworkParams& params, const JetCache& cache, std::span<const double> out_grad,
                  std::span<double> grad);

void save_checkpoint(const NetworkParams& params, std::ostream& os);
NetworkParams load_checkpoint(std::istream& is);
void save_checkpoint(const NetworkParams& params, const std::string& path);
NetworkParams load_checkpoint(const std::string& path);

}  // namespace daehn::net

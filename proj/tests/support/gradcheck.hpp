#pragma once

// Finite-difference oracles for layer and network gradients. Everything runs
// in double precision with central differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "deepwriter/deepwriter.hpp"

namespace dwtest {

using deepwriter::Rng;
using deepwriter::Shape;
using deepwriter::Tensor;

constexpr double kStep = 1e-5;

/// ||a − b||₂ / max(||a||₂, ||b||₂); 0 when both vectors are zero.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

inline Tensor<double> random_tensor(const Shape& dims, Rng& rng, double scale = 1.0) {
  Tensor<double> t(dims);
  for (auto& v : t.data()) v = scale * deepwriter::standard_normal(rng);
  return t;
}

/// Central difference of `f` with respect to every element of `x`.
inline std::vector<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& f,
                                            double h = kStep) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline std::vector<double> as_vector(const Tensor<double>& t) {
  return {t.data().begin(), t.data().end()};
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Relative errors of one layer check; unused parts stay 0.
struct LayerCheck {
  std::string layer;
  double input = 0.0;
  double weights = 0.0;
  double biases = 0.0;

  double worst() const { return std::max({input, weights, biases}); }
};

// Each layer check uses the scalar L = <r, layer(x)> for a fixed random r,
// whose gradient with respect to the layer output is r.

inline LayerCheck check_conv(const deepwriter::ConvSpec& spec, const Shape& in_dims, Rng& rng) {
  using namespace deepwriter;
  Tensor<double> x = random_tensor(in_dims, rng);
  LayerParams<double> p{random_tensor({spec.out_channels, in_dims[0], spec.kernel, spec.kernel}, rng, 0.5),
                        random_tensor({spec.out_channels}, rng, 0.5)};
  const Tensor<double> r = random_tensor(conv2d_forward(x, spec, p).dims(), rng);
  auto loss = [&] { return dot(r, conv2d_forward(x, spec, p)); };
  const auto analytic = conv2d_backward(x, spec, p, r);
  return {"conv " + layer_notation(spec),
          relative_error(as_vector(analytic.input), numeric_gradient(x, loss)),
          relative_error(as_vector(analytic.params.weights), numeric_gradient(p.weights, loss)),
          relative_error(as_vector(analytic.params.biases), numeric_gradient(p.biases, loss))};
}

/// Input values are a shuffled ladder with spacing far above the step, so
/// no perturbation can change a window's maximum.
inline LayerCheck check_pool(const deepwriter::PoolSpec& spec, const Shape& in_dims, Rng& rng) {
  using namespace deepwriter;
  Tensor<double> x(in_dims);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * static_cast<double>(i);
  deepwriter::shuffle(x.data(), rng);
  const auto fwd = maxpool2d_forward(x, spec);
  const Tensor<double> r = random_tensor(fwd.output.dims(), rng);
  auto loss = [&] { return dot(r, maxpool2d_forward(x, spec).output); };
  const auto analytic = maxpool2d_backward<double>(x.dims(), fwd.argmax, r);
  return {"pool " + layer_notation(spec), relative_error(as_vector(analytic), numeric_gradient(x, loss))};
}

inline LayerCheck check_fc(const Shape& in_dims, std::size_t out, Rng& rng) {
  using namespace deepwriter;
  Tensor<double> x = random_tensor(in_dims, rng);
  LayerParams<double> p{random_tensor({out, x.size()}, rng, 0.5), random_tensor({out}, rng, 0.5)};
  const Tensor<double> r = random_tensor({out}, rng);
  auto loss = [&] { return dot(r, fully_connected_forward(x, p)); };
  const auto analytic = fully_connected_backward(x, p, r);
  return {"fc " + std::to_string(x.size()) + "->" + std::to_string(out),
          relative_error(as_vector(analytic.input), numeric_gradient(x, loss)),
          relative_error(as_vector(analytic.params.weights), numeric_gradient(p.weights, loss)),
          relative_error(as_vector(analytic.params.biases), numeric_gradient(p.biases, loss))};
}

/// Inputs are kept at least 0.05 away from the kink at zero.
inline LayerCheck check_relu(const Shape& dims, Rng& rng) {
  using namespace deepwriter;
  Tensor<double> x = random_tensor(dims, rng);
  for (auto& v : x.data()) v = v < 0 ? v - 0.05 : v + 0.05;
  const Tensor<double> r = random_tensor(dims, rng);
  auto loss = [&] { return dot(r, relu_forward(x)); };
  return {"relu", relative_error(as_vector(relu_backward(x, r)), numeric_gradient(x, loss))};
}

/// The mask is drawn once and reused for every evaluation.
inline LayerCheck check_dropout(const Shape& dims, double ratio, Rng& rng) {
  using namespace deepwriter;
  Tensor<double> x = random_tensor(dims, rng);
  const std::uint64_t seed = rng();
  auto run = [&] {
    Rng mask_rng(seed);
    return dropout_forward(x, ratio, Mode::train, mask_rng);
  };
  const Tensor<double> r = random_tensor(dims, rng);
  auto loss = [&] { return dot(r, run().output); };
  return {"dropout", relative_error(as_vector(dropout_backward(run().mask, r)), numeric_gradient(x, loss))};
}

inline LayerCheck check_softmax_loss(std::size_t classes, Rng& rng) {
  using namespace deepwriter;
  Tensor<double> z = random_tensor({classes}, rng, 2.0);
  const std::size_t label = static_cast<std::size_t>(uniform_index(rng, classes));
  auto loss = [&] { return softmax_cross_entropy(z, label).loss; };
  const auto analytic = softmax_cross_entropy_backward(softmax_cross_entropy(z, label).probabilities, label);
  return {"softmax-loss", relative_error(as_vector(analytic), numeric_gradient(z, loss))};
}

/// Which ReLU inputs are positive and which window element every pool picks.
/// A perturbation that changes this crossed a kink and is not differentiable.
inline std::vector<std::size_t> activation_pattern(const deepwriter::Network<double>& net,
                                                   const deepwriter::ForwardPass<double>& pass) {
  std::vector<std::size_t> sig;
  for (const auto& trace : pass.streams) {
    for (const auto& a : trace.argmax) sig.insert(sig.end(), a.begin(), a.end());
    for (std::size_t i = 0; i < trace.inputs.size(); ++i) {
      if (!std::holds_alternative<deepwriter::ReluSpec>(net.layers()[i].entry)) continue;
      for (double v : trace.inputs[i].data()) sig.push_back(v > 0.0);
    }
  }
  return sig;
}

struct NetworkCheck {
  double error = 0.0;       // over all checked coordinates
  double worst_group = 0.0; // largest per-parameter-group error
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crossed a kink
};

/**
 * End-to-end check of d(−log p[label])/dθ for a freshly initialized network
 * on random inputs and a label other than the predicted one, at
 * `per_group` random weight coordinates and up to 2 bias coordinates of
 * every parameter group. Dropout masks are fixed by reseeding before each
 * pass.
 */
inline NetworkCheck check_network(const deepwriter::ArchitectureSpec& spec, int streams, Rng& rng,
                                  std::size_t per_group = 8) {
  using namespace deepwriter;
  InitOptions init;
  init.fan_in_scaled = true;
  auto net = Network<double>::build(spec, streams, rng, init);
  for (auto& p : net.params()) {
    for (auto& b : p.biases.data()) b = 0.1 * standard_normal(rng);
  }
  std::vector<Tensor<double>> inputs;
  for (int s = 0; s < streams; ++s) inputs.push_back(random_tensor(net.input_dims(), rng));
  std::vector<const Tensor<double>*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);
  const std::uint64_t dropout_seed = rng();

  auto pass = [&] {
    Rng dropout_rng(dropout_seed);
    return net.forward(ptrs, Mode::train, &dropout_rng);
  };
  const auto base = pass();
  // Any label but the top-scoring one keeps p[label] <= 1/2, so the loss
  // cannot saturate into round-off.
  std::size_t label = static_cast<std::size_t>(uniform_index(rng, spec.num_classes - 1));
  if (label >= argmax(base.logits)) ++label;
  const auto base_pattern = activation_pattern(net, base);
  auto grads = net.zero_grads();
  net.backward(base, label, grads);

  NetworkCheck out;
  std::vector<double> all_analytic, all_numeric;
  auto params = net.params();
  for (std::size_t g = 0; g < params.size(); ++g) {
    std::vector<double> analytic, numeric;
    auto probe = [&](Tensor<double>& t, const Tensor<double>& grad, std::size_t count) {
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t i = static_cast<std::size_t>(uniform_index(rng, t.size()));
        const double saved = t[i];
        t[i] = saved + kStep;
        const auto up = pass();
        t[i] = saved - kStep;
        const auto down = pass();
        t[i] = saved;
        if (activation_pattern(net, up) != base_pattern || activation_pattern(net, down) != base_pattern) {
          ++out.skipped;
          continue;
        }
        const double lu = softmax_cross_entropy(up.logits, label).loss;
        const double ld = softmax_cross_entropy(down.logits, label).loss;
        numeric.push_back((lu - ld) / (2.0 * kStep));
        analytic.push_back(grad[i]);
      }
    };
    probe(params[g].weights, grads[g].weights, per_group);
    probe(params[g].biases, grads[g].biases, std::min<std::size_t>(2, params[g].biases.size()));
    out.worst_group = std::max(out.worst_group, relative_error(analytic, numeric));
    all_analytic.insert(all_analytic.end(), analytic.begin(), analytic.end());
    all_numeric.insert(all_numeric.end(), numeric.begin(), numeric.end());
  }
  out.checked = all_analytic.size();
  out.error = relative_error(all_analytic, all_numeric);
  return out;
}

}  // namespace dwtest

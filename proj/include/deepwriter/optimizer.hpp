#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deepwriter/layers.hpp"

namespace deepwriter {

/// Mini-batch SGD hyperparameters and the step learning-rate schedule.
struct TrainConfig {
  std::size_t batch_size = 256;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double base_lr = 1e-2;
  double lr_drop_factor = 0.1;
  long long lr_step = 100000;
  long long stop_iter = 400000;
  std::uint64_t seed = 0;

  /// Training from scratch: lr 1e-2 dropped ×0.1 every 100K, 400K iterations.
  static TrainConfig scratch_defaults() { return {}; }

  /// Finetuning a transferred model: lr 1e-3 dropped ×0.1 every 20K, 40K iterations.
  static TrainConfig finetune_defaults() {
    TrainConfig c;
    c.base_lr = 1e-3;
    c.lr_step = 20000;
    c.stop_iter = 40000;
    return c;
  }

  void validate() const {
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw DomainError("momentum must lie in [0,1)");
    }
    if (!(weight_decay >= 0.0)) throw DomainError("weight_decay must be >= 0");
    if (!(base_lr > 0.0)) throw DomainError("base_lr must be > 0");
    if (!(lr_drop_factor > 0.0)) throw DomainError("lr_drop_factor must be > 0");
    if (lr_step < 1) throw DomainError("lr_step must be >= 1");
    if (stop_iter < 1) throw DomainError("stop_iter must be >= 1");
  }
};

/// base_lr × drop_factor^floor(iteration / lr_step).
inline double lr_at(long long iteration, const TrainConfig& config) {
  if (iteration < 0 || iteration >= config.stop_iter) {
    throw DomainError("iteration " + std::to_string(iteration) +
                      " outside [0, " + std::to_string(config.stop_iter) + ")");
  }
  const long long drops = iteration / config.lr_step;
  double lr = config.base_lr;
  for (long long i = 0; i < drops; ++i) lr *= config.lr_drop_factor;
  return lr;
}

/// Momentum buffers mirroring a parameter set, plus the iteration counter.
template <typename T>
struct OptimState {
  std::vector<ParamGrads<T>> velocities;
  long long iteration = 0;

  static OptimState zeros_like(std::span<const LayerParams<T>> params) {
    OptimState s;
    s.velocities.reserve(params.size());
    for (const auto& p : params) s.velocities.push_back(ParamGrads<T>::zeros_like(p));
    return s;
  }
};

namespace detail {
template <typename T>
void momentum_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
                   T lr, T momentum, T decay) {
  auto p = param.data();
  const auto g = grad.data();
  auto v = velocity.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + lr * (g[i] + decay * p[i]);
    p[i] -= v[i];
  }
}
}  // namespace detail

/**
 * One SGD step with momentum and coupled weight decay:
 *   v ← momentum·v + lr·lr_mult·(g + weight_decay·p);  p ← p − v.
 * Advances state.iteration by one.
 */
template <typename T>
void sgd_update(std::span<LayerParams<T>> params,
                std::span<const ParamGrads<T>> grads, OptimState<T>& state,
                const TrainConfig& config) {
  if (grads.size() != params.size() || state.velocities.size() != params.size()) {
    throw ShapeError("sgd_update: " + std::to_string(params.size()) +
                     " parameter groups, " + std::to_string(grads.size()) +
                     " gradients, " + std::to_string(state.velocities.size()) +
                     " velocities");
  }
  auto check = [](const Tensor<T>& expected, const Tensor<T>& actual, const char* what) {
    if (actual.dims() != expected.dims()) {
      throw ShapeError(std::string("sgd_update: ") + what + " dims " + format_dims(actual.dims()) +
                       " do not match parameter dims " + format_dims(expected.dims()));
    }
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    check(params[i].weights, grads[i].weights, "weight gradient");
    check(params[i].weights, state.velocities[i].weights, "weight velocity");
    check(params[i].biases, grads[i].biases, "bias gradient");
    check(params[i].biases, state.velocities[i].biases, "bias velocity");
  }
  const double base = lr_at(state.iteration, config);
  const T momentum = static_cast<T>(config.momentum);
  const T decay = static_cast<T>(config.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T lr = static_cast<T>(base) * params[i].lr_mult;
    detail::momentum_step(params[i].weights, grads[i].weights,
                          state.velocities[i].weights, lr, momentum, decay);
    detail::momentum_step(params[i].biases, grads[i].biases,
                          state.velocities[i].biases, lr, momentum, decay);
  }
  ++state.iteration;
}

}  // namespace deepwriter

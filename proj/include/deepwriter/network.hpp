#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepwriter/architecture.hpp"
#include "deepwriter/layers.hpp"
#include "deepwriter/random.hpp"
#include "deepwriter/tensor.hpp"

namespace deepwriter {

/// Per-invocation cache of one stream's forward pass, consumed by backward.
template <typename T>
struct StreamTrace {
  std::vector<Tensor<T>> inputs;                  // input of each stream layer
  std::vector<std::vector<std::size_t>> argmax;   // pooling layers only
  std::vector<Tensor<T>> masks;                   // dropout layers only
};

template <typename T>
struct ForwardPass {
  std::vector<StreamTrace<T>> streams;
  Tensor<T> fused;          // classifier input (sum of stream outputs)
  Tensor<T> logits;
  Tensor<T> probabilities;  // score vector
};

/**
 * Half DeepWriter (one stream) or DeepWriter (two streams over an adjacent
 * patch pair). Both streams run on the same parameter collection, their
 * final outputs are summed element-wise and fed to the classifier.
 *
 * The network itself holds no per-pass state, so concurrent test-mode
 * forwards on a shared instance are safe.
 */
/// Weight initialization scheme.
struct InitOptions {
  double std = 0.01;
  bool fan_in_scaled = false;

  void validate() const {
    if (!fan_in_scaled && !(std > 0.0)) throw DomainError("init std must be > 0");
  }
};

template <typename T>
class Network {
 public:
  static constexpr double kInitStd = 0.01;

  /// Gaussian weights and zero biases, drawn layer by layer. The default is
  /// N(0, 0.01); `init.fan_in_scaled` uses N(0, 2/fan_in) instead.
  static Network build(ArchitectureSpec spec, int streams, Rng& rng, InitOptions init = {}) {
    init.validate();
    Network net(std::move(spec), streams);
    for (auto& p : net.params_) fill_gaussian(p, init, rng);
    return net;
  }

  /// Zero-initialized parameters; used when weights are loaded afterwards.
  static Network zeros(ArchitectureSpec spec, int streams) {
    return Network(std::move(spec), streams);
  }

  const ArchitectureSpec& spec() const noexcept { return spec_; }
  int streams() const noexcept { return streams_; }
  std::size_t num_classes() const noexcept { return spec_.num_classes; }
  std::size_t input_side() const noexcept { return spec_.input_side; }
  Shape input_dims() const {
    return {spec_.input_channels, spec_.input_side, spec_.input_side};
  }
  const std::vector<ResolvedLayer>& layers() const noexcept { return layers_; }

  std::span<LayerParams<T>> params() noexcept { return params_; }
  std::span<const LayerParams<T>> params() const noexcept { return params_; }
  const std::vector<std::string>& param_names() const noexcept { return names_; }

  /// Index of the classifier's parameter group (always the last one).
  std::size_t classifier_index() const noexcept { return params_.size() - 1; }

  /// Gray value subtracted from inputs after scaling pixels to [0,1].
  T pixel_mean() const noexcept { return pixel_mean_; }
  void set_pixel_mean(T mean) noexcept { pixel_mean_ = mean; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.count();
    return n;
  }

  std::vector<ParamGrads<T>> zero_grads() const {
    std::vector<ParamGrads<T>> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.push_back(ParamGrads<T>::zeros_like(p));
    return g;
  }

  /// Fresh Gaussian weights and zero biases for the classifier only.
  void reinitialize_classifier(Rng& rng, T lr_mult = T{1}, InitOptions init = {}) {
    init.validate();
    auto& p = params_[classifier_index()];
    fill_gaussian(p, init, rng);
    p.biases.fill(T{0});
    p.lr_mult = lr_mult;
  }

  /// Score vector of one patch (single-stream networks).
  Tensor<T> forward_single(const Tensor<T>& patch) const {
    if (streams_ != 1) throw DomainError("forward_single requires a single-stream network");
    const Tensor<T>* in[] = {&patch};
    return run(in, Mode::test, nullptr, nullptr).probabilities;
  }

  /// Score vector of an adjacent patch pair (two-stream networks).
  Tensor<T> forward_pair(const Tensor<T>& first, const Tensor<T>& second) const {
    if (streams_ != 2) throw DomainError("forward_pair requires a two-stream network");
    const Tensor<T>* in[] = {&first, &second};
    return run(in, Mode::test, nullptr, nullptr).probabilities;
  }

  /// Full pass keeping the caches needed by backward(). `patches` holds one
  /// tensor per stream; `rng` drives dropout and is required in train mode.
  ForwardPass<T> forward(std::span<const Tensor<T>* const> patches, Mode mode,
                         Rng* rng) const {
    std::vector<StreamTrace<T>> traces;
    ForwardPass<T> pass = run(patches, mode, rng, &traces);
    pass.streams = std::move(traces);
    return pass;
  }

  /**
   * Accumulates d(−log p[label])/dθ into `grads`. Each stream receives the
   * same gradient at the fusion point, so shared parameters collect the sum
   * of both streams' contributions.
   */
  void backward(const ForwardPass<T>& pass, std::size_t label,
                std::span<ParamGrads<T>> grads) const {
    if (grads.size() != params_.size()) throw ShapeError("gradient set does not match network");
    if (pass.streams.size() != static_cast<std::size_t>(streams_)) {
      throw DomainError("forward pass has no cached traces (test-mode pass?)");
    }
    const Tensor<T> g_logits = softmax_cross_entropy_backward(pass.probabilities, label);
    const std::size_t ci = classifier_index();
    auto cls = fully_connected_backward(pass.fused, params_[ci], g_logits);
    grads[ci] += cls.params;
    for (const auto& trace : pass.streams) backprop_stream(trace, cls.input, grads);
  }

 private:
  static void fill_gaussian(LayerParams<T>& p, const InitOptions& init, Rng& rng) {
    double sd = init.std;
    if (init.fan_in_scaled) {
      const std::size_t fan_in = p.weights.size() / p.weights.dim(0);
      sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    }
    for (auto& w : p.weights.data()) w = static_cast<T>(sd * standard_normal(rng));
  }

  Network(ArchitectureSpec spec, int streams)
      : spec_(std::move(spec)), streams_(streams), layers_(resolve(spec_)) {
    if (streams_ != 1 && streams_ != 2) throw DomainError("streams must be 1 or 2");
    for (const auto& r : layers_) {
      if (!r.param_index) continue;
      LayerParams<T> p;
      if (const auto* c = std::get_if<ConvSpec>(&r.entry)) {
        p.weights = Tensor<T>({c->out_channels, r.input_dims[0], c->kernel, c->kernel});
        p.biases = Tensor<T>({c->out_channels});
      } else {
        const std::size_t out = r.output_dims[0];
        p.weights = Tensor<T>({out, shape_size(r.input_dims)});
        p.biases = Tensor<T>({out});
      }
      params_.push_back(std::move(p));
      names_.push_back(r.name);
    }
  }

  ForwardPass<T> run(std::span<const Tensor<T>* const> patches, Mode mode, Rng* rng,
                     std::vector<StreamTrace<T>>* traces) const {
    if (patches.size() != static_cast<std::size_t>(streams_)) {
      throw DomainError("network has " + std::to_string(streams_) + " streams, got " +
                        std::to_string(patches.size()) + " patches");
    }
    if (mode == Mode::train && rng == nullptr) {
      throw DomainError("train-mode forward requires an RNG");
    }
    const Shape expected = input_dims();
    ForwardPass<T> pass;
    for (const Tensor<T>* patch : patches) {
      if (patch->dims() != expected) {
        throw ShapeError("patch dims " + format_dims(patch->dims()) + " != network input " +
                         format_dims(expected));
      }
    }
    if (traces) traces->resize(patches.size());
    for (std::size_t s = 0; s < patches.size(); ++s) {
      Tensor<T> out = run_stream(*patches[s], mode, rng, traces ? &(*traces)[s] : nullptr);
      pass.fused = s == 0 ? std::move(out) : elementwise_sum(pass.fused, out);
    }
    pass.logits = fully_connected_forward(pass.fused, params_[classifier_index()]);
    pass.probabilities = softmax(pass.logits);
    return pass;
  }

  Tensor<T> run_stream(const Tensor<T>& patch, Mode mode, Rng* rng,
                       StreamTrace<T>* trace) const {
    Tensor<T> x = patch;
    const std::size_t n = layers_.size() - 1;  // classifier excluded
    if (trace) {
      trace->inputs.clear();
      trace->inputs.reserve(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const ResolvedLayer& layer = layers_[i];
      Tensor<T> y;
      if (const auto* c = std::get_if<ConvSpec>(&layer.entry)) {
        y = conv2d_forward(x, *c, params_[*layer.param_index]);
      } else if (const auto* p = std::get_if<PoolSpec>(&layer.entry)) {
        auto r = maxpool2d_forward(x, *p);
        y = std::move(r.output);
        if (trace) trace->argmax.push_back(std::move(r.argmax));
      } else if (std::holds_alternative<FullyConnectedSpec>(layer.entry)) {
        y = fully_connected_forward(x, params_[*layer.param_index]);
      } else if (std::holds_alternative<ReluSpec>(layer.entry)) {
        y = relu_forward(x);
      } else if (const auto* d = std::get_if<DropoutSpec>(&layer.entry)) {
        if (mode == Mode::train) {
          auto r = dropout_forward(x, d->ratio, mode, *rng);
          y = std::move(r.output);
          if (trace) trace->masks.push_back(std::move(r.mask));
        } else {
          y = x;
          if (trace) trace->masks.emplace_back();
        }
      }
      if (trace) {
        trace->inputs.push_back(std::move(x));
      }
      x = std::move(y);
    }
    return x;
  }

  void backprop_stream(const StreamTrace<T>& trace, Tensor<T> g,
                       std::span<ParamGrads<T>> grads) const {
    const std::size_t n = layers_.size() - 1;
    std::size_t pool_k = trace.argmax.size();
    std::size_t mask_k = trace.masks.size();
    for (std::size_t i = n; i-- > 0;) {
      const ResolvedLayer& layer = layers_[i];
      const Tensor<T>& in = trace.inputs[i];
      const bool need_input = i > 0;
      if (const auto* c = std::get_if<ConvSpec>(&layer.entry)) {
        auto r = conv2d_backward(in, *c, params_[*layer.param_index], g, need_input);
        grads[*layer.param_index] += r.params;
        g = std::move(r.input);
      } else if (std::holds_alternative<PoolSpec>(layer.entry)) {
        g = maxpool2d_backward<T>(in.dims(), trace.argmax[--pool_k], g);
      } else if (std::holds_alternative<FullyConnectedSpec>(layer.entry)) {
        auto r = fully_connected_backward(in, params_[*layer.param_index], g, need_input);
        grads[*layer.param_index] += r.params;
        g = std::move(r.input);
      } else if (std::holds_alternative<ReluSpec>(layer.entry)) {
        g = relu_backward(in, g);
      } else if (std::holds_alternative<DropoutSpec>(layer.entry)) {
        g = dropout_backward(trace.masks[--mask_k], g);
      }
    }
  }

  ArchitectureSpec spec_;
  int streams_;
  std::vector<ResolvedLayer> layers_;
  std::vector<LayerParams<T>> params_;
  std::vector<std::string> names_;
  T pixel_mean_ = T{0};
};

}  // namespace deepwriter

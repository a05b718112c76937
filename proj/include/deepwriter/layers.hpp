#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "deepwriter/detail/gemm.hpp"
#include "deepwriter/random.hpp"
#include "deepwriter/tensor.hpp"

namespace deepwriter {

enum class Mode { train, test };

/// Convolution geometry in αCβSσPθ form: α kernels of β×β, stride σ, padding θ.
struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Max-pooling geometry in MβSσ form.
struct PoolSpec {
  std::size_t window = 1;
  std::size_t stride = 1;

  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

/// Weights and biases of a convolution or fully-connected layer.
/// Conv weights are [out, in, k, k]; fully-connected weights are [out, in].
template <typename T>
struct LayerParams {
  Tensor<T> weights;
  Tensor<T> biases;
  T lr_mult = T{1};

  std::size_t count() const { return weights.size() + biases.size(); }
};

template <typename T>
struct ParamGrads {
  Tensor<T> weights;
  Tensor<T> biases;

  static ParamGrads zeros_like(const LayerParams<T>& p) {
    return {Tensor<T>(p.weights.dims()), Tensor<T>(p.biases.dims())};
  }
  ParamGrads& operator+=(const ParamGrads& o) {
    weights += o.weights;
    biases += o.biases;
    return *this;
  }
};

/// Input gradient plus parameter gradients of a weighted layer.
template <typename T>
struct LayerBackward {
  Tensor<T> input;  // empty when not requested
  ParamGrads<T> params;
};

/// floor((in + 2·pad − kernel)/stride) + 1, or ShapeError if the window
/// does not fit.
inline std::size_t window_output_side(std::size_t in, std::size_t kernel,
                                      std::size_t stride,
                                      std::size_t padding = 0) {
  if (kernel == 0 || stride == 0) {
    throw ShapeError("kernel and stride must be positive");
  }
  if (in + 2 * padding < kernel) {
    throw ShapeError("window " + std::to_string(kernel) +
                     " larger than padded input " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

// --------------------------------------------------------------------------
// Convolution (correlation form, no kernel flip)

namespace detail {

template <typename T>
void im2col(const Tensor<T>& in, const ConvSpec& s, std::size_t out_h,
            std::size_t out_w, std::vector<T>& cols) {
  const std::size_t channels = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t k = s.kernel;
  const std::size_t plane = out_h * out_w;
  cols.assign(channels * k * k * plane, T{0});
  const auto src = in.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                          static_cast<std::ptrdiff_t>(s.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src_row = src.data() + (c * h + static_cast<std::size_t>(iy)) * w;
          T* dst = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                            static_cast<std::ptrdiff_t>(s.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ox] = src_row[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const std::vector<T>& cols, const ConvSpec& s, std::size_t out_h,
            std::size_t out_w, Tensor<T>& grad_in) {
  const std::size_t channels = grad_in.dim(0), h = grad_in.dim(1),
                    w = grad_in.dim(2);
  const std::size_t k = s.kernel;
  const std::size_t plane = out_h * out_w;
  auto dst = grad_in.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols.data() + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                          static_cast<std::ptrdiff_t>(s.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst_row = dst.data() + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                            static_cast<std::ptrdiff_t>(s.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst_row[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv(const Tensor<T>& in, const ConvSpec& s,
                const LayerParams<T>& p) {
  if (in.rank() != 3) {
    throw ShapeError("conv2d expects [C,H,W] input, got " +
                     format_dims(in.dims()));
  }
  const Shape expected_w{s.out_channels, in.dim(0), s.kernel, s.kernel};
  if (p.weights.dims() != expected_w) {
    throw ShapeError("conv2d weights " + format_dims(p.weights.dims()) +
                     " do not match input " + format_dims(in.dims()) +
                     " (expected " + format_dims(expected_w) + ")");
  }
  if (p.biases.dims() != Shape{s.out_channels}) {
    throw ShapeError("conv2d bias dims " + format_dims(p.biases.dims()));
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const ConvSpec& s,
                         const LayerParams<T>& p) {
  detail::check_conv(in, s, p);
  const std::size_t oh = window_output_side(in.dim(1), s.kernel, s.stride, s.padding);
  const std::size_t ow = window_output_side(in.dim(2), s.kernel, s.stride, s.padding);
  const std::size_t patch = in.dim(0) * s.kernel * s.kernel;
  std::vector<T> cols;
  detail::im2col(in, s, oh, ow, cols);
  Tensor<T> out({s.out_channels, oh, ow});
  detail::gemm_nn(p.weights.data().data(), cols.data(), out.data().data(),
                  s.out_channels, patch, oh * ow);
  auto o = out.data();
  for (std::size_t c = 0; c < s.out_channels; ++c) {
    const T b = p.biases[c];
    for (std::size_t i = 0; i < oh * ow; ++i) o[c * oh * ow + i] += b;
  }
  return out;
}

template <typename T>
LayerBackward<T> conv2d_backward(const Tensor<T>& in, const ConvSpec& s,
                                 const LayerParams<T>& p,
                                 const Tensor<T>& grad_out,
                                 bool need_input_grad = true) {
  detail::check_conv(in, s, p);
  const std::size_t oh = window_output_side(in.dim(1), s.kernel, s.stride, s.padding);
  const std::size_t ow = window_output_side(in.dim(2), s.kernel, s.stride, s.padding);
  if (grad_out.dims() != Shape{s.out_channels, oh, ow}) {
    throw ShapeError("conv2d upstream gradient " + format_dims(grad_out.dims()));
  }
  const std::size_t patch = in.dim(0) * s.kernel * s.kernel;
  const std::size_t plane = oh * ow;
  std::vector<T> cols;
  detail::im2col(in, s, oh, ow, cols);

  LayerBackward<T> r{{}, ParamGrads<T>::zeros_like(p)};
  detail::gemm_nt(grad_out.data().data(), cols.data(),
                  r.params.weights.data().data(), s.out_channels, plane, patch);
  const auto g = grad_out.data();
  for (std::size_t c = 0; c < s.out_channels; ++c) {
    T acc{0};
    for (std::size_t i = 0; i < plane; ++i) acc += g[c * plane + i];
    r.params.biases[c] = acc;
  }
  if (need_input_grad) {
    detail::gemm_tn(p.weights.data().data(), grad_out.data().data(),
                    cols.data(), patch, s.out_channels, plane);
    r.input = Tensor<T>(in.dims());
    detail::col2im(cols, s, oh, ow, r.input);
  }
  return r;
}

// --------------------------------------------------------------------------
// Max pooling

template <typename T>
struct PoolForward {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output cell
};

template <typename T>
PoolForward<T> maxpool2d_forward(const Tensor<T>& in, const PoolSpec& s) {
  if (in.rank() != 3) {
    throw ShapeError("maxpool2d expects [C,H,W] input, got " +
                     format_dims(in.dims()));
  }
  const std::size_t channels = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t oh = window_output_side(h, s.window, s.stride);
  const std::size_t ow = window_output_side(w, s.window, s.stride);
  PoolForward<T> r{Tensor<T>({channels, oh, ow}), {}};
  r.argmax.resize(channels * oh * ow);
  const auto src = in.data();
  auto dst = r.output.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (c * h + oy * s.stride) * w + ox * s.stride;
        for (std::size_t ky = 0; ky < s.window; ++ky) {
          const std::size_t row = (c * h + oy * s.stride + ky) * w + ox * s.stride;
          for (std::size_t kx = 0; kx < s.window; ++kx) {
            if (src[row + kx] > src[best]) best = row + kx;
          }
        }
        const std::size_t o = (c * oh + oy) * ow + ox;
        dst[o] = src[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_dims,
                             std::span<const std::size_t> argmax,
                             const Tensor<T>& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool2d upstream gradient does not match forward pass");
  }
  Tensor<T> g(input_dims);
  const auto up = grad_out.data();
  for (std::size_t i = 0; i < up.size(); ++i) g[argmax[i]] += up[i];
  return g;
}

// --------------------------------------------------------------------------
// Fully connected: out = W·x + b, x taken flat.

namespace detail {
template <typename T>
void check_fc(const Tensor<T>& in, const LayerParams<T>& p) {
  if (p.weights.rank() != 2 || p.biases.rank() != 1 ||
      p.biases.dim(0) != p.weights.dim(0)) {
    throw ShapeError("fully_connected parameter dims " +
                     format_dims(p.weights.dims()) + " / " +
                     format_dims(p.biases.dims()));
  }
  if (in.size() != p.weights.dim(1)) {
    throw ShapeError("fully_connected input length " +
                     std::to_string(in.size()) + " != weight input dimension " +
                     std::to_string(p.weights.dim(1)));
  }
}
}  // namespace detail

template <typename T>
Tensor<T> fully_connected_forward(const Tensor<T>& in, const LayerParams<T>& p) {
  detail::check_fc(in, p);
  const std::size_t out_n = p.weights.dim(0), in_n = p.weights.dim(1);
  Tensor<T> out = p.biases;
  detail::gemm_nn(p.weights.data().data(), in.data().data(),
                  out.data().data(), out_n, in_n, 1, /*accumulate=*/true);
  return out;
}

template <typename T>
LayerBackward<T> fully_connected_backward(const Tensor<T>& in,
                                          const LayerParams<T>& p,
                                          const Tensor<T>& grad_out,
                                          bool need_input_grad = true) {
  detail::check_fc(in, p);
  const std::size_t out_n = p.weights.dim(0), in_n = p.weights.dim(1);
  if (grad_out.size() != out_n) {
    throw ShapeError("fully_connected upstream gradient length " +
                     std::to_string(grad_out.size()));
  }
  LayerBackward<T> r{{}, {Tensor<T>(p.weights.dims()), Tensor<T>({out_n})}};
  // dW = g xᵀ (outer product), db = g
  detail::gemm_nn(grad_out.data().data(), in.data().data(),
                  r.params.weights.data().data(), out_n, 1, in_n);
  std::copy(grad_out.data().begin(), grad_out.data().end(),
            r.params.biases.data().begin());
  if (need_input_grad) {
    r.input = Tensor<T>(in.dims());
    detail::gemm_tn(p.weights.data().data(), grad_out.data().data(),
                    r.input.data().data(), in_n, out_n, 1);
  }
  return r;
}

// --------------------------------------------------------------------------
// ReLU

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& in) {
  Tensor<T> out = in;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

/// Gradient passes where in > 0; blocked at in <= 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& in, const Tensor<T>& grad_out) {
  Tensor<T>::require_same_dims(in, grad_out, "relu_backward");
  Tensor<T> g = grad_out;
  const auto x = in.data();
  auto d = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(x[i] > T{0})) d[i] = T{0};
  }
  return g;
}

// --------------------------------------------------------------------------
// Inverted dropout

template <typename T>
struct DropoutForward {
  Tensor<T> output;
  Tensor<T> mask;  // per-unit multiplier: 0 or 1/(1-ratio); empty in test mode
};

inline void check_dropout_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw DomainError("dropout ratio must lie in [0,1), got " +
                      std::to_string(ratio));
  }
}

template <typename T>
DropoutForward<T> dropout_forward(const Tensor<T>& in, double ratio, Mode mode,
                                  Rng& rng) {
  check_dropout_ratio(ratio);
  if (mode == Mode::test || ratio == 0.0) return {in, {}};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - ratio));
  DropoutForward<T> r{in, Tensor<T>(in.dims())};
  auto m = r.mask.data();
  auto o = r.output.data();
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = uniform01(rng) < ratio ? T{0} : keep_scale;
    o[i] *= m[i];
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& mask, const Tensor<T>& grad_out) {
  if (mask.empty()) return grad_out;
  Tensor<T>::require_same_dims(mask, grad_out, "dropout_backward");
  Tensor<T> g = grad_out;
  const auto m = mask.data();
  auto d = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= m[i];
  return g;
}

// --------------------------------------------------------------------------
// Softmax classifier with cross-entropy loss

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1 || logits.size() < 1) {
    throw ShapeError("softmax expects a rank-1 tensor, got " +
                     format_dims(logits.dims()));
  }
  const auto x = logits.data();
  const T top = *std::max_element(x.begin(), x.end());
  Tensor<T> p(logits.dims());
  auto d = p.data();
  T total{0};
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = std::exp(x[i] - top);
    total += d[i];
  }
  for (auto& v : d) v /= total;
  return p;
}

template <typename T>
struct SoftmaxLoss {
  Tensor<T> probabilities;
  T loss;
};

namespace detail {
template <typename T>
void check_label(const Tensor<T>& logits, std::size_t label) {
  if (logits.rank() != 1 || logits.size() < 2) {
    throw ShapeError("softmax_cross_entropy expects at least 2 logits, got " +
                     format_dims(logits.dims()));
  }
  if (label >= logits.size()) {
    throw DomainError("label " + std::to_string(label) + " out of range for " +
                      std::to_string(logits.size()) + " classes");
  }
}
}  // namespace detail

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label) {
  detail::check_label(logits, label);
  const auto x = logits.data();
  const T top = *std::max_element(x.begin(), x.end());
  T total{0};
  for (T v : x) total += std::exp(v - top);
  const T log_z = std::log(total);
  SoftmaxLoss<T> r{softmax(logits), log_z - (x[label] - top)};
  return r;
}

/// d loss / d logits = p − onehot(label).
template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probabilities,
                                         std::size_t label) {
  detail::check_label(probabilities, label);
  Tensor<T> g = probabilities;
  g[label] -= T{1};
  return g;
}

}  // namespace deepwriter

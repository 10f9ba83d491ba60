#pragma once

// Layer primitives with hand-written backward passes. All activations are
// N x H x W x C; dense activations are N x F.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "crfnet/nn/tensor.hpp"
#include "crfnet/random.hpp"

namespace crfnet::nn {

enum class Mode { training, inference };

enum class Padding { valid, same };

struct ConvGeometry {
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t pad_top = 0;
  std::size_t pad_left = 0;
};

/// Valid: out = floor((in - k) / stride) + 1, no padding.
/// Same:  out = ceil(in / stride); the total padding
///        max((out - 1) * stride + k - in, 0) is split with the extra row or
///        column at the bottom/right.
inline ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel,
                                  std::size_t stride, Padding padding) {
  require(stride >= 1, ErrorCode::invalid_argument, "convolution stride must be >= 1");
  ConvGeometry g;
  if (padding == Padding::valid) {
    require(in_h >= kernel && in_w >= kernel, ErrorCode::dimension_mismatch,
            "valid convolution kernel larger than its input");
    g.out_h = (in_h - kernel) / stride + 1;
    g.out_w = (in_w - kernel) / stride + 1;
    return g;
  }
  g.out_h = (in_h + stride - 1) / stride;
  g.out_w = (in_w + stride - 1) / stride;
  const auto total = [&](std::size_t in, std::size_t out) {
    const std::size_t span = (out - 1) * stride + kernel;
    return span > in ? span - in : 0;
  };
  g.pad_top = total(in_h, g.out_h) / 2;
  g.pad_left = total(in_w, g.out_w) / 2;
  return g;
}

inline void check_conv_shapes(const Tensor& input, const Tensor& kernel) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require(kernel.dim(0) == kernel.dim(1), ErrorCode::dimension_mismatch,
          "conv2d expects square kernels, got " + kernel.shape_string());
  require(kernel.dim(2) == input.dim(3), ErrorCode::dimension_mismatch,
          "conv2d kernel expects " + std::to_string(kernel.dim(2)) +
              " input channels, input has " + std::to_string(input.dim(3)));
}

/// 2-D cross-correlation without bias. Kernel layout KH x KW x C_in x C_out.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
                     Padding padding) {
  check_conv_shapes(input, kernel);
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
  const std::size_t k = kernel.dim(0), cout = kernel.dim(3);
  const ConvGeometry g = conv_geometry(h, w, k, stride, padding);
  Tensor out({n, g.out_h, g.out_w, cout});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        double* __restrict dst = &out.at(b, oh, ow, 0);
        for (std::size_t kh = 0; kh < k; ++kh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                          static_cast<std::ptrdiff_t>(g.pad_top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                            static_cast<std::ptrdiff_t>(g.pad_left);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* src = input.data() + input.offset(b, static_cast<std::size_t>(ih),
                                          static_cast<std::size_t>(iw), 0);
            const double* wk = kernel.data() + kernel.offset(kh, kw, 0, 0);
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double x = src[ci];
              const double* __restrict wrow = wk + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) dst[co] += x * wrow[co];
            }
          }
        }
      }
    }
  }
  return out;
}

/// Accumulates input and kernel gradients of conv2d.
inline void conv2d_backward(const Tensor& input, const Tensor& kernel, std::size_t stride,
                            Padding padding, const Tensor& grad_out, Tensor* grad_input,
                            Tensor& grad_kernel) {
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
  const std::size_t k = kernel.dim(0), cout = kernel.dim(3);
  const ConvGeometry g = conv_geometry(h, w, k, stride, padding);
  if (grad_input) *grad_input = Tensor(input.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const double* __restrict go = grad_out.data() + grad_out.offset(b, oh, ow, 0);
        for (std::size_t kh = 0; kh < k; ++kh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                          static_cast<std::ptrdiff_t>(g.pad_top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                            static_cast<std::ptrdiff_t>(g.pad_left);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t at = input.offset(b, static_cast<std::size_t>(ih),
                                                static_cast<std::size_t>(iw), 0);
            const double* src = input.data() + at;
            const double* wk = kernel.data() + kernel.offset(kh, kw, 0, 0);
            double* gk = &grad_kernel.at(kh, kw, 0, 0);
            double* gi = grad_input ? grad_input->data() + at : nullptr;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double x = src[ci];
              const double* __restrict wrow = wk + ci * cout;
              double* __restrict gkrow = gk + ci * cout;
              double acc = 0.0;
              for (std::size_t co = 0; co < cout; ++co) {
                gkrow[co] += x * go[co];
                acc += wrow[co] * go[co];
              }
              if (gi) gi[ci] += acc;
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalization over N, H, W for each channel.

constexpr double kBatchNormEpsilon = 1e-5;

struct BatchNormCache {
  std::vector<double> mean;
  std::vector<double> variance;  // biased batch variance
  std::vector<double> inv_std;
  Tensor normalized;             // x_hat
};

inline std::size_t channels_of(const Tensor& x) { return x.dim(x.rank() - 1); }

/// Training-mode transform: normalizes with the batch statistics.
inline Tensor batch_norm_train(const Tensor& x, std::span<const double> scale,
                               std::span<const double> shift, BatchNormCache& cache) {
  const std::size_t c = channels_of(x);
  require(scale.size() == c && shift.size() == c, ErrorCode::dimension_mismatch,
          "batch norm parameters do not match " + std::to_string(c) + " channels");
  require(x.size() > 0, ErrorCode::invalid_argument, "batch norm on an empty batch");
  const std::size_t count = x.size() / c;
  cache.mean.assign(c, 0.0);
  cache.variance.assign(c, 0.0);
  cache.inv_std.assign(c, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) cache.mean[i % c] += x[i];
  for (double& m : cache.mean) m /= static_cast<double>(count);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - cache.mean[i % c];
    cache.variance[i % c] += dx * dx;
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    cache.variance[ch] /= static_cast<double>(count);
    cache.inv_std[ch] = 1.0 / std::sqrt(cache.variance[ch] + kBatchNormEpsilon);
  }
  cache.normalized = Tensor(x.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t ch = i % c;
    const double xh = (x[i] - cache.mean[ch]) * cache.inv_std[ch];
    cache.normalized[i] = xh;
    out[i] = scale[ch] * xh + shift[ch];
  }
  return out;
}

/// Inference-mode transform with running statistics.
inline Tensor batch_norm_infer(const Tensor& x, std::span<const double> scale,
                               std::span<const double> shift,
                               std::span<const double> running_mean,
                               std::span<const double> running_var) {
  const std::size_t c = channels_of(x);
  require(scale.size() == c && shift.size() == c && running_mean.size() == c &&
              running_var.size() == c,
          ErrorCode::dimension_mismatch,
          "batch norm parameters do not match " + std::to_string(c) + " channels");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t ch = i % c;
    out[i] = scale[ch] * (x[i] - running_mean[ch]) / std::sqrt(running_var[ch] + kBatchNormEpsilon) +
             shift[ch];
  }
  return out;
}

inline void batch_norm_backward(const Tensor& grad_out, const BatchNormCache& cache,
                                std::span<const double> scale, Tensor& grad_x,
                                std::span<double> grad_scale, std::span<double> grad_shift) {
  const std::size_t c = scale.size();
  const double count = static_cast<double>(grad_out.size() / c);
  std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const std::size_t ch = i % c;
    sum_g[ch] += grad_out[i];
    sum_gx[ch] += grad_out[i] * cache.normalized[i];
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    grad_shift[ch] += sum_g[ch];
    grad_scale[ch] += sum_gx[ch];
  }
  grad_x = Tensor(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const std::size_t ch = i % c;
    grad_x[i] = scale[ch] * cache.inv_std[ch] *
                (grad_out[i] - sum_g[ch] / count - cache.normalized[i] * sum_gx[ch] / count);
  }
}

/// Learnable affine parameters plus running statistics of one normalization.
struct BatchNormState {
  std::vector<double> scale;
  std::vector<double> shift;
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : scale(channels, 1.0), shift(channels, 0.0), running_mean(channels, 0.0),
        running_var(channels, 1.0) {}
};

constexpr double kRunningStatMomentum = 0.1;

/// Folds one batch's statistics into the running estimates. The variance
/// estimate uses the unbiased batch variance.
inline void update_running_stats(std::span<double> running_mean, std::span<double> running_var,
                                 const BatchNormCache& cache, std::size_t count,
                                 double momentum = kRunningStatMomentum) {
  const double correction =
      count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
  for (std::size_t ch = 0; ch < running_mean.size(); ++ch) {
    running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * cache.mean[ch];
    running_var[ch] =
        (1.0 - momentum) * running_var[ch] + momentum * cache.variance[ch] * correction;
  }
}

/// Batch normalization in the requested mode. Training mode uses batch
/// statistics and updates the running estimates in `state`.
inline Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode) {
  if (mode == Mode::inference) {
    return batch_norm_infer(x, state.scale, state.shift, state.running_mean, state.running_var);
  }
  require(x.rank() > 0 && x.dim(0) > 0, ErrorCode::invalid_argument,
          "training-mode batch norm needs a nonempty batch");
  BatchNormCache cache;
  Tensor out = batch_norm_train(x, state.scale, state.shift, cache);
  update_running_stats(state.running_mean, state.running_var, cache,
                       x.size() / channels_of(x));
  return out;
}

// ---------------------------------------------------------------------------

inline void relu_inplace(Tensor& x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
}

/// Zeroes gradient entries where the forward output was not positive.
inline void relu_backward_inplace(const Tensor& output, Tensor& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(output[i] > 0.0)) grad[i] = 0.0;
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorCode::dimension_mismatch,
          "elementwise sum of " + a.shape_string() + " and " + b.shape_string());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

/// Channel-wise concatenation of two N x H x W x C tensors.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const std::size_t ca = a.dim(3), cb = b.dim(3);
  const std::size_t pixels = a.size() / ca;
  Tensor out({a.dim(0), a.dim(1), a.dim(2), ca + cb});
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(a.data() + p * ca, ca, out.data() + p * (ca + cb));
    std::copy_n(b.data() + p * cb, cb, out.data() + p * (ca + cb) + ca);
  }
  return out;
}

inline void split_channels(const Tensor& joined, std::size_t first, Tensor& a, Tensor& b) {
  const std::size_t c = joined.dim(3), second = c - first;
  const std::size_t pixels = joined.size() / c;
  a = Tensor({joined.dim(0), joined.dim(1), joined.dim(2), first});
  b = Tensor({joined.dim(0), joined.dim(1), joined.dim(2), second});
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(joined.data() + p * c, first, a.data() + p * first);
    std::copy_n(joined.data() + p * c + first, second, b.data() + p * second);
  }
}

/// N x H x W x C -> N x C.
inline Tensor global_average_pool(const Tensor& x) {
  require_rank(x, 4, "global average pool");
  const std::size_t n = x.dim(0), c = x.dim(3), area = x.dim(1) * x.dim(2);
  Tensor out({n, c});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < area; ++p) {
      const double* src = x.data() + (b * area + p) * c;
      for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] += src[ch];
    }
  }
  for (double& v : out.values()) v /= static_cast<double>(area);
  return out;
}

inline Tensor global_average_pool_backward(const Tensor& grad_out,
                                           const std::vector<std::size_t>& input_shape) {
  Tensor grad(input_shape);
  const std::size_t n = input_shape[0], c = input_shape[3],
                    area = input_shape[1] * input_shape[2];
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < area; ++p) {
      double* dst = grad.data() + (b * area + p) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        dst[ch] = grad_out[b * c + ch] / static_cast<double>(area);
      }
    }
  }
  return grad;
}

/// Fully-connected layer: y = x W + b with W stored in_features x out_features.
inline Tensor dense(const Tensor& x, std::span<const double> weights, std::span<const double> bias) {
  require_rank(x, 2, "dense input");
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = bias.size();
  require(weights.size() == in * out_f, ErrorCode::dimension_mismatch,
          "dense weights do not match " + std::to_string(in) + " inputs and " +
              std::to_string(out_f) + " outputs");
  Tensor y({n, out_f});
  for (std::size_t b = 0; b < n; ++b) {
    double* dst = y.data() + b * out_f;
    std::copy(bias.begin(), bias.end(), dst);
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x[b * in + i];
      const double* wrow = weights.data() + i * out_f;
      for (std::size_t o = 0; o < out_f; ++o) dst[o] += xi * wrow[o];
    }
  }
  return y;
}

inline Tensor dense_backward(const Tensor& x, std::span<const double> weights,
                             const Tensor& grad_out, std::span<double> grad_weights,
                             std::span<double> grad_bias) {
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = grad_bias.size();
  Tensor grad_x({n, in});
  for (std::size_t b = 0; b < n; ++b) {
    const double* go = grad_out.data() + b * out_f;
    for (std::size_t o = 0; o < out_f; ++o) grad_bias[o] += go[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x[b * in + i];
      const double* wrow = weights.data() + i * out_f;
      double* gw = grad_weights.data() + i * out_f;
      double acc = 0.0;
      for (std::size_t o = 0; o < out_f; ++o) {
        gw[o] += xi * go[o];
        acc += wrow[o] * go[o];
      }
      grad_x[b * in + i] = acc;
    }
  }
  return grad_x;
}

/// Inverted dropout mask: kept units are scaled by 1 / (1 - rate).
inline std::vector<double> dropout_mask(std::size_t size, double rate, std::uint64_t seed) {
  std::vector<double> mask(size, 1.0);
  if (rate <= 0.0) return mask;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

struct SoftmaxLoss {
  double loss = 0.0;   // mean cross-entropy
  Tensor grad_logits;  // d loss / d logits
};

inline std::vector<double> softmax(std::span<const double> logits) {
  double peak = logits[0];
  for (double v : logits) peak = std::max(peak, v);
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += p[i] = std::exp(logits[i] - peak);
  for (double& v : p) v /= total;
  return p;
}

inline SoftmaxLoss softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax cross-entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(labels.size() == n, ErrorCode::dimension_mismatch,
          "label count does not match the batch size");
  SoftmaxLoss out{0.0, Tensor({n, k})};
  for (std::size_t b = 0; b < n; ++b) {
    require(labels[b] < k, ErrorCode::label_out_of_range,
            "label " + std::to_string(labels[b]) + " outside 0.." + std::to_string(k - 1));
    const std::span<const double> row(logits.data() + b * k, k);
    double peak = row[0];
    for (double v : row) peak = std::max(peak, v);
    double total = 0.0;
    for (double v : row) total += std::exp(v - peak);
    const double log_norm = peak + std::log(total);
    out.loss += log_norm - row[labels[b]];
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(row[c] - log_norm);
      out.grad_logits[b * k + c] = (p - (c == labels[b] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  out.loss /= static_cast<double>(n);
  return out;
}

}  // namespace crfnet::nn

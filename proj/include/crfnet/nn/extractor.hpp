#pragma once

// Residual convolutional feature extractor.
//
// Topology: stem convolutions -> stages (residual units and stride-2
// reductions) -> global average pool -> dropout -> dense(feature_dim) + ReLU
// -> dense(num_classes). The hidden dense activations are the per-frame
// feature vector; the last layer produces class logits.
//
// A residual unit computes ReLU(x + F(x)) where F has two branches, a 1x1
// convolution and a 1x1 -> kxk stack, whose outputs are concatenated and
// projected back to the input width by a 1x1 convolution. The projection's
// normalization feeds the summation and therefore has no activation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "crfnet/nn/layers.hpp"
#include "crfnet/nn/tensor.hpp"
#include "crfnet/random.hpp"

namespace crfnet::nn {

struct ConvSpec {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Padding padding = Padding::same;
};

enum class StageKind { residual, reduction };

/// residual: `channels` is the width of each branch.
/// reduction: stride-2 kxk convolution to `channels` outputs.
struct StageSpec {
  StageKind kind = StageKind::residual;
  std::size_t channels = 8;
  std::size_t kernel = 3;
};

struct ExtractorConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t num_classes = 7;
  std::size_t feature_dim = 32;
  std::vector<ConvSpec> stem{{8, 3, 1, Padding::same}, {16, 3, 2, Padding::same}};
  std::vector<StageSpec> stages{{StageKind::residual, 8, 3},
                                {StageKind::residual, 8, 3},
                                {StageKind::reduction, 32, 3},
                                {StageKind::residual, 16, 3},
                                {StageKind::residual, 16, 3}};
  double dropout_rate = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    require(height > 0 && width > 0 && channels > 0, ErrorCode::invalid_argument,
            "extractor input dimensions must be positive");
    require(num_classes >= 2, ErrorCode::invalid_argument, "extractor needs >= 2 classes");
    require(feature_dim >= 1, ErrorCode::invalid_argument, "feature_dim must be >= 1");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorCode::invalid_argument,
            "dropout_rate must lie in [0, 1)");
    for (const auto& s : stem) {
      require(s.out_channels > 0 && s.kernel > 0 && s.stride > 0, ErrorCode::invalid_argument,
              "stem convolution sizes must be positive");
    }
    for (const auto& s : stages) {
      require(s.channels > 0 && s.kernel > 0, ErrorCode::invalid_argument,
              "stage sizes must be positive");
    }
  }
};

/// Convolution followed by batch normalization and an optional ReLU.
struct ConvBn {
  ConvSpec spec;
  bool relu = true;
  Tensor kernel;  // KH x KW x C_in x C_out
  BatchNormState norm;
};

struct ResidualUnit {
  ConvBn branch_a;        // 1x1
  ConvBn branch_b_in;     // 1x1
  ConvBn branch_b_out;    // kxk
  ConvBn project;         // 1x1 back to the input width, no ReLU
};

using Stage = std::variant<ResidualUnit, ConvBn>;

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // in x out
  std::vector<double> bias;
};

struct ExtractorModel {
  ExtractorConfig config;
  std::vector<ConvBn> stem;
  std::vector<Stage> stages;
  Dense hidden;
  Dense output;
};

// ---------------------------------------------------------------------------
// Parameter enumeration. Visitors see learnable parameters in a fixed order;
// running statistics are visited separately.

struct ParameterView {
  std::string name;
  std::span<double> values;
};

namespace detail {

template <typename Model, typename Fn>
void visit_conv(Model& c, const std::string& name, Fn& fn) {
  fn(name + ".kernel", std::span<double>(c.kernel.storage()));
  fn(name + ".scale", std::span<double>(c.norm.scale));
  fn(name + ".shift", std::span<double>(c.norm.shift));
}

template <typename Fn>
void visit_conv_stats(ConvBn& c, const std::string& name, Fn& fn) {
  fn(name + ".running_mean", std::span<double>(c.norm.running_mean));
  fn(name + ".running_var", std::span<double>(c.norm.running_var));
}

template <typename Fn, typename ConvFn>
void walk_convs(ExtractorModel& m, ConvFn&& conv_fn, Fn& fn) {
  for (std::size_t i = 0; i < m.stem.size(); ++i) conv_fn(m.stem[i], "stem" + std::to_string(i), fn);
  for (std::size_t i = 0; i < m.stages.size(); ++i) {
    const std::string base = "stage" + std::to_string(i);
    if (auto* unit = std::get_if<ResidualUnit>(&m.stages[i])) {
      conv_fn(unit->branch_a, base + ".branch_a", fn);
      conv_fn(unit->branch_b_in, base + ".branch_b_in", fn);
      conv_fn(unit->branch_b_out, base + ".branch_b_out", fn);
      conv_fn(unit->project, base + ".project", fn);
    } else {
      conv_fn(std::get<ConvBn>(m.stages[i]), base + ".reduce", fn);
    }
  }
}

}  // namespace detail

/// Calls fn(name, span) for every learnable parameter block.
template <typename Fn>
void for_each_parameter(ExtractorModel& m, Fn&& fn) {
  detail::walk_convs(m, [](ConvBn& c, const std::string& n, auto& f) { detail::visit_conv(c, n, f); }, fn);
  fn("hidden.weights", std::span<double>(m.hidden.weights));
  fn("hidden.bias", std::span<double>(m.hidden.bias));
  fn("output.weights", std::span<double>(m.output.weights));
  fn("output.bias", std::span<double>(m.output.bias));
}

/// Calls fn(name, span) for every normalization running statistic.
template <typename Fn>
void for_each_statistic(ExtractorModel& m, Fn&& fn) {
  detail::walk_convs(m, [](ConvBn& c, const std::string& n, auto& f) { detail::visit_conv_stats(c, n, f); }, fn);
}

inline std::vector<ParameterView> parameters(ExtractorModel& m) {
  std::vector<ParameterView> out;
  for_each_parameter(m, [&](const std::string& n, std::span<double> v) { out.push_back({n, v}); });
  return out;
}

inline std::vector<ParameterView> statistics(ExtractorModel& m) {
  std::vector<ParameterView> out;
  for_each_statistic(m, [&](const std::string& n, std::span<double> v) { out.push_back({n, v}); });
  return out;
}

inline std::vector<double> flatten_parameters(const ExtractorModel& m) {
  std::vector<double> flat;
  for (const auto& p : parameters(const_cast<ExtractorModel&>(m))) {
    flat.insert(flat.end(), p.values.begin(), p.values.end());
  }
  return flat;
}

inline void assign_parameters(ExtractorModel& m, std::span<const double> flat) {
  std::size_t at = 0;
  for (auto& p : parameters(m)) {
    require(at + p.values.size() <= flat.size(), ErrorCode::dimension_mismatch,
            "flat parameter vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), p.values.size(), p.values.begin());
    at += p.values.size();
  }
  require(at == flat.size(), ErrorCode::dimension_mismatch, "flat parameter vector too long");
}

// ---------------------------------------------------------------------------
// Construction.

namespace detail {

// Centered uniform initialization: U(-a, a) with a = sqrt(6 / fan_in).
inline void fill_uniform(std::span<double> values, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : values) v = rng.uniform(-bound, bound);
}

inline ConvBn make_conv(const ConvSpec& spec, std::size_t in_channels, bool relu, Rng& rng) {
  ConvBn c;
  c.spec = spec;
  c.relu = relu;
  c.kernel = Tensor({spec.kernel, spec.kernel, in_channels, spec.out_channels});
  fill_uniform(c.kernel.values(), spec.kernel * spec.kernel * in_channels, rng);
  c.norm = BatchNormState(spec.out_channels);
  return c;
}

inline Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
  Dense d{in, out, std::vector<double>(in * out), std::vector<double>(out, 0.0)};
  fill_uniform(d.weights, in, rng);
  return d;
}

}  // namespace detail

inline ExtractorModel make_extractor(const ExtractorConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 0x5eed));
  ExtractorModel m;
  m.config = config;
  std::size_t width = config.channels;
  for (const auto& s : config.stem) {
    m.stem.push_back(detail::make_conv(s, width, true, rng));
    width = s.out_channels;
  }
  for (const auto& s : config.stages) {
    if (s.kind == StageKind::residual) {
      ResidualUnit u;
      u.branch_a = detail::make_conv({s.channels, 1, 1, Padding::same}, width, true, rng);
      u.branch_b_in = detail::make_conv({s.channels, 1, 1, Padding::same}, width, true, rng);
      u.branch_b_out = detail::make_conv({s.channels, s.kernel, 1, Padding::same}, s.channels, true, rng);
      u.project = detail::make_conv({width, 1, 1, Padding::same}, 2 * s.channels, false, rng);
      m.stages.emplace_back(std::move(u));
    } else {
      m.stages.emplace_back(detail::make_conv({s.channels, s.kernel, 2, Padding::same}, width, true, rng));
      width = s.channels;
    }
  }
  m.hidden = detail::make_dense(width, config.feature_dim, rng);
  m.output = detail::make_dense(config.feature_dim, config.num_classes, rng);
  return m;
}

/// A model of the same structure with every learnable parameter zeroed; used
/// to accumulate gradients.
inline ExtractorModel zeros_like(const ExtractorModel& m) {
  ExtractorModel z = m;
  for (auto& p : parameters(z)) std::fill(p.values.begin(), p.values.end(), 0.0);
  return z;
}

// ---------------------------------------------------------------------------
// Forward and backward passes.

struct ConvTrace {
  Tensor input;
  BatchNormCache norm;
  Tensor output;  // after the optional ReLU
};

struct ResidualTrace {
  Tensor input;
  ConvTrace a, b_in, b_out, project;
  Tensor output;
};

struct ForwardTrace {
  std::vector<ConvTrace> stem;
  std::vector<std::variant<ResidualTrace, ConvTrace>> stages;
  Tensor pooled_input;  // last spatial activation
  Tensor pooled;        // N x C
  std::vector<double> dropout_mask;
  Tensor dropped;       // pooled after dropout
  Tensor hidden;        // post-ReLU features
  Tensor logits;
};

struct ForwardResult {
  Tensor logits;    // N x K
  Tensor features;  // N x feature_dim
};

namespace detail {

inline Tensor conv_forward(const ConvBn& c, const Tensor& x, Mode mode, ConvTrace* trace) {
  Tensor z = conv2d(x, c.kernel, c.spec.stride, c.spec.padding);
  Tensor y;
  if (mode == Mode::training) {
    BatchNormCache cache;
    y = batch_norm_train(z, c.norm.scale, c.norm.shift, cache);
    if (trace) trace->norm = std::move(cache);
  } else {
    y = batch_norm_infer(z, c.norm.scale, c.norm.shift, c.norm.running_mean, c.norm.running_var);
  }
  if (c.relu) relu_inplace(y);
  if (trace) {
    trace->input = x;
    trace->output = y;
  }
  return y;
}

inline Tensor conv_backward(const ConvBn& c, const ConvTrace& trace, Tensor grad, ConvBn& g,
                            bool need_input_grad = true) {
  if (c.relu) relu_backward_inplace(trace.output, grad);
  Tensor grad_z;
  batch_norm_backward(grad, trace.norm, c.norm.scale, grad_z, g.norm.scale, g.norm.shift);
  Tensor grad_x;
  conv2d_backward(trace.input, c.kernel, c.spec.stride, c.spec.padding, grad_z,
                  need_input_grad ? &grad_x : nullptr, g.kernel);
  return grad_x;
}

}  // namespace detail

/// Residual unit: ReLU(x + F(x)).
inline Tensor residual_block(const ResidualUnit& u, const Tensor& x, Mode mode,
                             ResidualTrace* trace = nullptr) {
  ConvTrace* ta = trace ? &trace->a : nullptr;
  ConvTrace* tbi = trace ? &trace->b_in : nullptr;
  ConvTrace* tbo = trace ? &trace->b_out : nullptr;
  ConvTrace* tp = trace ? &trace->project : nullptr;
  Tensor a = detail::conv_forward(u.branch_a, x, mode, ta);
  Tensor b = detail::conv_forward(u.branch_b_in, x, mode, tbi);
  b = detail::conv_forward(u.branch_b_out, b, mode, tbo);
  Tensor branch = detail::conv_forward(u.project, concat_channels(a, b), mode, tp);
  require(branch.shape() == x.shape(), ErrorCode::dimension_mismatch,
          "residual branch output " + branch.shape_string() + " does not match input " +
              x.shape_string());
  Tensor y = add(x, branch);
  relu_inplace(y);
  if (trace) {
    trace->input = x;
    trace->output = y;
  }
  return y;
}

/// Backward through a residual unit; accumulates into `g` and returns the
/// input gradient.
inline Tensor residual_block_backward(const ResidualUnit& u, const ResidualTrace& trace,
                                      Tensor grad, ResidualUnit& g) {
  relu_backward_inplace(trace.output, grad);
  Tensor grad_joined = detail::conv_backward(u.project, trace.project, grad, g.project);
  Tensor grad_a, grad_b;
  split_channels(grad_joined, u.branch_a.spec.out_channels, grad_a, grad_b);
  Tensor gx = std::move(grad);  // identity path
  Tensor ga = detail::conv_backward(u.branch_a, trace.a, std::move(grad_a), g.branch_a);
  Tensor gb = detail::conv_backward(u.branch_b_out, trace.b_out, std::move(grad_b), g.branch_b_out);
  gb = detail::conv_backward(u.branch_b_in, trace.b_in, std::move(gb), g.branch_b_in);
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ga[i] + gb[i];
  return gx;
}

inline void check_batch(const ExtractorConfig& cfg, const Tensor& batch) {
  require(batch.rank() == 4 && batch.dim(0) > 0 && batch.dim(1) == cfg.height &&
              batch.dim(2) == cfg.width && batch.dim(3) == cfg.channels,
          ErrorCode::dimension_mismatch,
          "batch shape " + batch.shape_string() + " does not match extractor input " +
              std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + "x" +
              std::to_string(cfg.channels));
}

/// Runs the network on an N x H x W x C batch. In training mode normalization
/// uses batch statistics and dropout draws its mask from `dropout_seed`;
/// inference mode is deterministic.
inline ForwardResult forward(const ExtractorModel& m, const Tensor& batch, Mode mode,
                             std::uint64_t dropout_seed = 0, ForwardTrace* trace = nullptr) {
  check_batch(m.config, batch);
  Tensor x = batch;
  if (trace) {
    trace->stem.assign(m.stem.size(), {});
    trace->stages.clear();
  }
  for (std::size_t i = 0; i < m.stem.size(); ++i) {
    x = detail::conv_forward(m.stem[i], x, mode, trace ? &trace->stem[i] : nullptr);
  }
  for (const auto& stage : m.stages) {
    if (const auto* unit = std::get_if<ResidualUnit>(&stage)) {
      if (trace) {
        trace->stages.emplace_back(ResidualTrace{});
        x = residual_block(*unit, x, mode, &std::get<ResidualTrace>(trace->stages.back()));
      } else {
        x = residual_block(*unit, x, mode);
      }
    } else {
      if (trace) {
        trace->stages.emplace_back(ConvTrace{});
        x = detail::conv_forward(std::get<ConvBn>(stage), x, mode,
                                 &std::get<ConvTrace>(trace->stages.back()));
      } else {
        x = detail::conv_forward(std::get<ConvBn>(stage), x, mode, nullptr);
      }
    }
  }
  Tensor pooled = global_average_pool(x);
  Tensor dropped = pooled;
  std::vector<double> mask;
  if (mode == Mode::training && m.config.dropout_rate > 0.0) {
    mask = dropout_mask(pooled.size(), m.config.dropout_rate, dropout_seed);
    for (std::size_t i = 0; i < dropped.size(); ++i) dropped[i] *= mask[i];
  }
  Tensor hidden = dense(dropped, m.hidden.weights, m.hidden.bias);
  relu_inplace(hidden);
  Tensor logits = dense(hidden, m.output.weights, m.output.bias);
  if (trace) {
    trace->pooled_input = std::move(x);
    trace->pooled = std::move(pooled);
    trace->dropout_mask = std::move(mask);
    trace->dropped = std::move(dropped);
    trace->hidden = hidden;
    trace->logits = logits;
  }
  return {std::move(logits), std::move(hidden)};
}

struct BackwardResult {
  double loss = 0.0;
  ExtractorModel gradients;  // same structure as the model; statistics unused
  ForwardTrace trace;
};

/// Mean softmax cross-entropy of a training-mode forward pass and its
/// gradient with respect to every learnable parameter.
inline BackwardResult backward(const ExtractorModel& m, const Tensor& batch,
                               std::span<const std::size_t> labels,
                               std::uint64_t dropout_seed = 0) {
  BackwardResult r;
  forward(m, batch, Mode::training, dropout_seed, &r.trace);
  const ForwardTrace& tr = r.trace;
  SoftmaxLoss sl = softmax_cross_entropy(tr.logits, labels);
  r.loss = sl.loss;
  r.gradients = zeros_like(m);
  ExtractorModel& g = r.gradients;

  Tensor grad_hidden = dense_backward(tr.hidden, m.output.weights, sl.grad_logits,
                                      g.output.weights, g.output.bias);
  relu_backward_inplace(tr.hidden, grad_hidden);
  Tensor grad = dense_backward(tr.dropped, m.hidden.weights, grad_hidden, g.hidden.weights,
                               g.hidden.bias);
  if (!tr.dropout_mask.empty()) {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= tr.dropout_mask[i];
  }
  grad = global_average_pool_backward(grad, tr.pooled_input.shape());

  for (std::size_t i = m.stages.size(); i-- > 0;) {
    if (const auto* unit = std::get_if<ResidualUnit>(&m.stages[i])) {
      grad = residual_block_backward(*unit, std::get<ResidualTrace>(tr.stages[i]), std::move(grad),
                                     std::get<ResidualUnit>(g.stages[i]));
    } else {
      grad = detail::conv_backward(std::get<ConvBn>(m.stages[i]), std::get<ConvTrace>(tr.stages[i]),
                                   std::move(grad), std::get<ConvBn>(g.stages[i]));
    }
  }
  for (std::size_t i = m.stem.size(); i-- > 0;) {
    grad = detail::conv_backward(m.stem[i], tr.stem[i], std::move(grad), g.stem[i], i > 0);
  }
  return r;
}

/// Folds the batch statistics recorded in a training-mode trace into the
/// model's running estimates.
inline void update_running_statistics(ExtractorModel& m, const ForwardTrace& trace,
                                      double momentum = kRunningStatMomentum) {
  auto fold = [&](ConvBn& c, const ConvTrace& t) {
    update_running_stats(c.norm.running_mean, c.norm.running_var, t.norm,
                         t.norm.normalized.size() / c.norm.scale.size(), momentum);
  };
  for (std::size_t i = 0; i < m.stem.size(); ++i) fold(m.stem[i], trace.stem[i]);
  for (std::size_t i = 0; i < m.stages.size(); ++i) {
    if (auto* unit = std::get_if<ResidualUnit>(&m.stages[i])) {
      const auto& t = std::get<ResidualTrace>(trace.stages[i]);
      fold(unit->branch_a, t.a);
      fold(unit->branch_b_in, t.b_in);
      fold(unit->branch_b_out, t.b_out);
      fold(unit->project, t.project);
    } else {
      fold(std::get<ConvBn>(m.stages[i]), std::get<ConvTrace>(trace.stages[i]));
    }
  }
}

}  // namespace crfnet::nn

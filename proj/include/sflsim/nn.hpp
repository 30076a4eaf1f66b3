#pragma once

// Dense training core. Layers are applied over half-open index ranges
// [from, to) of a LayerStack so any consecutive slice can run on its own;
// running [a, b) then [b, c) performs exactly the same floating-point
// operations as running [a, c).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sflsim/common.hpp"
#include "sflsim/rng.hpp"
#include "sflsim/tensor.hpp"

namespace sflsim {

enum class LayerKind { kDense, kReLU };

struct Layer {
  LayerKind kind = LayerKind::kReLU;
  std::size_t in_width = 0;
  std::size_t out_width = 0;
  bool has_bias = false;
  std::vector<double> weight;  // in_width x out_width, row-major
  std::vector<double> bias;    // out_width, empty when !has_bias

  static Layer dense(std::size_t in, std::size_t out, bool with_bias = true) {
    if (in == 0 || out == 0) throw ShapeError("dense layer widths must be positive");
    Layer l;
    l.kind = LayerKind::kDense;
    l.in_width = in;
    l.out_width = out;
    l.has_bias = with_bias;
    l.weight.assign(in * out, 0.0);
    if (with_bias) l.bias.assign(out, 0.0);
    return l;
  }

  static Layer relu(std::size_t width) {
    if (width == 0) throw ShapeError("relu width must be positive");
    Layer l;
    l.kind = LayerKind::kReLU;
    l.in_width = width;
    l.out_width = width;
    return l;
  }

  std::size_t param_count() const { return weight.size() + bias.size(); }

  void validate() const {
    if (kind == LayerKind::kDense) {
      if (weight.size() != in_width * out_width) throw ShapeError("dense weight shape mismatch");
      if (bias.size() != (has_bias ? out_width : 0)) throw ShapeError("dense bias shape mismatch");
    } else {
      if (in_width != out_width || !weight.empty() || !bias.empty()) {
        throw ShapeError("relu layer carries parameters or changes width");
      }
    }
  }

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Gradient of one layer's parameters; empty vectors for parameterless layers.
struct LayerGrad {
  std::vector<double> weight;
  std::vector<double> bias;
};

class LayerStack {
 public:
  LayerStack() = default;
  explicit LayerStack(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  std::size_t layer_count() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t input_width() const { return layers_.front().in_width; }
  std::size_t output_width() const { return layers_.back().out_width; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.param_count();
    return n;
  }

  /// Copy of layers [from, to).
  LayerStack slice(std::size_t from, std::size_t to) const {
    if (from > to || to > layers_.size()) throw ShapeError("slice out of range");
    return LayerStack(std::vector<Layer>(layers_.begin() + static_cast<std::ptrdiff_t>(from),
                                         layers_.begin() + static_cast<std::ptrdiff_t>(to)));
  }

  void validate() const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].validate();
      if (i > 0 && layers_[i - 1].out_width != layers_[i].in_width) {
        throw ShapeError("layer " + std::to_string(i) + " input width " +
                         std::to_string(layers_[i].in_width) + " != previous output width " +
                         std::to_string(layers_[i - 1].out_width));
      }
    }
  }

  /// Bit-level fingerprint of every parameter and shape.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    for (const auto& l : layers_) {
      h.update(static_cast<std::uint64_t>(l.kind));
      h.update(static_cast<std::uint64_t>(l.in_width));
      h.update(static_cast<std::uint64_t>(l.out_width));
      for (double w : l.weight) h.update(w);
      for (double b : l.bias) h.update(b);
    }
    return h.digest();
  }

  friend bool operator==(const LayerStack&, const LayerStack&) = default;

 private:
  std::vector<Layer> layers_;
};

inline LayerStack concat(std::initializer_list<const LayerStack*> parts) {
  std::vector<Layer> all;
  for (const LayerStack* p : parts) all.insert(all.end(), p->layers().begin(), p->layers().end());
  return LayerStack(std::move(all));
}

/// Dense/ReLU MLP: input -> hidden... -> classes, ReLU between dense layers.
inline LayerStack make_mlp(std::size_t input, const std::vector<std::size_t>& hidden,
                           std::size_t classes) {
  std::vector<Layer> layers;
  std::size_t width = input;
  for (std::size_t h : hidden) {
    layers.push_back(Layer::dense(width, h));
    layers.push_back(Layer::relu(h));
    width = h;
  }
  layers.push_back(Layer::dense(width, classes));
  return LayerStack(std::move(layers));
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline void init_uniform_fan_in(LayerStack& stack, Rng& rng) {
  for (std::size_t i = 0; i < stack.layer_count(); ++i) {
    Layer& l = stack.layer(i);
    if (l.kind != LayerKind::kDense) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_width));
    for (double& w : l.weight) w = rng.uniform(-bound, bound);
    for (double& b : l.bias) b = rng.uniform(-bound, bound);
  }
}

/// Intermediates cached by forward() for the matching backward().
struct Tape {
  std::size_t from = 0;
  std::size_t to = 0;
  std::vector<Tensor2D> inputs;  // input of each layer in [from, to)
};

struct ForwardResult {
  Tensor2D output;
  Tape tape;
};

struct BackwardResult {
  std::vector<LayerGrad> param_grads;  // one per layer in [from, to)
  Tensor2D input_grad;
};

namespace detail {

inline Tensor2D dense_forward(const Layer& l, const Tensor2D& x) {
  Tensor2D y(x.rows(), l.out_width);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto out = y.row(r);
    if (l.has_bias) std::copy(l.bias.begin(), l.bias.end(), out.begin());
    const auto in = x.row(r);
    for (std::size_t i = 0; i < l.in_width; ++i) {
      const double xi = in[i];
      const double* w = l.weight.data() + i * l.out_width;
      for (std::size_t o = 0; o < l.out_width; ++o) out[o] += xi * w[o];
    }
  }
  return y;
}

inline Tensor2D relu_forward(const Tensor2D& x) {
  Tensor2D y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

}  // namespace detail

/// Runs layers [from, to) of `stack` on `input`.
inline ForwardResult forward(const LayerStack& stack, const Tensor2D& input, std::size_t from,
                             std::size_t to) {
  if (from > to || to > stack.layer_count()) {
    throw ShapeError("forward range [" + std::to_string(from) + ", " + std::to_string(to) +
                     ") outside stack of " + std::to_string(stack.layer_count()));
  }
  if (from < to && input.cols() != stack.layer(from).in_width) {
    throw ShapeError("forward input width " + std::to_string(input.cols()) + " != layer " +
                     std::to_string(from) + " width " +
                     std::to_string(stack.layer(from).in_width));
  }
  ForwardResult res;
  res.tape.from = from;
  res.tape.to = to;
  res.tape.inputs.reserve(to - from);
  Tensor2D x = input;
  for (std::size_t i = from; i < to; ++i) {
    const Layer& l = stack.layer(i);
    Tensor2D y = l.kind == LayerKind::kDense ? detail::dense_forward(l, x) : detail::relu_forward(x);
    require_finite(y, "forward output of layer " + std::to_string(i));
    res.tape.inputs.push_back(std::move(x));
    x = std::move(y);
  }
  res.output = std::move(x);
  return res;
}

inline ForwardResult forward(const LayerStack& stack, const Tensor2D& input) {
  return forward(stack, input, 0, stack.layer_count());
}

/// Backpropagates `upstream` (gradient w.r.t. the output of layer to-1)
/// through [from, to), which must match the tape.
inline BackwardResult backward(const LayerStack& stack, const Tape& tape, const Tensor2D& upstream,
                               std::size_t from, std::size_t to) {
  if (tape.from != from || tape.to != to || tape.inputs.size() != to - from ||
      to > stack.layer_count()) {
    throw ShapeError("tape does not match backward range");
  }
  const std::size_t expected_cols = from < to ? stack.layer(to - 1).out_width : upstream.cols();
  if (upstream.cols() != expected_cols) throw ShapeError("upstream gradient width mismatch");
  for (std::size_t k = 0; k < tape.inputs.size(); ++k) {
    if (tape.inputs[k].rows() != upstream.rows()) throw ShapeError("tape batch size mismatch");
  }

  BackwardResult res;
  res.param_grads.resize(to - from);
  Tensor2D g = upstream;
  for (std::size_t i = to; i-- > from;) {
    const Layer& l = stack.layer(i);
    const Tensor2D& x = tape.inputs[i - from];
    if (l.kind == LayerKind::kReLU) {
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (!(x.data()[k] > 0.0)) g.data()[k] = 0.0;
      }
      continue;
    }
    LayerGrad& pg = res.param_grads[i - from];
    pg.weight.assign(l.weight.size(), 0.0);
    if (l.has_bias) pg.bias.assign(l.out_width, 0.0);
    Tensor2D dx(x.rows(), l.in_width);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto xr = x.row(r);
      const auto gr = g.row(r);
      auto dxr = dx.row(r);
      for (std::size_t in = 0; in < l.in_width; ++in) {
        const double xi = xr[in];
        double* dw = pg.weight.data() + in * l.out_width;
        const double* w = l.weight.data() + in * l.out_width;
        double acc = 0.0;
        for (std::size_t o = 0; o < l.out_width; ++o) {
          dw[o] += xi * gr[o];
          acc += gr[o] * w[o];
        }
        dxr[in] = acc;
      }
      if (l.has_bias) {
        for (std::size_t o = 0; o < l.out_width; ++o) pg.bias[o] += gr[o];
      }
    }
    g = std::move(dx);
    require_finite(g, "input gradient of layer " + std::to_string(i));
  }
  res.input_grad = std::move(g);
  return res;
}

struct LossResult {
  double loss = 0.0;  // mean cross-entropy over the batch
  Tensor2D logit_grad;
};

/// Softmax cross-entropy averaged over the batch.
inline LossResult loss_and_grad(const Tensor2D& logits, std::span<const Label> labels) {
  if (labels.size() != logits.rows()) throw ShapeError("label count != batch rows");
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  LossResult res;
  res.logit_grad = Tensor2D(n, classes);
  if (n == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= classes) {
      throw ShapeError("label " + std::to_string(labels[r]) + " out of range [0, " +
                       std::to_string(classes) + ")");
    }
    const auto z = logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - m);
    const double log_denom = std::log(denom);
    total += log_denom - (z[labels[r]] - m);
    auto gr = res.logit_grad.row(r);
    for (std::size_t c = 0; c < classes; ++c) gr[c] = std::exp(z[c] - m - log_denom) * inv_n;
    gr[labels[r]] -= inv_n;
  }
  res.loss = total * inv_n;
  if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");
  require_finite(res.logit_grad, "logit gradient");
  return res;
}

/// Row-wise softmax probabilities.
inline Tensor2D softmax(const Tensor2D& logits) {
  Tensor2D p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - m);
    auto pr = p.row(r);
    for (std::size_t c = 0; c < z.size(); ++c) pr[c] = std::exp(z[c] - m) / denom;
  }
  return p;
}

/// w <- w - lr * (g + l2 * w) for one layer.
inline void sgd_step(Layer& layer, const LayerGrad& grad, double lr, double l2_lambda) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (l2_lambda < 0.0) throw ConfigError("l2 lambda must be non-negative");
  if (grad.weight.size() != layer.weight.size() || grad.bias.size() != layer.bias.size()) {
    throw ShapeError("gradient shape does not match layer parameters");
  }
  for (std::size_t k = 0; k < layer.weight.size(); ++k) {
    layer.weight[k] -= lr * (grad.weight[k] + l2_lambda * layer.weight[k]);
  }
  for (std::size_t k = 0; k < layer.bias.size(); ++k) {
    layer.bias[k] -= lr * (grad.bias[k] + l2_lambda * layer.bias[k]);
  }
}

/// Applies per-layer gradients to layers [from, from + grads.size()).
inline void sgd_step(LayerStack& stack, const std::vector<LayerGrad>& grads, std::size_t from,
                     double lr, double l2_lambda) {
  if (from + grads.size() > stack.layer_count()) throw ShapeError("gradient range out of stack");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    sgd_step(stack.layer(from + k), grads[k], lr, l2_lambda);
  }
}

struct OptimizerConfig {
  double learning_rate = 0.05;
  double decay = 0.993;
  double min_lr = 0.005;
  std::size_t batch_size = 64;

  void validate() const {
    if (!(min_lr > 0.0) || !(min_lr <= learning_rate)) {
      throw ConfigError("optimizer: require 0 < min_lr <= learning_rate");
    }
    if (!(decay > 0.0) || !(decay <= 1.0)) throw ConfigError("optimizer: require 0 < decay <= 1");
    if (batch_size == 0) throw ConfigError("optimizer: batch_size must be positive");
  }

  /// Learning rate for 0-based round `round`.
  double lr_at(std::size_t round) const {
    return std::max(min_lr, learning_rate * std::pow(decay, static_cast<double>(round)));
  }
};

}  // namespace sflsim

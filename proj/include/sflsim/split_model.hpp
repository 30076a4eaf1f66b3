#pragma once

// Cutting a LayerStack into client/server parts, the packets exchanged
// between them, and weighted parameter averaging.

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sflsim/nn.hpp"

namespace sflsim {

/// part-1 = [0, cut1), part-2a = [cut1, cut2), part-2b = [cut2, n).
/// Without cut2 the whole server side is part-2a and part-2b is empty.
struct SplitSpec {
  std::size_t cut1 = 1;
  std::optional<std::size_t> cut2;

  void validate(std::size_t layer_count) const {
    if (cut1 == 0 || cut1 >= layer_count) {
      throw ConfigError("split: cut1=" + std::to_string(cut1) + " must satisfy 0 < cut1 < " +
                        std::to_string(layer_count));
    }
    if (cut2 && (*cut2 <= cut1 || *cut2 >= layer_count)) {
      throw ConfigError("split: cut2=" + std::to_string(*cut2) + " must satisfy " +
                        std::to_string(cut1) + " < cut2 < " + std::to_string(layer_count));
    }
  }
};

struct SplitParts {
  LayerStack part1;
  LayerStack part2a;
  LayerStack part2b;

  LayerStack joined() const { return concat({&part1, &part2a, &part2b}); }
};

inline SplitParts split(const LayerStack& stack, const SplitSpec& spec) {
  spec.validate(stack.layer_count());
  const std::size_t n = stack.layer_count();
  const std::size_t c2 = spec.cut2.value_or(n);
  return {stack.slice(0, spec.cut1), stack.slice(spec.cut1, c2), stack.slice(c2, n)};
}

struct ActivationPacket {
  ClientId client_id = 0;
  Tensor2D activations;
  std::vector<Label> labels;
  std::size_t batch_index = 0;
};

struct GradientPacket {
  ClientId client_id = 0;
  Tensor2D gradients;
  std::size_t batch_index = 0;
};

/// Client half of split training: owns a part-1 replica and the tape of the
/// batch currently in flight.
class SplitClient {
 public:
  SplitClient(ClientId id, LayerStack part1) : id_(id), part1_(std::move(part1)) {}

  ClientId id() const { return id_; }
  const LayerStack& part1() const { return part1_; }
  LayerStack& part1() { return part1_; }

  ActivationPacket send_activations(const Tensor2D& features, std::vector<Label> labels,
                                    std::size_t batch_index) {
    auto fwd = forward(part1_, features);
    tape_ = std::move(fwd.tape);
    in_flight_ = batch_index;
    return {id_, std::move(fwd.output), std::move(labels), batch_index};
  }

  /// Backpropagates the server's cut-layer gradient and steps part-1.
  /// lr == 0 freezes part-1.
  void receive_gradients(const GradientPacket& packet, double lr, double l2_lambda) {
    if (packet.client_id != id_ || !in_flight_ || *in_flight_ != packet.batch_index) {
      throw ShapeError("gradient packet does not match the batch in flight");
    }
    auto back = backward(part1_, tape_, packet.gradients, 0, part1_.layer_count());
    if (lr > 0.0) sgd_step(part1_, back.param_grads, 0, lr, l2_lambda);
    in_flight_.reset();
  }

 private:
  ClientId id_;
  LayerStack part1_;
  Tape tape_;
  std::optional<std::size_t> in_flight_;
};

struct WeightedReplica {
  ClientId client_id;
  std::reference_wrapper<const LayerStack> params;
  double weight;
};

/// Weighted elementwise mean. Items are summed in ascending client_id order as
/// anchor + sum_i (w_i / W) * (x_i - anchor), anchor being the first replica;
/// identical replicas therefore average to themselves bit-exactly.
inline LayerStack fedavg(std::vector<WeightedReplica> replicas) {
  if (replicas.empty()) throw ShapeError("fedavg: no replicas");
  std::stable_sort(replicas.begin(), replicas.end(),
                   [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  double total = 0.0;
  for (const auto& r : replicas) {
    if (!(r.weight >= 0.0)) throw ConfigError("fedavg: weights must be non-negative");
    total += r.weight;
  }
  if (!(total > 0.0)) throw ConfigError("fedavg: weights sum to zero");

  const LayerStack& anchor = replicas.front().params.get();
  for (const auto& r : replicas) {
    const LayerStack& s = r.params.get();
    if (s.layer_count() != anchor.layer_count()) throw ShapeError("fedavg: layer count mismatch");
    for (std::size_t i = 0; i < s.layer_count(); ++i) {
      const Layer& a = anchor.layer(i);
      const Layer& b = s.layer(i);
      if (a.kind != b.kind || a.in_width != b.in_width || a.out_width != b.out_width ||
          a.has_bias != b.has_bias) {
        throw ShapeError("fedavg: layer " + std::to_string(i) + " shape mismatch");
      }
    }
  }

  LayerStack out = anchor;
  for (std::size_t i = 0; i < out.layer_count(); ++i) {
    Layer& dst = out.layer(i);
    const Layer& a = anchor.layer(i);
    for (const auto& r : replicas) {
      const double w = r.weight / total;
      if (w == 0.0) continue;
      const Layer& src = r.params.get().layer(i);
      for (std::size_t k = 0; k < dst.weight.size(); ++k) dst.weight[k] += w * (src.weight[k] - a.weight[k]);
      for (std::size_t k = 0; k < dst.bias.size(); ++k) dst.bias[k] += w * (src.bias[k] - a.bias[k]);
    }
  }
  return out;
}

/// Convenience overload with positional ids 0..n-1.
inline LayerStack fedavg(const std::vector<LayerStack>& replicas, const std::vector<double>& weights) {
  if (replicas.size() != weights.size()) throw ShapeError("fedavg: replica/weight count mismatch");
  std::vector<WeightedReplica> items;
  items.reserve(replicas.size());
  for (std::size_t i = 0; i < replicas.size(); ++i) items.push_back({i, std::cref(replicas[i]), weights[i]});
  return fedavg(std::move(items));
}

}  // namespace sflsim

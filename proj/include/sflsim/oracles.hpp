#pragma once

// Independent reference computations: finite-difference gradients,
// literal double-loop metric formulas and exhaustive grouping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sflsim/hydra.hpp"
#include "sflsim/metrics.hpp"
#include "sflsim/nn.hpp"

namespace sflsim::oracle {

/// BW by the literal double loop over (label, round < R).
inline double backward_transfer_brute(const Matrix& a) {
  const std::size_t R = a.size();
  const std::size_t L = a.front().size();
  double total = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r + 1 < R; ++r) best = std::max(best, a[r][l] - a[R - 1][l]);
    total += best;
  }
  return total / static_cast<double>(L);
}

/// PG(r) = (1/L) sum_l max_k |min(0, A_l - A_k)|, term by term.
inline double performance_gap_brute(const std::vector<double>& row) {
  const std::size_t L = row.size();
  double total = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    double worst = 0.0;
    for (std::size_t k = 0; k < L; ++k) worst = std::max(worst, std::abs(std::min(0.0, row[l] - row[k])));
    total += worst;
  }
  return total / static_cast<double>(L);
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

namespace detail {

inline std::vector<bool> relu_pattern(const LayerStack& s, const Tape& tape) {
  std::vector<bool> bits;
  for (std::size_t i = 0; i < tape.inputs.size(); ++i) {
    if (s.layer(tape.from + i).kind != LayerKind::kReLU) continue;
    for (double v : tape.inputs[i].data()) bits.push_back(v > 0.0);
  }
  return bits;
}

}  // namespace detail

/// Central differences (step eps) of the mean cross-entropy w.r.t. every
/// parameter, compared with `analytic`. Components whose perturbation flips a
/// ReLU are skipped since the loss is not differentiable across the kink.
/// Relative error is |a - n| / max(|a| + |n|, 1e-6).
inline GradCheckResult compare_with_finite_differences(const LayerStack& stack, const Tensor2D& x,
                                                       const std::vector<Label>& labels,
                                                       const std::vector<LayerGrad>& analytic, double eps = 1e-5) {
  GradCheckResult res;
  LayerStack probe = stack;
  const auto base_pattern = detail::relu_pattern(stack, forward(stack, x).tape);
  auto loss_at = [&](std::vector<bool>& pattern) {
    auto f = forward(probe, x);
    pattern = detail::relu_pattern(probe, f.tape);
    return loss_and_grad(f.output, labels).loss;
  };
  for (std::size_t i = 0; i < stack.layer_count(); ++i) {
    for (int part = 0; part < 2; ++part) {
      auto& values = part == 0 ? probe.layer(i).weight : probe.layer(i).bias;
      const auto& grads = part == 0 ? analytic.at(i).weight : analytic.at(i).bias;
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double saved = values[k];
        std::vector<bool> plus_pattern;
        std::vector<bool> minus_pattern;
        values[k] = saved + eps;
        const double lp = loss_at(plus_pattern);
        values[k] = saved - eps;
        const double lm = loss_at(minus_pattern);
        values[k] = saved;
        if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
          ++res.skipped_kinks;
          continue;
        }
        const double numeric = (lp - lm) / (2.0 * eps);
        const double a = grads[k];
        const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
        res.max_rel_error = std::max(res.max_rel_error, rel);
        ++res.checked;
      }
    }
  }
  return res;
}

/// Random MLP with at most `max_params` parameters and a random batch;
/// runs the analytic backward and checks it against finite differences.
inline GradCheckResult grad_check_random_net(std::uint64_t seed, std::size_t max_params = 1000) {
  Rng rng(seed);
  LayerStack net;
  for (;;) {
    const std::size_t input = 2 + rng.below(7);
    const std::size_t classes = 2 + rng.below(4);
    const std::size_t depth = 1 + rng.below(3);
    std::vector<std::size_t> hidden;
    for (std::size_t d = 0; d < depth; ++d) hidden.push_back(2 + rng.below(15));
    net = make_mlp(input, hidden, classes);
    if (net.param_count() <= max_params) break;
  }
  init_uniform_fan_in(net, rng);
  const std::size_t batch = 1 + rng.below(8);
  Tensor2D x(batch, net.input_width());
  for (double& v : x.data()) v = rng.normal();
  std::vector<Label> labels(batch);
  for (auto& l : labels) l = rng.below(net.output_width());
  auto f = forward(net, x);
  auto loss = loss_and_grad(f.output, labels);
  auto b = backward(net, f.tape, loss.logit_grad, 0, net.layer_count());
  return compare_with_finite_differences(net, x, labels, b.param_grads);
}

struct GroupingComparison {
  double greedy = 0.0;
  double optimal = 0.0;
  GroupAssignment greedy_assignment;
  GroupAssignment optimal_assignment;
};

inline GroupingComparison compare_grouping(const GroupScores& scores, std::size_t groups) {
  GroupingComparison c;
  c.greedy_assignment = assign_groups(scores, groups);
  c.optimal_assignment = exact_assignment(scores, groups);
  c.greedy = objective_value(c.greedy_assignment, scores);
  c.optimal = objective_value(c.optimal_assignment, scores);
  return c;
}

/// Random label-count matrix, C x G, entries in [0, max_count].
inline GroupScores random_scores(std::size_t clients, std::size_t groups, Rng& rng, std::size_t max_count = 20) {
  GroupScores s(clients, std::vector<std::size_t>(groups));
  for (auto& row : s) {
    for (auto& v : row) v = rng.below(max_count + 1);
  }
  return s;
}

}  // namespace sflsim::oracle

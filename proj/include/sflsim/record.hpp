#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sflsim/nn.hpp"
#include "sflsim/scheduling.hpp"

namespace sflsim {

using Matrix = std::vector<std::vector<double>>;

/// Output of one training run.
struct RunRecord {
  Matrix accuracy;                      // [round][label], fractions in [0, 1]
  std::vector<double> global_accuracy;  // [round]
  std::vector<std::uint64_t> model_hash;  // fingerprint of the global model after each round
  OrderKind order_kind = OrderKind::kRandom;
  std::vector<Label> label_order;
  std::map<Label, std::size_t> position_of_label;  // cycle position in round 0
  std::optional<LayerStack> final_model;
  std::string config_hash;
  std::uint64_t seed = 0;

  std::size_t rounds() const { return accuracy.size(); }
  std::size_t label_count() const { return accuracy.empty() ? 0 : accuracy.front().size(); }
};

}  // namespace sflsim

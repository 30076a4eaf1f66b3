#pragma once

// Server processing order of clients within a round.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sflsim/data.hpp"
#include "sflsim/rng.hpp"

namespace sflsim {

enum class OrderKind { kRandom, kCyclic, kCyclicAndReverse };

struct OrderPolicy {
  OrderKind kind = OrderKind::kRandom;
  std::size_t clients_per_label = 1;  // phi
  std::vector<Label> label_order;     // permutation of [0, L), fixed per experiment

  bool cyclic() const { return kind != OrderKind::kRandom; }
};

struct RoundSchedule {
  std::vector<ClientId> order;
  std::map<Label, std::size_t> position_of_label;  // cyclic kinds only
};

struct ScheduledClient {
  ClientId client_id;
  std::optional<Label> dominant_label;
};

inline std::vector<ScheduledClient> schedule_inputs(const std::vector<ClientShard>& shards) {
  std::vector<ScheduledClient> out;
  out.reserve(shards.size());
  for (const auto& s : shards) out.push_back({s.client_id, s.dominant_label});
  return out;
}

/// Random label order for one experiment.
inline std::vector<Label> random_label_order(std::size_t label_count, Rng& rng) {
  return rng.permutation(label_count);
}

/// Order for 0-based round `round`. Random draws a fresh permutation from
/// `rng`; cyclic kinds ignore it.
inline RoundSchedule build_schedule(const OrderPolicy& policy, std::size_t round,
                                    const std::vector<ScheduledClient>& clients, Rng& rng) {
  RoundSchedule s;
  if (!policy.cyclic()) {
    std::vector<ClientId> ids;
    ids.reserve(clients.size());
    for (const auto& c : clients) ids.push_back(c.client_id);
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids);
    s.order = std::move(ids);
    return s;
  }

  const std::size_t L = policy.label_order.size();
  std::vector<bool> seen(L, false);
  for (Label l : policy.label_order) {
    if (l >= L || seen[l]) throw ConfigError("schedule: label_order is not a permutation of [0, L)");
    seen[l] = true;
  }
  if (policy.clients_per_label * L != clients.size()) {
    throw ConfigError("schedule: cyclic order requires phi*L == C (phi=" +
                      std::to_string(policy.clients_per_label) + ", L=" + std::to_string(L) +
                      ", C=" + std::to_string(clients.size()) + ")");
  }
  std::vector<std::vector<ClientId>> blocks(L);
  for (const auto& c : clients) {
    if (!c.dominant_label) {
      throw ConfigError("schedule: cyclic order needs a dominant label for client " +
                        std::to_string(c.client_id));
    }
    if (*c.dominant_label >= L) throw ConfigError("schedule: dominant label out of range");
    blocks[*c.dominant_label].push_back(c.client_id);
  }
  for (Label l = 0; l < L; ++l) {
    if (blocks[l].size() != policy.clients_per_label) {
      throw ConfigError("schedule: label " + std::to_string(l) + " has " + std::to_string(blocks[l].size()) +
                        " dominant clients, expected phi=" + std::to_string(policy.clients_per_label));
    }
    std::sort(blocks[l].begin(), blocks[l].end());
  }
  for (std::size_t pos = 0; pos < L; ++pos) {
    const Label l = policy.label_order[pos];
    s.order.insert(s.order.end(), blocks[l].begin(), blocks[l].end());
    s.position_of_label[l] = pos;
  }
  if (policy.kind == OrderKind::kCyclicAndReverse && round % 2 == 1) {
    std::reverse(s.order.begin(), s.order.end());
    for (auto& [label, pos] : s.position_of_label) pos = L - 1 - pos;
  }
  return s;
}

inline std::string to_string(OrderKind k) {
  switch (k) {
    case OrderKind::kRandom: return "random";
    case OrderKind::kCyclic: return "cyclic";
    case OrderKind::kCyclicAndReverse: return "cyclic_reverse";
  }
  return "?";
}

}  // namespace sflsim

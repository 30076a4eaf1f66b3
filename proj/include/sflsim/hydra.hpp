#pragma once

// Client-to-head grouping and the server's bank of part-2b heads.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sflsim/data.hpp"
#include "sflsim/split_model.hpp"

namespace sflsim {

/// Exactly-one assignment of C clients to G groups.
struct GroupAssignment {
  std::size_t group_count = 0;
  std::vector<std::size_t> group_of;  // client -> group

  std::size_t client_count() const { return group_of.size(); }

  /// Binary C x G matrix u.
  std::vector<std::vector<int>> u() const {
    std::vector<std::vector<int>> m(group_of.size(), std::vector<int>(group_count, 0));
    for (std::size_t c = 0; c < group_of.size(); ++c) m[c][group_of[c]] = 1;
    return m;
  }

  std::vector<std::size_t> group_sizes() const {
    std::vector<std::size_t> sizes(group_count, 0);
    for (std::size_t g : group_of) ++sizes.at(g);
    return sizes;
  }

  std::vector<ClientId> members(std::size_t g) const {
    std::vector<ClientId> m;
    for (ClientId c = 0; c < group_of.size(); ++c) {
      if (group_of[c] == g) m.push_back(c);
    }
    return m;
  }

  friend bool operator==(const GroupAssignment&, const GroupAssignment&) = default;
};

/// C x G matrix of rho_{c, label(g)}: the count of group g's associated label
/// held by client c.
using GroupScores = std::vector<std::vector<std::size_t>>;

/// Group g is associated with label group_labels[g].
inline GroupScores group_scores(const std::vector<ClientShard>& shards, const std::vector<Label>& group_labels) {
  GroupScores s(shards.size(), std::vector<std::size_t>(group_labels.size(), 0));
  for (std::size_t c = 0; c < shards.size(); ++c) {
    for (std::size_t g = 0; g < group_labels.size(); ++g) s[c][g] = shards[c].histogram.at(group_labels[g]);
  }
  return s;
}

/// Superclass mode: rho is collapsed through label_to_group before scoring.
inline GroupScores superclass_scores(const std::vector<ClientShard>& shards, const std::vector<std::size_t>& label_to_group,
                                     std::size_t group_count) {
  GroupScores s(shards.size(), std::vector<std::size_t>(group_count, 0));
  for (std::size_t c = 0; c < shards.size(); ++c) {
    const auto& h = shards[c].histogram;
    if (h.size() != label_to_group.size()) throw ConfigError("label_to_group must cover every label");
    for (Label l = 0; l < h.size(); ++l) s[c][label_to_group[l]] += h[l];
  }
  return s;
}

/// Greedy round-robin grouping: groups take turns, each claiming the
/// unassigned client with the largest score for it (lowest id on ties), until
/// every client is placed. Each group keeps a max-heap of candidates with lazy
/// removal of clients claimed elsewhere.
inline GroupAssignment assign_groups(const GroupScores& scores, std::size_t group_count) {
  const std::size_t C = scores.size();
  if (group_count == 0) throw ConfigError("grouping: G must be at least 1");
  if (C < group_count) {
    throw ConfigError("grouping: " + std::to_string(C) + " clients cannot fill " + std::to_string(group_count) +
                      " groups");
  }
  for (const auto& row : scores) {
    if (row.size() != group_count) throw ShapeError("grouping: score row width != G");
  }
  if (C > std::numeric_limits<std::uint32_t>::max()) throw ConfigError("grouping: too many clients");
  // Per group, clients ranked by score (descending, ties by ascending id) via
  // a counting sort, then a cursor that skips clients already taken. Both are
  // linear, so the whole pass is O(G * (C + max score)). Scores and rankings
  // live in flat column-major buffers.
  std::vector<std::size_t> columns(group_count * C);
  for (ClientId c = 0; c < C; ++c) {
    for (std::size_t g = 0; g < group_count; ++g) columns[g * C + c] = scores[c][g];
  }
  std::vector<std::uint32_t> ranking(group_count * C);
  std::vector<std::size_t> start;
  for (std::size_t g = 0; g < group_count; ++g) {
    const std::size_t* column = columns.data() + g * C;
    std::uint32_t* order = ranking.data() + g * C;
    const std::size_t top = *std::max_element(column, column + C);
    if (top <= 4 * C + 1024) {
      start.assign(top + 2, 0);
      for (ClientId c = 0; c < C; ++c) ++start[top - column[c] + 1];
      for (std::size_t k = 1; k < start.size(); ++k) start[k] += start[k - 1];
      for (ClientId c = 0; c < C; ++c) order[start[top - column[c]]++] = static_cast<std::uint32_t>(c);
    } else {
      std::iota(order, order + C, std::uint32_t{0});
      std::stable_sort(order, order + C, [&](std::uint32_t x, std::uint32_t y) { return column[x] > column[y]; });
    }
  }

  GroupAssignment a{group_count, std::vector<std::size_t>(C, 0)};
  std::vector<bool> taken(C, false);
  std::vector<std::size_t> cursor(group_count, 0);
  std::size_t remaining = C;
  while (remaining > 0) {
    for (std::size_t g = 0; g < group_count && remaining > 0; ++g) {
      const std::uint32_t* order = ranking.data() + g * C;
      std::size_t& k = cursor[g];
      while (taken[order[k]]) ++k;
      const ClientId next = order[k];
      taken[next] = true;
      a.group_of[next] = g;
      --remaining;
    }
  }
  return a;
}

/// min over groups of the mean score of the group's members.
inline double objective_value(const GroupAssignment& a, const GroupScores& scores) {
  if (a.group_of.size() != scores.size()) throw ShapeError("objective: assignment/score size mismatch");
  std::vector<double> sum(a.group_count, 0.0);
  std::vector<std::size_t> count(a.group_count, 0);
  for (ClientId c = 0; c < scores.size(); ++c) {
    const std::size_t g = a.group_of[c];
    if (g >= a.group_count) throw ShapeError("objective: group index out of range");
    sum[g] += static_cast<double>(scores[c][g]);
    ++count[g];
  }
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < a.group_count; ++g) {
    if (count[g] == 0) throw ConfigError("objective: group " + std::to_string(g) + " is empty");
    worst = std::min(worst, sum[g] / static_cast<double>(count[g]));
  }
  return worst;
}

inline constexpr std::size_t kMaxExactAssignments = 59049;  // 3^10

/// Exhaustive max-min optimum over every assignment with no empty group.
/// Balance is not imposed. Ties go to the lexicographically smallest group_of.
inline GroupAssignment exact_assignment(const GroupScores& scores, std::size_t group_count) {
  const std::size_t C = scores.size();
  if (group_count == 0 || C < group_count) throw ConfigError("exact grouping: need 1 <= G <= C");
  std::size_t total = 1;
  for (std::size_t c = 0; c < C; ++c) {
    total *= group_count;
    if (total > kMaxExactAssignments) {
      throw ConfigError("exact grouping: G^C exceeds " + std::to_string(kMaxExactAssignments));
    }
  }
  GroupAssignment current{group_count, std::vector<std::size_t>(C, 0)};
  std::optional<GroupAssignment> best;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < total; ++k) {
    const auto sizes = current.group_sizes();
    if (std::find(sizes.begin(), sizes.end(), 0) == sizes.end()) {
      const double v = objective_value(current, scores);
      if (v > best_value) {
        best_value = v;
        best = current;
      }
    }
    // Odometer with client 0 most significant keeps lexicographic order.
    for (std::size_t c = C; c-- > 0;) {
      if (++current.group_of[c] < group_count) break;
      current.group_of[c] = 0;
    }
  }
  return *best;
}

enum class HeadWeighting { kRoutedSamples, kUniform };

/// G replicas of part-2b plus the number of samples routed to each this round.
class HeadBank {
 public:
  HeadBank(const LayerStack& part2b, std::size_t group_count)
      : heads_(group_count, part2b), routed_(group_count, 0) {
    if (group_count == 0) throw ConfigError("head bank needs at least one head");
  }

  std::size_t size() const { return heads_.size(); }
  LayerStack& head(std::size_t g) { return heads_.at(g); }
  const LayerStack& head(std::size_t g) const { return heads_.at(g); }
  const std::vector<std::size_t>& routed() const { return routed_; }

  /// Head for the packet's client; counts the batch rows against it.
  std::size_t route(const ActivationPacket& packet, const GroupAssignment& assignment) {
    if (packet.client_id >= assignment.group_of.size()) {
      throw ConfigError("route: client " + std::to_string(packet.client_id) + " has no group");
    }
    const std::size_t g = assignment.group_of[packet.client_id];
    if (g >= heads_.size()) throw ShapeError("route: group index beyond head bank");
    routed_[g] += packet.activations.rows();
    return g;
  }

  /// Averages the heads, resets every replica to the average and zeroes the
  /// counters. Heads that saw no samples carry zero weight.
  LayerStack aggregate(HeadWeighting weighting = HeadWeighting::kRoutedSamples) {
    std::vector<WeightedReplica> items;
    for (std::size_t g = 0; g < heads_.size(); ++g) {
      double w = static_cast<double>(routed_[g]);
      if (weighting == HeadWeighting::kUniform) w = routed_[g] > 0 ? 1.0 : 0.0;
      items.push_back({g, std::cref(heads_[g]), w});
    }
    bool any = false;
    for (std::size_t r : routed_) any |= r > 0;
    if (!any) throw ConfigError("aggregate_heads: no samples were routed this round");
    LayerStack merged = fedavg(std::move(items));
    for (auto& h : heads_) h = merged;
    std::fill(routed_.begin(), routed_.end(), 0);
    return merged;
  }

 private:
  std::vector<LayerStack> heads_;
  std::vector<std::size_t> routed_;
};

}  // namespace sflsim

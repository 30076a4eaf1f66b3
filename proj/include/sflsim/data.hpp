#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sflsim/rng.hpp"
#include "sflsim/tensor.hpp"

namespace sflsim {

struct Dataset {
  Tensor2D features;
  std::vector<Label> labels;
  std::size_t label_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  void validate() const {
    if (features.rows() != labels.size()) throw ShapeError("dataset: feature rows != label count");
    std::vector<std::size_t> seen(label_count, 0);
    for (Label l : labels) {
      if (l >= label_count) throw ConfigError("dataset: label out of range");
      ++seen[l];
    }
    for (std::size_t l = 0; l < label_count; ++l) {
      if (seen[l] == 0) throw ConfigError("dataset: label " + std::to_string(l) + " has no samples");
    }
  }

  /// Indices of each label's samples, in dataset order.
  std::vector<std::vector<std::size_t>> indices_by_label() const {
    std::vector<std::vector<std::size_t>> by(label_count);
    for (std::size_t i = 0; i < labels.size(); ++i) by[labels[i]].push_back(i);
    return by;
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.label_count = label_count;
    d.features = Tensor2D(idx.size(), dim());
    d.labels.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto src = features.row(idx[k]);
      std::copy(src.begin(), src.end(), d.features.row(k).begin());
      d.labels.push_back(labels[idx[k]]);
    }
    return d;
  }
};

/// Isotropic unit-variance Gaussian blobs. Means sit at distance
/// separation/sqrt(2) from the origin on orthogonal axes when dim >= L
/// (pairwise distance exactly `separation`), on random directions otherwise.
inline Dataset generate_synthetic(std::size_t label_count, std::size_t dim, std::size_t per_label,
                                  double separation, std::uint64_t seed) {
  if (label_count < 2 || dim < 2 || per_label < 1) {
    throw ConfigError("synthetic: require labels >= 2, dim >= 2, per_label >= 1");
  }
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw ConfigError("synthetic: separation must be finite and non-negative");
  }
  Rng rng(seed);
  const double radius = separation / std::sqrt(2.0);
  std::vector<std::vector<double>> means(label_count, std::vector<double>(dim, 0.0));
  for (std::size_t l = 0; l < label_count; ++l) {
    if (dim >= label_count) {
      means[l][l] = radius;
    } else {
      double norm = 0.0;
      for (double& m : means[l]) {
        m = rng.normal();
        norm += m * m;
      }
      norm = std::sqrt(norm);
      for (double& m : means[l]) m *= radius / norm;
    }
  }
  Dataset d;
  d.label_count = label_count;
  d.features = Tensor2D(label_count * per_label, dim);
  d.labels.reserve(label_count * per_label);
  for (std::size_t s = 0; s < per_label; ++s) {
    for (std::size_t l = 0; l < label_count; ++l) {
      auto row = d.features.row(d.labels.size());
      for (std::size_t k = 0; k < dim; ++k) row[k] = means[l][k] + rng.normal();
      d.labels.push_back(l);
    }
  }
  return d;
}

/// Parses "f1,...,fk,label" rows. L = max label + 1.
inline Dataset parse_csv(std::istream& in, const std::string& source = "<csv>") {
  std::vector<double> values;
  std::vector<Label> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    auto fail = [&](const std::string& msg) -> ConfigError {
      return ConfigError(source + ": row " + std::to_string(row) + ": " + msg);
    };
    if (fields.size() < 2) throw fail("expected at least one feature and a label column");
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw fail("has " + std::to_string(fields.size()) + " fields, expected " + std::to_string(width));
    }
    for (std::size_t k = 0; k + 1 < fields.size(); ++k) {
      const std::string& f = fields[k];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw fail("feature " + std::to_string(k + 1) + " '" + f + "' is not a finite number");
      }
      values.push_back(v);
    }
    const std::string& lf = fields.back();
    std::size_t label = 0;
    auto [ptr, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (ec != std::errc() || ptr != lf.data() + lf.size()) {
      throw fail("label '" + lf + "' is not a non-negative integer (missing label column?)");
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw ConfigError(source + ": empty file");
  Dataset d;
  d.label_count = *std::max_element(labels.begin(), labels.end()) + 1;
  d.features = Tensor2D(labels.size(), width - 1, std::move(values));
  d.labels = std::move(labels);
  return d;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path);
  return parse_csv(in, path);
}

inline void write_csv(const Dataset& d, std::ostream& out) {
  char buf[32];
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (double v : d.features.row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    out << d.labels[r] << '\n';
  }
}

inline void export_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_csv(d, out);
}

/// Stratified hold-out split: round(fraction * n_l) samples of each label go
/// to the evaluation set.
struct TrainEvalSplit {
  Dataset train;
  Dataset eval;
};

inline TrainEvalSplit split_train_eval(const Dataset& d, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("eval_fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> eval_idx;
  for (auto& idx : d.indices_by_label()) {
    rng.shuffle(idx);
    const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(idx.size())));
    if (n_eval == 0 || n_eval >= idx.size()) {
      throw ConfigError("eval split leaves a label without train or eval samples");
    }
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval));
    std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_eval), idx.end());
    eval_idx.insert(eval_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval));
    train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  return {d.subset(train_idx), d.subset(eval_idx)};
}

// ---------------------------------------------------------------- partitions

struct ClientShard {
  ClientId client_id = 0;
  std::vector<std::size_t> indices;  // into the parent dataset, ascending
  std::vector<std::size_t> histogram;  // rho_c, length L
  std::optional<Label> dominant_label;  // set by the dominant-label partitioner

  std::size_t size() const { return indices.size(); }
};

inline std::vector<std::size_t> label_histogram(const Dataset& d, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> h(d.label_count, 0);
  for (std::size_t i : idx) ++h[d.labels[i]];
  return h;
}

struct IidPartition {};
struct DominantLabelPartition {
  double percent = 80.0;
  std::size_t clients_per_label = 1;  // phi
};
struct DirichletPartition {
  double alpha = 0.3;
};
struct ShardingPartition {
  double percent = 80.0;
  std::size_t dominant_per_group = 2;  // n
};

struct PartitionSpec {
  std::variant<IidPartition, DominantLabelPartition, DirichletPartition, ShardingPartition> method;
  std::size_t client_count = 1;

  void validate(std::size_t label_count) const {
    if (client_count == 0) throw ConfigError("partition: client count must be positive");
    if (const auto* dl = std::get_if<DominantLabelPartition>(&method)) {
      if (!(dl->percent >= 0.0 && dl->percent <= 100.0)) throw ConfigError("partition: p must lie in [0, 100]");
      if (dl->clients_per_label == 0) throw ConfigError("partition: phi must be positive");
      if (dl->clients_per_label * label_count != client_count) {
        throw ConfigError("partition: dominant-label requires C == phi*L (C=" + std::to_string(client_count) +
                          ", phi=" + std::to_string(dl->clients_per_label) +
                          ", L=" + std::to_string(label_count) + ")");
      }
    } else if (const auto* dir = std::get_if<DirichletPartition>(&method)) {
      if (!(dir->alpha > 0.0) || !std::isfinite(dir->alpha)) throw ConfigError("partition: alpha must be positive");
    } else if (const auto* sh = std::get_if<ShardingPartition>(&method)) {
      if (!(sh->percent >= 0.0 && sh->percent <= 100.0)) throw ConfigError("partition: p must lie in [0, 100]");
      if (sh->dominant_per_group < 2 || sh->dominant_per_group > label_count) {
        throw ConfigError("partition: sharding requires 2 <= n <= L");
      }
      if (client_count % label_count != 0) {
        throw ConfigError("partition: sharding requires C to be a multiple of L");
      }
      if (sh->dominant_per_group == label_count && sh->percent < 100.0) {
        throw ConfigError("partition: sharding with n == L leaves no group for the remainder");
      }
    }
  }
};

namespace detail {

/// Splits `count` into `parts` near-equal integers; the first count % parts get one more.
inline std::vector<std::size_t> even_split(std::size_t count, std::size_t parts) {
  std::vector<std::size_t> out(parts, parts ? count / parts : 0);
  for (std::size_t k = 0; parts && k < count % parts; ++k) ++out[k];
  return out;
}

inline std::size_t percent_of(double percent, std::size_t n) {
  return static_cast<std::size_t>(std::llround(percent / 100.0 * static_cast<double>(n)));
}

/// Hands out `pool` (already shuffled) to `recipients` in the given amounts.
inline void deal(const std::vector<std::size_t>& pool, std::size_t& cursor,
                 const std::vector<ClientId>& recipients, const std::vector<std::size_t>& amounts,
                 std::vector<ClientShard>& shards) {
  for (std::size_t k = 0; k < recipients.size(); ++k) {
    auto& dst = shards[recipients[k]].indices;
    dst.insert(dst.end(), pool.begin() + static_cast<std::ptrdiff_t>(cursor),
               pool.begin() + static_cast<std::ptrdiff_t>(cursor + amounts[k]));
    cursor += amounts[k];
  }
}

inline std::vector<ClientShard> finish(const Dataset& d, std::vector<ClientShard> shards) {
  for (auto& s : shards) {
    std::sort(s.indices.begin(), s.indices.end());
    s.histogram = label_histogram(d, s.indices);
    if (s.indices.empty()) {
      throw ConfigError("partition: client " + std::to_string(s.client_id) + " received no samples");
    }
  }
  return shards;
}

}  // namespace detail

/// Client c is dominant in label c / phi. Of label l's samples, p% are split
/// evenly over its phi dominant clients and the rest evenly over all others.
inline std::vector<ClientShard> partition_dominant_label(const Dataset& d, const DominantLabelPartition& spec,
                                                         std::size_t client_count, Rng& rng) {
  const std::size_t phi = spec.clients_per_label;
  std::vector<ClientShard> shards(client_count);
  for (ClientId c = 0; c < client_count; ++c) {
    shards[c].client_id = c;
    shards[c].dominant_label = c / phi;
  }
  auto by_label = d.indices_by_label();
  for (Label l = 0; l < d.label_count; ++l) {
    auto& pool = by_label[l];
    rng.shuffle(pool);
    const std::size_t dominant_total = detail::percent_of(spec.percent, pool.size());
    std::vector<ClientId> dominant;
    std::vector<ClientId> others;
    for (ClientId c = 0; c < client_count; ++c) (c / phi == l ? dominant : others).push_back(c);
    std::size_t cursor = 0;
    detail::deal(pool, cursor, dominant, detail::even_split(dominant_total, dominant.size()), shards);
    detail::deal(pool, cursor, others, detail::even_split(pool.size() - dominant_total, others.size()), shards);
  }
  return detail::finish(d, std::move(shards));
}

inline std::vector<ClientShard> partition_iid(const Dataset& d, std::size_t client_count, Rng& rng) {
  std::vector<ClientShard> shards(client_count);
  for (ClientId c = 0; c < client_count; ++c) shards[c].client_id = c;
  std::vector<ClientId> all(client_count);
  for (ClientId c = 0; c < client_count; ++c) all[c] = c;
  auto pool = rng.permutation(d.size());
  std::size_t cursor = 0;
  detail::deal(pool, cursor, all, detail::even_split(pool.size(), client_count), shards);
  return detail::finish(d, std::move(shards));
}

/// Per label, client proportions ~ Dirichlet(alpha); counts are floored and
/// the remainder dealt round-robin by ascending client id. The whole draw is
/// repeated (up to 100 times) while any client ends up empty.
inline std::vector<ClientShard> partition_dirichlet(const Dataset& d, const DirichletPartition& spec,
                                                    std::size_t client_count, Rng& rng) {
  std::vector<ClientId> all(client_count);
  for (ClientId c = 0; c < client_count; ++c) all[c] = c;
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<ClientShard> shards(client_count);
    for (ClientId c = 0; c < client_count; ++c) shards[c].client_id = c;
    auto by_label = d.indices_by_label();
    for (auto& pool : by_label) {
      rng.shuffle(pool);
      std::vector<double> props(client_count);
      double sum = 0.0;
      while (!(sum > 0.0)) {
        sum = 0.0;
        for (double& p : props) sum += (p = rng.gamma(spec.alpha));
      }
      std::vector<std::size_t> amounts(client_count);
      std::size_t assigned = 0;
      for (ClientId c = 0; c < client_count; ++c) {
        amounts[c] = static_cast<std::size_t>(std::floor(props[c] / sum * static_cast<double>(pool.size())));
        assigned += amounts[c];
      }
      assigned = std::min(assigned, pool.size());
      for (std::size_t k = 0; assigned < pool.size(); ++k, ++assigned) ++amounts[k % client_count];
      std::size_t cursor = 0;
      detail::deal(pool, cursor, all, amounts, shards);
    }
    bool any_empty = false;
    for (const auto& s : shards) any_empty |= s.indices.empty();
    if (!any_empty) return detail::finish(d, std::move(shards));
  }
  throw ConfigError("partition: Dirichlet draw left a client empty after 100 attempts");
}

/// L groups; group g is dominant in labels g, g+1, ..., g+n-1 (mod L). Each
/// dominant group takes p/n % of the label, the rest is spread evenly over the
/// remaining groups. Within a group samples are split evenly over its
/// C/L clients (client c belongs to group c / (C/L)).
inline std::vector<ClientShard> partition_sharding(const Dataset& d, const ShardingPartition& spec,
                                                   std::size_t client_count, Rng& rng) {
  const std::size_t L = d.label_count;
  const std::size_t per_group = client_count / L;
  const std::size_t n = spec.dominant_per_group;
  std::vector<ClientShard> shards(client_count);
  for (ClientId c = 0; c < client_count; ++c) shards[c].client_id = c;
  auto members = [&](std::size_t g) {
    std::vector<ClientId> m;
    for (std::size_t k = 0; k < per_group; ++k) m.push_back(g * per_group + k);
    return m;
  };
  auto by_label = d.indices_by_label();
  for (Label l = 0; l < L; ++l) {
    auto& pool = by_label[l];
    rng.shuffle(pool);
    std::vector<std::size_t> dominant_groups;
    std::vector<std::size_t> other_groups;
    for (std::size_t g = 0; g < L; ++g) {
      const std::size_t offset = (l + L - g) % L;  // l == g + offset (mod L)
      (offset < n ? dominant_groups : other_groups).push_back(g);
    }
    const std::size_t dominant_total = detail::percent_of(spec.percent, pool.size());
    auto group_amounts = detail::even_split(dominant_total, dominant_groups.size());
    auto rest = detail::even_split(pool.size() - dominant_total, other_groups.size());
    std::size_t cursor = 0;
    auto deal_groups = [&](const std::vector<std::size_t>& groups, const std::vector<std::size_t>& amounts) {
      for (std::size_t k = 0; k < groups.size(); ++k) {
        detail::deal(pool, cursor, members(groups[k]), detail::even_split(amounts[k], per_group), shards);
      }
    };
    deal_groups(dominant_groups, group_amounts);
    deal_groups(other_groups, rest);
  }
  return detail::finish(d, std::move(shards));
}

inline std::vector<ClientShard> partition(const Dataset& d, const PartitionSpec& spec, std::uint64_t seed) {
  spec.validate(d.label_count);
  if (d.size() < spec.client_count) throw ConfigError("partition: fewer samples than clients");
  Rng rng(seed);
  return std::visit(
      [&](const auto& m) -> std::vector<ClientShard> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IidPartition>) {
          return partition_iid(d, spec.client_count, rng);
        } else if constexpr (std::is_same_v<T, DominantLabelPartition>) {
          return partition_dominant_label(d, m, spec.client_count, rng);
        } else if constexpr (std::is_same_v<T, DirichletPartition>) {
          return partition_dirichlet(d, m, spec.client_count, rng);
        } else {
          return partition_sharding(d, m, spec.client_count, rng);
        }
      },
      spec.method);
}

/// {client_id -> rho_c}, the label statistics each client reports.
inline nlohmann::json partition_report(const std::vector<ClientShard>& shards) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : shards) j[std::to_string(s.client_id)] = s.histogram;
  return j;
}

}  // namespace sflsim

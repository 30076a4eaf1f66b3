#pragma once

// Round engines for split/federated training variants. Every engine draws its
// randomness from named sub-streams of the experiment seed (see rng.hpp), so
// two engines given the same config see the same initial model, partition,
// schedules and batch orders.

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sflsim/data.hpp"
#include "sflsim/hydra.hpp"
#include "sflsim/nn.hpp"
#include "sflsim/record.hpp"
#include "sflsim/scheduling.hpp"
#include "sflsim/split_model.hpp"

namespace sflsim {

enum class Protocol { kSfl, kHydra, kSplitFedV1, kSplitFedV3, kSplitNN, kMultiheadFL };

enum class L2Mode { kNone, kPart2Only, kFullModel };

struct HydraConfig {
  std::size_t heads = 0;  // 0 means L
  std::size_t cut2 = 0;   // first layer of part-2b
  std::optional<std::vector<std::size_t>> label_to_group;
  HeadWeighting weighting = HeadWeighting::kRoutedSamples;
};

struct ExperimentConfig {
  Protocol protocol = Protocol::kSfl;
  std::size_t rounds = 100;
  std::vector<std::size_t> hidden = {32, 32};
  SplitSpec split;
  OrderKind order = OrderKind::kRandom;
  std::size_t order_phi = 1;
  std::optional<std::vector<Label>> label_order;  // drawn from the seed when absent
  PartitionSpec partition;
  std::optional<HydraConfig> hydra;
  OptimizerConfig optimizer;
  L2Mode l2_mode = L2Mode::kNone;
  double l2_lambda = 0.0;
  double eval_fraction = 0.2;
  bool freeze_part1 = false;
  std::uint64_t seed = 0;

  std::size_t layer_count() const { return 2 * hidden.size() + 1; }

  double l2_part1() const { return l2_mode == L2Mode::kFullModel ? l2_lambda : 0.0; }
  double l2_part2() const { return l2_mode == L2Mode::kNone ? 0.0 : l2_lambda; }

  bool uses_heads() const { return protocol == Protocol::kHydra || protocol == Protocol::kMultiheadFL; }

  void validate(std::size_t label_count) const {
    if (rounds == 0) throw ConfigError("rounds must be at least 1");
    for (std::size_t h : hidden) {
      if (h == 0) throw ConfigError("hidden widths must be positive");
    }
    optimizer.validate();
    if (l2_lambda < 0.0) throw ConfigError("l2 lambda must be non-negative");
    partition.validate(label_count);
    SplitSpec s = split;
    if (uses_heads()) {
      if (!hydra) throw ConfigError("protocol requires a hydra section");
      s.cut2 = hydra->cut2;
      const std::size_t g = hydra->heads == 0 ? label_count : hydra->heads;
      if (g < 1 || g > label_count) throw ConfigError("hydra: require 1 <= G <= L");
      if (g > partition.client_count) throw ConfigError("hydra: more heads than clients");
      if (hydra->label_to_group) {
        const auto& m = *hydra->label_to_group;
        if (m.size() != label_count) throw ConfigError("hydra: label_to_group must list every label");
        std::vector<bool> hit(g, false);
        for (std::size_t v : m) {
          if (v >= g) throw ConfigError("hydra: label_to_group value out of [0, G)");
          hit[v] = true;
        }
        if (std::find(hit.begin(), hit.end(), false) != hit.end()) {
          throw ConfigError("hydra: label_to_group must reach every group");
        }
      }
    }
    if (protocol == Protocol::kMultiheadFL) {
      if (hydra->cut2 == 0 || hydra->cut2 >= layer_count()) {
        throw ConfigError("multihead: head cut must satisfy 0 < cut2 < layer count");
      }
    } else {
      s.validate(layer_count());
    }
    if (order != OrderKind::kRandom) {
      if (order_phi * label_count != partition.client_count) {
        throw ConfigError("order: cyclic order requires phi*L == C (phi=" + std::to_string(order_phi) +
                          ", L=" + std::to_string(label_count) +
                          ", C=" + std::to_string(partition.client_count) + ")");
      }
      if (!std::holds_alternative<DominantLabelPartition>(partition.method)) {
        throw ConfigError("order: cyclic order requires a dominant-label partition");
      }
    }
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ConfigError("eval_fraction must lie in (0, 1)");
  }
};

/// Instrumentation hooks used by tests to observe ordering inside a round.
struct TraceEvent {
  enum class Kind { kGradientSent, kServerUpdated, kClientTurnStart, kClientTurnEnd, kHeadTrained };
  Kind kind;
  std::size_t round = 0;
  ClientId client = 0;
  std::size_t batch = 0;
  std::size_t head = 0;
  std::uint64_t hash = 0;  // server part-2 (gradient/update events) or client part-1 (turn events)
};
using TraceSink = std::function<void(const TraceEvent&)>;

struct EvalResult {
  double global = 0.0;
  std::vector<double> per_label;
};

/// Accuracy of `predictions` against eval labels; every label must appear.
inline EvalResult score_predictions(const std::vector<Label>& predictions, const Dataset& eval) {
  if (predictions.size() != eval.size()) throw ShapeError("prediction count != eval size");
  std::vector<std::size_t> correct(eval.label_count, 0);
  std::vector<std::size_t> count(eval.label_count, 0);
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const Label y = eval.labels[i];
    ++count[y];
    if (predictions[i] == y) {
      ++correct[y];
      ++total_correct;
    }
  }
  EvalResult res;
  res.per_label.resize(eval.label_count);
  for (Label l = 0; l < eval.label_count; ++l) {
    if (count[l] == 0) throw ConfigError("evaluation set has no samples of label " + std::to_string(l));
    res.per_label[l] = static_cast<double>(correct[l]) / static_cast<double>(count[l]);
  }
  res.global = static_cast<double>(total_correct) / static_cast<double>(eval.size());
  return res;
}

inline std::vector<Label> argmax_rows(const Tensor2D& t) {
  std::vector<Label> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.row(r);
    out[r] = static_cast<Label>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

inline EvalResult evaluate(const LayerStack& model, const Dataset& eval) {
  return score_predictions(argmax_rows(forward(model, eval.features).output), eval);
}

/// Prediction of the candidate model whose softmax output is most confident
/// (earliest candidate on ties).
inline EvalResult evaluate_most_confident(const std::vector<LayerStack>& candidates, const Dataset& eval) {
  if (candidates.empty()) throw ConfigError("no candidate models to evaluate");
  std::vector<double> best_conf(eval.size(), -1.0);
  std::vector<Label> pred(eval.size(), 0);
  for (const auto& m : candidates) {
    const Tensor2D p = softmax(forward(m, eval.features).output);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      const auto row = p.row(r);
      const auto it = std::max_element(row.begin(), row.end());
      if (*it > best_conf[r]) {
        best_conf[r] = *it;
        pred[r] = static_cast<Label>(it - row.begin());
      }
    }
  }
  return score_predictions(pred, eval);
}

/// Everything derived from (config, dataset) before round 1.
struct PreparedRun {
  Dataset train;
  Dataset eval;
  std::vector<ClientShard> shards;
  LayerStack initial_model;
  OrderPolicy policy;
  std::optional<GroupAssignment> groups;
};

inline PreparedRun prepare_run(const ExperimentConfig& cfg, const Dataset& dataset) {
  dataset.validate();
  cfg.validate(dataset.label_count);
  PreparedRun p;
  auto split_data = split_train_eval(dataset, cfg.eval_fraction, derive_seed(cfg.seed, Stream::kEvalSplit));
  p.train = std::move(split_data.train);
  p.eval = std::move(split_data.eval);
  p.shards = partition(p.train, cfg.partition, derive_seed(cfg.seed, Stream::kPartition));
  p.initial_model = make_mlp(dataset.dim(), cfg.hidden, dataset.label_count);
  Rng init_rng(derive_seed(cfg.seed, Stream::kInit));
  init_uniform_fan_in(p.initial_model, init_rng);
  p.policy.kind = cfg.order;
  p.policy.clients_per_label = cfg.order_phi;
  if (cfg.label_order) {
    p.policy.label_order = *cfg.label_order;
    auto sorted = p.policy.label_order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted[i] != i || sorted.size() != dataset.label_count) {
        throw ConfigError("label_order must be a permutation of [0, L)");
      }
    }
  } else {
    Rng order_rng(derive_seed(cfg.seed, Stream::kLabelOrder));
    p.policy.label_order = random_label_order(dataset.label_count, order_rng);
  }
  if (cfg.uses_heads()) {
    const std::size_t g = cfg.hydra->heads == 0 ? dataset.label_count : cfg.hydra->heads;
    GroupScores scores;
    if (cfg.hydra->label_to_group) {
      scores = superclass_scores(p.shards, *cfg.hydra->label_to_group, g);
    } else {
      std::vector<Label> group_labels(p.policy.label_order.begin(),
                                      p.policy.label_order.begin() + static_cast<std::ptrdiff_t>(g));
      scores = group_scores(p.shards, group_labels);
    }
    p.groups = assign_groups(scores, g);
  }
  return p;
}

/// Client's local data for `round`, shuffled and cut into batches.
inline std::vector<std::vector<std::size_t>> client_batches(const ClientShard& shard, std::size_t round,
                                                            std::uint64_t seed, std::size_t batch_size) {
  auto idx = shard.indices;
  Rng rng(derive_seed(seed, Stream::kBatches, {round, shard.client_id}));
  rng.shuffle(idx);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline RoundSchedule round_schedule(const PreparedRun& p, std::size_t round, std::uint64_t seed) {
  Rng rng(derive_seed(seed, Stream::kSchedule, {round}));
  return build_schedule(p.policy, round, schedule_inputs(p.shards), rng);
}

namespace detail {

inline Tensor2D gather_rows(const Dataset& d, const std::vector<std::size_t>& idx, std::vector<Label>& labels) {
  Tensor2D x(idx.size(), d.dim());
  labels.resize(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto src = d.features.row(idx[k]);
    std::copy(src.begin(), src.end(), x.row(k).begin());
    labels[k] = d.labels[idx[k]];
  }
  return x;
}

inline std::uint64_t joint_fingerprint(std::initializer_list<const LayerStack*> parts) {
  Fnv1a h;
  for (const LayerStack* p : parts) h.update(p->fingerprint());
  return h.digest();
}

/// Server side of one batch: forward through part-2a and (optionally) a head,
/// loss, backward, emit the cut-layer gradient, and only then update part-2.
inline GradientPacket server_step(LayerStack& part2a, LayerStack* head, const ActivationPacket& packet, double lr,
                                  double l2, std::size_t round, const TraceSink& trace) {
  auto fa = forward(part2a, packet.activations);
  ForwardResult fb;
  if (head) fb = forward(*head, fa.output);
  const Tensor2D& logits = head ? fb.output : fa.output;
  auto loss = loss_and_grad(logits, packet.labels);
  BackwardResult bb;
  const Tensor2D* upstream = &loss.logit_grad;
  if (head) {
    bb = backward(*head, fb.tape, loss.logit_grad, 0, head->layer_count());
    upstream = &bb.input_grad;
  }
  auto ba = backward(part2a, fa.tape, *upstream, 0, part2a.layer_count());
  GradientPacket out{packet.client_id, std::move(ba.input_grad), packet.batch_index};
  if (trace) {
    const auto h = head ? joint_fingerprint({&part2a, head}) : part2a.fingerprint();
    trace({TraceEvent::Kind::kGradientSent, round, packet.client_id, packet.batch_index, 0, h});
  }
  sgd_step(part2a, ba.param_grads, 0, lr, l2);
  if (head) sgd_step(*head, bb.param_grads, 0, lr, l2);
  if (trace) {
    const auto h = head ? joint_fingerprint({&part2a, head}) : part2a.fingerprint();
    trace({TraceEvent::Kind::kServerUpdated, round, packet.client_id, packet.batch_index, 0, h});
  }
  return out;
}

/// One pass of a client over its batches against a server-side part-2.
inline void client_turn(const PreparedRun& p, const ExperimentConfig& cfg, std::size_t round, SplitClient& client,
                        LayerStack& part2, const TraceSink& trace) {
  const double lr = cfg.optimizer.lr_at(round);
  const double lr_part1 = cfg.freeze_part1 ? 0.0 : lr;
  const auto batches = client_batches(p.shards.at(client.id()), round, cfg.seed, cfg.optimizer.batch_size);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    std::vector<Label> labels;
    Tensor2D x = gather_rows(p.train, batches[b], labels);
    auto act = client.send_activations(x, std::move(labels), b);
    auto grad = server_step(part2, nullptr, act, lr, cfg.l2_part2(), round, trace);
    client.receive_gradients(grad, lr_part1, cfg.l2_part1());
  }
}

inline double shard_weight(const PreparedRun& p, ClientId c) { return static_cast<double>(p.shards.at(c).size()); }

inline void record_round(RunRecord& rec, const EvalResult& ev, std::uint64_t hash) {
  rec.accuracy.push_back(ev.per_label);
  rec.global_accuracy.push_back(ev.global);
  rec.model_hash.push_back(hash);
}

inline RunRecord start_record(const ExperimentConfig& cfg, const PreparedRun& p) {
  RunRecord rec;
  rec.order_kind = cfg.order;
  rec.label_order = p.policy.label_order;
  rec.seed = cfg.seed;
  if (p.policy.cyclic()) rec.position_of_label = round_schedule(p, 0, cfg.seed).position_of_label;
  return rec;
}

inline void require_protocol(const ExperimentConfig& cfg, Protocol expected, const char* name) {
  if (cfg.protocol != expected) throw ConfigError(std::string(name) + ": config names a different protocol");
}

}  // namespace detail

/// SplitFedV2: parallel part-1 replicas at clients, one part-2 updated
/// sequentially by the server in schedule order, part-1 averaged each round.
inline RunRecord run_sfl(const ExperimentConfig& cfg, const Dataset& dataset, const TraceSink& trace = {}) {
  detail::require_protocol(cfg, Protocol::kSfl, "run_sfl");
  const PreparedRun p = prepare_run(cfg, dataset);
  auto parts = split(p.initial_model, SplitSpec{cfg.split.cut1, std::nullopt});
  LayerStack part1 = std::move(parts.part1);
  LayerStack part2 = std::move(parts.part2a);
  RunRecord rec = detail::start_record(cfg, p);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const auto sched = round_schedule(p, r, cfg.seed);
    std::vector<LayerStack> replicas(p.shards.size());
    for (ClientId c : sched.order) {
      SplitClient client(c, part1);
      detail::client_turn(p, cfg, r, client, part2, trace);
      replicas[c] = std::move(client.part1());
    }
    std::vector<WeightedReplica> items;
    for (ClientId c = 0; c < replicas.size(); ++c) items.push_back({c, std::cref(replicas[c]), detail::shard_weight(p, c)});
    part1 = fedavg(std::move(items));
    const LayerStack model = concat({&part1, &part2});
    detail::record_round(rec, evaluate(model, p.eval), model.fingerprint());
  }
  rec.final_model = concat({&part1, &part2});
  return rec;
}

/// SFL with a shared part-2a and one part-2b head per client group; heads are
/// averaged (by routed samples) into a single head at the end of every round.
inline RunRecord run_sfl_hydra(const ExperimentConfig& cfg, const Dataset& dataset, const TraceSink& trace = {}) {
  detail::require_protocol(cfg, Protocol::kHydra, "run_sfl_hydra");
  const PreparedRun p = prepare_run(cfg, dataset);
  auto parts = split(p.initial_model, SplitSpec{cfg.split.cut1, cfg.hydra->cut2});
  LayerStack part1 = std::move(parts.part1);
  LayerStack part2a = std::move(parts.part2a);
  LayerStack part2b = std::move(parts.part2b);
  const GroupAssignment& groups = *p.groups;
  HeadBank bank(part2b, groups.group_count);
  RunRecord rec = detail::start_record(cfg, p);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const auto sched = round_schedule(p, r, cfg.seed);
    std::vector<LayerStack> replicas(p.shards.size());
    for (ClientId c : sched.order) {
      SplitClient client(c, part1);
      const std::size_t g = groups.group_of.at(c);
      // Routing is recorded per batch; the head is fixed for the client.
      const double lr = cfg.optimizer.lr_at(r);
      const double lr_part1 = cfg.freeze_part1 ? 0.0 : lr;
      const auto batches = client_batches(p.shards[c], r, cfg.seed, cfg.optimizer.batch_size);
      for (std::size_t b = 0; b < batches.size(); ++b) {
        std::vector<Label> labels;
        Tensor2D x = detail::gather_rows(p.train, batches[b], labels);
        auto act = client.send_activations(x, std::move(labels), b);
        const std::size_t head = bank.route(act, groups);
        if (head != g) throw ShapeError("routing changed within a client turn");
        auto grad = detail::server_step(part2a, &bank.head(head), act, lr, cfg.l2_part2(), r, trace);
        client.receive_gradients(grad, lr_part1, cfg.l2_part1());
      }
      replicas[c] = std::move(client.part1());
    }
    std::vector<WeightedReplica> items;
    for (ClientId c = 0; c < replicas.size(); ++c) items.push_back({c, std::cref(replicas[c]), detail::shard_weight(p, c)});
    part1 = fedavg(std::move(items));
    part2b = bank.aggregate(cfg.hydra->weighting);
    const LayerStack model = concat({&part1, &part2a, &part2b});
    detail::record_round(rec, evaluate(model, p.eval), model.fingerprint());
  }
  rec.final_model = concat({&part1, &part2a, &part2b});
  return rec;
}

/// SplitFedV1: every client trains its own copy of both parts; both are
/// averaged at the end of the round (equivalent to FedAvg on the whole model).
inline RunRecord run_splitfedv1(const ExperimentConfig& cfg, const Dataset& dataset, const TraceSink& trace = {}) {
  detail::require_protocol(cfg, Protocol::kSplitFedV1, "run_splitfedv1");
  const PreparedRun p = prepare_run(cfg, dataset);
  auto parts = split(p.initial_model, SplitSpec{cfg.split.cut1, std::nullopt});
  LayerStack part1 = std::move(parts.part1);
  LayerStack part2 = std::move(parts.part2a);
  RunRecord rec = detail::start_record(cfg, p);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const auto sched = round_schedule(p, r, cfg.seed);
    std::vector<LayerStack> p1(p.shards.size());
    std::vector<LayerStack> p2(p.shards.size());
    for (ClientId c : sched.order) {
      SplitClient client(c, part1);
      LayerStack server_copy = part2;
      detail::client_turn(p, cfg, r, client, server_copy, trace);
      p1[c] = std::move(client.part1());
      p2[c] = std::move(server_copy);
    }
    std::vector<WeightedReplica> i1;
    std::vector<WeightedReplica> i2;
    for (ClientId c = 0; c < p1.size(); ++c) {
      i1.push_back({c, std::cref(p1[c]), detail::shard_weight(p, c)});
      i2.push_back({c, std::cref(p2[c]), detail::shard_weight(p, c)});
    }
    part1 = fedavg(std::move(i1));
    part2 = fedavg(std::move(i2));
    const LayerStack model = concat({&part1, &part2});
    detail::record_round(rec, evaluate(model, p.eval), model.fingerprint());
  }
  rec.final_model = concat({&part1, &part2});
  return rec;
}

/// SplitFedV3: per-client part-1 replicas persist and are never averaged;
/// per-client part-2 copies are averaged each round. Inference takes the most
/// confident part-1 candidate.
inline RunRecord run_splitfedv3(const ExperimentConfig& cfg, const Dataset& dataset, const TraceSink& trace = {}) {
  detail::require_protocol(cfg, Protocol::kSplitFedV3, "run_splitfedv3");
  const PreparedRun p = prepare_run(cfg, dataset);
  auto parts = split(p.initial_model, SplitSpec{cfg.split.cut1, std::nullopt});
  std::vector<LayerStack> part1_of(p.shards.size(), parts.part1);
  LayerStack part2 = std::move(parts.part2a);
  RunRecord rec = detail::start_record(cfg, p);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const auto sched = round_schedule(p, r, cfg.seed);
    std::vector<LayerStack> p2(p.shards.size());
    for (ClientId c : sched.order) {
      SplitClient client(c, part1_of[c]);
      LayerStack server_copy = part2;
      detail::client_turn(p, cfg, r, client, server_copy, trace);
      part1_of[c] = std::move(client.part1());
      p2[c] = std::move(server_copy);
    }
    std::vector<WeightedReplica> items;
    for (ClientId c = 0; c < p2.size(); ++c) items.push_back({c, std::cref(p2[c]), detail::shard_weight(p, c)});
    part2 = fedavg(std::move(items));
    std::vector<LayerStack> candidates;
    Fnv1a h;
    for (const auto& p1 : part1_of) {
      candidates.push_back(concat({&p1, &part2}));
      h.update(candidates.back().fingerprint());
    }
    detail::record_round(rec, evaluate_most_confident(candidates, p.eval), h.digest());
  }
  return rec;
}

/// Classical sequential split learning: one part-1 handed from client to
/// client in schedule order, one part-2 at the server, no aggregation.
inline RunRecord run_splitnn(const ExperimentConfig& cfg, const Dataset& dataset, const TraceSink& trace = {}) {
  detail::require_protocol(cfg, Protocol::kSplitNN, "run_splitnn");
  const PreparedRun p = prepare_run(cfg, dataset);
  auto parts = split(p.initial_model, SplitSpec{cfg.split.cut1, std::nullopt});
  LayerStack part1 = std::move(parts.part1);
  LayerStack part2 = std::move(parts.part2a);
  RunRecord rec = detail::start_record(cfg, p);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const auto sched = round_schedule(p, r, cfg.seed);
    for (ClientId c : sched.order) {
      SplitClient client(c, std::move(part1));
      if (trace) trace({TraceEvent::Kind::kClientTurnStart, r, c, 0, 0, client.part1().fingerprint()});
      detail::client_turn(p, cfg, r, client, part2, trace);
      part1 = std::move(client.part1());
      if (trace) trace({TraceEvent::Kind::kClientTurnEnd, r, c, 0, 0, part1.fingerprint()});
    }
    const LayerStack model = concat({&part1, &part2});
    detail::record_round(rec, evaluate(model, p.eval), model.fingerprint());
  }
  rec.final_model = concat({&part1, &part2});
  return rec;
}

/// Multi-head FL: clients train body + their group's head locally; the body
/// is averaged over all clients and each head only within its group.
/// Inference picks the head with the highest softmax output.
inline RunRecord run_multihead_fl(const ExperimentConfig& cfg, const Dataset& dataset, const TraceSink& trace = {}) {
  detail::require_protocol(cfg, Protocol::kMultiheadFL, "run_multihead_fl");
  const PreparedRun p = prepare_run(cfg, dataset);
  const std::size_t n = p.initial_model.layer_count();
  const std::size_t cut = cfg.hydra->cut2;
  LayerStack body = p.initial_model.slice(0, cut);
  const GroupAssignment& groups = *p.groups;
  std::vector<LayerStack> heads(groups.group_count, p.initial_model.slice(cut, n));
  RunRecord rec = detail::start_record(cfg, p);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const auto sched = round_schedule(p, r, cfg.seed);
    const double lr = cfg.optimizer.lr_at(r);
    std::vector<LayerStack> bodies(p.shards.size());
    std::vector<LayerStack> local_heads(p.shards.size());
    for (ClientId c : sched.order) {
      const std::size_t g = groups.group_of.at(c);
      LayerStack local = concat({&body, &heads[g]});
      for (const auto& batch : client_batches(p.shards[c], r, cfg.seed, cfg.optimizer.batch_size)) {
        std::vector<Label> labels;
        Tensor2D x = detail::gather_rows(p.train, batch, labels);
        auto fwd = forward(local, x);
        auto loss = loss_and_grad(fwd.output, labels);
        auto back = backward(local, fwd.tape, loss.logit_grad, 0, n);
        sgd_step(local, back.param_grads, 0, lr, cfg.l2_part2());
      }
      if (trace) trace({TraceEvent::Kind::kHeadTrained, r, c, 0, g, 0});
      bodies[c] = local.slice(0, cut);
      local_heads[c] = local.slice(cut, n);
    }
    std::vector<WeightedReplica> bi;
    for (ClientId c = 0; c < bodies.size(); ++c) bi.push_back({c, std::cref(bodies[c]), detail::shard_weight(p, c)});
    body = fedavg(std::move(bi));
    for (std::size_t g = 0; g < heads.size(); ++g) {
      std::vector<WeightedReplica> hi;
      for (ClientId c : groups.members(g)) hi.push_back({c, std::cref(local_heads[c]), detail::shard_weight(p, c)});
      if (!hi.empty()) heads[g] = fedavg(std::move(hi));
    }
    std::vector<LayerStack> candidates;
    Fnv1a h;
    for (const auto& head : heads) {
      candidates.push_back(concat({&body, &head}));
      h.update(candidates.back().fingerprint());
    }
    detail::record_round(rec, evaluate_most_confident(candidates, p.eval), h.digest());
  }
  return rec;
}

inline RunRecord run_experiment(const ExperimentConfig& cfg, const Dataset& dataset, const TraceSink& trace = {}) {
  switch (cfg.protocol) {
    case Protocol::kSfl: return run_sfl(cfg, dataset, trace);
    case Protocol::kHydra: return run_sfl_hydra(cfg, dataset, trace);
    case Protocol::kSplitFedV1: return run_splitfedv1(cfg, dataset, trace);
    case Protocol::kSplitFedV3: return run_splitfedv3(cfg, dataset, trace);
    case Protocol::kSplitNN: return run_splitnn(cfg, dataset, trace);
    case Protocol::kMultiheadFL: return run_multihead_fl(cfg, dataset, trace);
  }
  throw ConfigError("unknown protocol");
}

inline std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kSfl: return "sfl";
    case Protocol::kHydra: return "hydra";
    case Protocol::kSplitFedV1: return "splitfedv1";
    case Protocol::kSplitFedV3: return "splitfedv3";
    case Protocol::kSplitNN: return "splitnn";
    case Protocol::kMultiheadFL: return "multihead";
  }
  return "?";
}

}  // namespace sflsim

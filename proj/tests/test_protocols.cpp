#include <gtest/gtest.h>

#include "sflsim/metrics.hpp"
#include "sflsim/protocols.hpp"
#include "support/reference.hpp"

namespace sflsim {
namespace {

using testing::small_config;
using testing::small_dataset;

HydraConfig hydra(std::size_t heads, std::size_t cut2) {
  HydraConfig h;
  h.heads = heads;
  h.cut2 = cut2;
  return h;
}

std::uint64_t hash_of_copies(std::uint64_t fp, std::size_t copies) {
  Fnv1a h;
  for (std::size_t i = 0; i < copies; ++i) h.update(fp);
  return h.digest();
}

TEST(Protocols, AllRunsProduceValidAccuracies) {
  const auto d = small_dataset();
  for (Protocol proto : {Protocol::kSfl, Protocol::kHydra, Protocol::kSplitFedV1, Protocol::kSplitFedV3,
                         Protocol::kSplitNN, Protocol::kMultiheadFL}) {
    auto cfg = small_config(proto, 6);
    if (cfg.uses_heads()) cfg.hydra = hydra(0, 4);
    const auto rec = run_experiment(cfg, d);
    ASSERT_EQ(rec.rounds(), cfg.rounds) << to_string(proto);
    EXPECT_EQ(rec.label_count(), 3u);
    for (const auto& row : rec.accuracy) {
      for (double a : row) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
      }
    }
    EXPECT_EQ(rec.model_hash.size(), cfg.rounds);
    EXPECT_EQ(run_experiment(cfg, d).model_hash, rec.model_hash) << to_string(proto);
  }
}

TEST(Protocols, HydraWithOneHeadEqualsSfl) {
  const auto d = small_dataset();
  for (std::size_t cut1 : {1u, 2u, 3u}) {
    auto sfl = small_config(Protocol::kSfl, 6);
    sfl.split.cut1 = cut1;
    auto hyd = sfl;
    hyd.protocol = Protocol::kHydra;
    hyd.hydra = hydra(1, 4);
    const auto a = run_sfl(sfl, d);
    const auto b = run_sfl_hydra(hyd, d);
    EXPECT_EQ(a.model_hash, b.model_hash) << "cut1 " << cut1;
    EXPECT_EQ(*a.final_model, *b.final_model);
  }
}

TEST(Protocols, SplitFedV1EqualsFedAvgReference) {
  const auto d = small_dataset();
  auto cfg = small_config(Protocol::kSplitFedV1, 6);
  const auto rec = run_splitfedv1(cfg, d);
  const auto ref = testing::fedavg_reference(cfg, d);
  EXPECT_EQ(rec.model_hash, ref.model_hash);
  EXPECT_EQ(*rec.final_model, ref.final_model);
}

TEST(Protocols, SplitFedV1DoesNotDependOnCut) {
  const auto d = small_dataset();
  auto cfg = small_config(Protocol::kSplitFedV1, 3);
  cfg.split.cut1 = 1;
  const auto base = run_splitfedv1(cfg, d).model_hash;
  for (std::size_t cut1 = 2; cut1 < cfg.layer_count(); ++cut1) {
    cfg.split.cut1 = cut1;
    EXPECT_EQ(run_splitfedv1(cfg, d).model_hash, base) << "cut1 " << cut1;
  }
}

TEST(Protocols, SingleClientSflEqualsCentralizedSgd) {
  const auto d = small_dataset();
  ExperimentConfig cfg = small_config(Protocol::kSfl, 3);
  cfg.partition = PartitionSpec{IidPartition{}, 1};
  cfg.order = OrderKind::kRandom;
  cfg.order_phi = 1;
  cfg.l2_mode = L2Mode::kFullModel;
  cfg.l2_lambda = 1e-3;

  const PreparedRun p = prepare_run(cfg, d);
  LayerStack model = p.initial_model;
  std::vector<std::uint64_t> hashes;
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    for (const auto& batch : client_batches(p.shards[0], r, cfg.seed, cfg.optimizer.batch_size)) {
      std::vector<Label> y;
      Tensor2D x = detail::gather_rows(p.train, batch, y);
      auto f = forward(model, x);
      auto loss = loss_and_grad(f.output, y);
      auto b = backward(model, f.tape, loss.logit_grad, 0, model.layer_count());
      sgd_step(model, b.param_grads, 0, cfg.optimizer.lr_at(r), cfg.l2_lambda);
    }
    hashes.push_back(model.fingerprint());
  }
  for (Protocol proto : {Protocol::kSfl, Protocol::kSplitNN, Protocol::kSplitFedV1}) {
    cfg.protocol = proto;
    EXPECT_EQ(run_experiment(cfg, d).model_hash, hashes) << to_string(proto);
  }
}

TEST(Protocols, GradientIsSentBeforeServerUpdate) {
  const auto d = small_dataset();
  for (Protocol proto : {Protocol::kSfl, Protocol::kHydra}) {
    auto cfg = small_config(proto, 3);
    if (cfg.uses_heads()) cfg.hydra = hydra(0, 4);
    std::vector<TraceEvent> events;
    run_experiment(cfg, d, [&](const TraceEvent& e) { events.push_back(e); });
    ASSERT_FALSE(events.empty());
    std::size_t pairs = 0;
    for (std::size_t i = 0; i + 1 < events.size(); i += 2) {
      ASSERT_EQ(events[i].kind, TraceEvent::Kind::kGradientSent);
      ASSERT_EQ(events[i + 1].kind, TraceEvent::Kind::kServerUpdated);
      EXPECT_EQ(events[i].batch, events[i + 1].batch);
      EXPECT_NE(events[i].hash, events[i + 1].hash);
      ++pairs;
    }
    EXPECT_EQ(events.size(), 2 * pairs);
    // Within SFL the shared part-2 carries over batch to batch.
    if (proto == Protocol::kSfl) {
      for (std::size_t i = 2; i < events.size(); i += 2) EXPECT_EQ(events[i].hash, events[i - 1].hash);
    }
  }
}

TEST(Protocols, SplitNNRelaysPart1BetweenClients) {
  const auto d = small_dataset();
  auto cfg = small_config(Protocol::kSplitNN, 6);
  cfg.order = OrderKind::kRandom;
  std::vector<TraceEvent> turns;
  run_splitnn(cfg, d, [&](const TraceEvent& e) {
    if (e.kind == TraceEvent::Kind::kClientTurnStart || e.kind == TraceEvent::Kind::kClientTurnEnd) {
      turns.push_back(e);
    }
  });
  ASSERT_EQ(turns.size(), 2 * 6 * cfg.rounds);
  for (std::size_t i = 2; i < turns.size(); i += 2) {
    EXPECT_EQ(turns[i].kind, TraceEvent::Kind::kClientTurnStart);
    EXPECT_EQ(turns[i].hash, turns[i - 1].hash);
    EXPECT_NE(turns[i].hash, turns[i + 1].hash);
  }
}

TEST(Protocols, MultiheadHeadsOnlySeeTheirGroup) {
  const auto d = small_dataset();
  auto cfg = small_config(Protocol::kMultiheadFL, 6);
  cfg.hydra = hydra(3, 4);
  const PreparedRun p = prepare_run(cfg, d);
  std::size_t events = 0;
  run_multihead_fl(cfg, d, [&](const TraceEvent& e) {
    ASSERT_EQ(e.kind, TraceEvent::Kind::kHeadTrained);
    EXPECT_EQ(e.head, p.groups->group_of.at(e.client));
    ++events;
  });
  EXPECT_EQ(events, 6 * cfg.rounds);
  // Label-pure clients land on the head of their own label.
  for (ClientId c = 0; c < 6; ++c) {
    EXPECT_EQ(p.policy.label_order.at(p.groups->group_of[c]), *p.shards[c].dominant_label);
  }
}

TEST(Protocols, MultiheadWithOneHeadEqualsFedAvg) {
  const auto d = small_dataset();
  auto cfg = small_config(Protocol::kMultiheadFL, 3);
  cfg.hydra = hydra(1, 4);
  const auto rec = run_multihead_fl(cfg, d);
  auto v1 = cfg;
  v1.protocol = Protocol::kSplitFedV1;
  const auto ref = testing::fedavg_reference(v1, d);
  ASSERT_EQ(rec.model_hash.size(), ref.model_hash.size());
  for (std::size_t r = 0; r < rec.model_hash.size(); ++r) {
    EXPECT_EQ(rec.model_hash[r], hash_of_copies(ref.model_hash[r], 1));
  }
}

TEST(Protocols, FrozenSplitFedV3MatchesFrozenV1) {
  const auto d = small_dataset();
  auto cfg = small_config(Protocol::kSplitFedV3, 3);
  cfg.freeze_part1 = true;
  const auto v3 = run_splitfedv3(cfg, d);
  cfg.protocol = Protocol::kSplitFedV1;
  const auto v1 = run_splitfedv1(cfg, d);
  for (std::size_t r = 0; r < cfg.rounds; ++r) EXPECT_EQ(v3.model_hash[r], hash_of_copies(v1.model_hash[r], 3));
  EXPECT_EQ(v3.accuracy, v1.accuracy);
  // Part-1 never moves when frozen.
  EXPECT_EQ(v1.final_model->slice(0, cfg.split.cut1), prepare_run(cfg, d).initial_model.slice(0, cfg.split.cut1));
}

TEST(Protocols, L2ModesAfterOneBatch) {
  const auto d = small_dataset();
  for (L2Mode mode : {L2Mode::kNone, L2Mode::kPart2Only, L2Mode::kFullModel}) {
    ExperimentConfig cfg = small_config(Protocol::kSfl, 3);
    cfg.partition = PartitionSpec{IidPartition{}, 1};
    cfg.order = OrderKind::kRandom;
    cfg.rounds = 1;
    cfg.optimizer.batch_size = 1000;  // a single batch
    cfg.l2_mode = mode;
    cfg.l2_lambda = 0.1;
    const PreparedRun p = prepare_run(cfg, d);
    const auto batches = client_batches(p.shards[0], 0, cfg.seed, cfg.optimizer.batch_size);
    ASSERT_EQ(batches.size(), 1u);
    std::vector<Label> y;
    Tensor2D x = detail::gather_rows(p.train, batches[0], y);
    LayerStack expected = p.initial_model;
    auto f = forward(expected, x);
    auto loss = loss_and_grad(f.output, y);
    auto b = backward(expected, f.tape, loss.logit_grad, 0, expected.layer_count());
    const double lr = cfg.optimizer.lr_at(0);
    for (std::size_t i = 0; i < expected.layer_count(); ++i) {
      const bool part2 = i >= cfg.split.cut1;
      const double l2 = mode == L2Mode::kFullModel || (mode == L2Mode::kPart2Only && part2) ? 0.1 : 0.0;
      sgd_step(expected.layer(i), b.param_grads[i], lr, l2);
    }
    EXPECT_EQ(*run_sfl(cfg, d).final_model, expected);
  }
}

TEST(Evaluate, PerfectAndRandomPredictions) {
  const auto d = generate_synthetic(4, 3, 2500, 1.0, 3);
  const auto perfect = score_predictions(d.labels, d);
  EXPECT_EQ(perfect.global, 1.0);
  EXPECT_EQ(perfect.per_label, std::vector<double>(4, 1.0));
  Rng rng(1);
  Tensor2D logits(d.size(), 4);
  for (double& v : logits.data()) v = rng.uniform();
  EXPECT_NEAR(score_predictions(argmax_rows(logits), d).global, 0.25, 0.03);
}

TEST(Evaluate, PerLabelRecombinesToGlobal) {
  Dataset d = generate_synthetic(3, 2, 5, 1.0, 3);
  d = d.subset({0, 1, 2, 3, 4, 5, 6, 9, 12});  // unequal label counts
  Rng rng(2);
  std::vector<Label> pred(d.size());
  for (auto& l : pred) l = rng.below(3);
  const auto ev = score_predictions(pred, d);
  std::vector<double> count(3, 0.0);
  for (Label l : d.labels) count[l] += 1.0;
  double total = 0.0;
  for (Label l = 0; l < 3; ++l) total += ev.per_label[l] * count[l];
  EXPECT_NEAR(total / static_cast<double>(d.size()), ev.global, 1e-12);
}

TEST(Config, ValidationErrors) {
  auto cfg = small_config(Protocol::kSfl, 3);
  cfg.order_phi = 2;
  EXPECT_THROW(cfg.validate(3), ConfigError);
  cfg = small_config(Protocol::kHydra, 3);
  EXPECT_THROW(cfg.validate(3), ConfigError);  // no hydra section
  cfg.hydra = hydra(4, 4);
  EXPECT_THROW(cfg.validate(3), ConfigError);  // G > L
  cfg.hydra = hydra(2, 4);
  cfg.hydra->label_to_group = std::vector<std::size_t>{0, 0, 0};
  EXPECT_THROW(cfg.validate(3), ConfigError);  // group 1 unreachable
  cfg = small_config(Protocol::kSfl, 3);
  cfg.partition.method = IidPartition{};
  EXPECT_THROW(cfg.validate(3), ConfigError);  // cyclic without dominant labels
}

TEST(Hydra, SuperclassModeGroupsByMap) {
  const auto d = generate_synthetic(4, 4, 60, 2.0, 5);
  ExperimentConfig cfg;
  cfg.protocol = Protocol::kHydra;
  cfg.rounds = 2;
  cfg.hidden = {6, 6};
  cfg.split.cut1 = 1;
  cfg.partition = PartitionSpec{DominantLabelPartition{100.0, 1}, 4};
  cfg.hydra = hydra(2, 4);
  cfg.hydra->label_to_group = std::vector<std::size_t>{0, 0, 1, 1};
  const PreparedRun p = prepare_run(cfg, d);
  EXPECT_EQ(p.groups->group_of, (std::vector<std::size_t>{0, 0, 1, 1}));
  EXPECT_EQ(run_sfl_hydra(cfg, d).rounds(), 2u);
}

// Directional toy comparisons under strong label skew and cyclic order.
ExperimentConfig skewed(Protocol proto, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.protocol = proto;
  cfg.rounds = 30;
  cfg.split.cut1 = 1;
  cfg.order = OrderKind::kCyclic;
  cfg.partition = PartitionSpec{DominantLabelPartition{80.0, 1}, 4};
  if (cfg.uses_heads()) cfg.hydra = hydra(4, 4);
  cfg.seed = seed;
  return cfg;
}

double pooled_pg(Protocol proto) {
  std::vector<RunRecord> recs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto d = generate_synthetic(4, 8, 500, 2.0, derive_seed(seed, Stream::kData));
    recs.push_back(run_experiment(skewed(proto, seed), d));
  }
  return report(recs).reported_pg;
}

TEST(Directional, HydraGapBelowSplitNNAndMultihead) {
  const double hydra_pg = pooled_pg(Protocol::kHydra);
  EXPECT_LT(hydra_pg, pooled_pg(Protocol::kSplitNN));
  EXPECT_LT(hydra_pg, pooled_pg(Protocol::kMultiheadFL));
}

}  // namespace
}  // namespace sflsim

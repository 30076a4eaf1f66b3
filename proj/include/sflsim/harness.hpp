#pragma once

// Experiment files, seed sweeps and on-disk results.
//
// An experiment suite is a JSON document:
//
//   {
//     "base":     { ...experiment... },
//     "variants": [ {"name": "hydra", "set": { ...merge patch over base... }} ],
//     "seeds":    [1, 2, 3]
//   }
//
// Unknown keys anywhere are rejected. See docs/config.md for every field.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sflsim/checkpoint.hpp"
#include "sflsim/metrics.hpp"
#include "sflsim/protocols.hpp"

namespace sflsim {

using nlohmann::json;

struct SyntheticSource {
  std::size_t labels = 4;
  std::size_t dim = 8;
  std::size_t per_label = 500;
  double separation = 3.0;
  std::optional<std::uint64_t> seed;  // derived from the run seed when absent
};

struct CsvSource {
  std::string path;
};

using DataSource = std::variant<SyntheticSource, CsvSource>;

/// A fully resolved experiment minus its seed.
struct RunSpec {
  std::string name;
  ExperimentConfig experiment;
  DataSource data;
};

namespace config_detail {

inline void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok |= it.key() == a;
    if (!ok) throw ConfigError(path + "." + it.key() + ": unknown key");
  }
}

template <class T>
T get_or(const json& j, const std::string& path, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type (got " + j.at(key).dump() + ")");
  }
}

template <class T>
T require(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ConfigError(path + "." + key + ": required");
  return get_or<T>(j, path, key, T{});
}

inline Protocol parse_protocol(const std::string& s) {
  if (s == "sfl") return Protocol::kSfl;
  if (s == "hydra") return Protocol::kHydra;
  if (s == "splitfedv1" || s == "fl") return Protocol::kSplitFedV1;
  if (s == "splitfedv3") return Protocol::kSplitFedV3;
  if (s == "splitnn") return Protocol::kSplitNN;
  if (s == "multihead") return Protocol::kMultiheadFL;
  throw ConfigError("protocol: unknown value '" + s + "'");
}

inline OrderKind parse_order(const std::string& s) {
  if (s == "random") return OrderKind::kRandom;
  if (s == "cyclic") return OrderKind::kCyclic;
  if (s == "cyclic_reverse") return OrderKind::kCyclicAndReverse;
  throw ConfigError("order.policy: unknown value '" + s + "'");
}

inline L2Mode parse_l2(const std::string& s) {
  if (s == "none") return L2Mode::kNone;
  if (s == "part2") return L2Mode::kPart2Only;
  if (s == "full") return L2Mode::kFullModel;
  throw ConfigError("l2.mode: unknown value '" + s + "'");
}

inline std::string l2_name(L2Mode m) {
  switch (m) {
    case L2Mode::kNone: return "none";
    case L2Mode::kPart2Only: return "part2";
    case L2Mode::kFullModel: return "full";
  }
  return "?";
}

}  // namespace config_detail

/// Parses one experiment object (no seed). Missing fields take defaults.
inline RunSpec parse_run_spec(const json& j, const std::string& name = "default") {
  using namespace config_detail;
  check_keys(j, "experiment", {"protocol", "rounds", "data", "model", "split", "order", "partition", "hydra",
                               "optimizer", "l2", "eval_fraction", "freeze_part1"});
  RunSpec spec;
  spec.name = name;
  ExperimentConfig& c = spec.experiment;
  c.protocol = parse_protocol(get_or<std::string>(j, "experiment", "protocol", "sfl"));
  c.rounds = get_or<std::size_t>(j, "experiment", "rounds", 100);
  c.eval_fraction = get_or<double>(j, "experiment", "eval_fraction", 0.2);
  c.freeze_part1 = get_or<bool>(j, "experiment", "freeze_part1", false);

  const json data = j.value("data", json::object());
  check_keys(data, "data", {"source", "labels", "dim", "per_label", "separation", "seed", "path"});
  const auto source = get_or<std::string>(data, "data", "source", "synthetic");
  if (source == "synthetic") {
    if (data.contains("path")) throw ConfigError("data.path: only valid for csv sources");
    SyntheticSource s;
    s.labels = get_or(data, "data", "labels", s.labels);
    s.dim = get_or(data, "data", "dim", s.dim);
    s.per_label = get_or(data, "data", "per_label", s.per_label);
    s.separation = get_or(data, "data", "separation", s.separation);
    if (data.contains("seed")) s.seed = require<std::uint64_t>(data, "data", "seed");
    spec.data = s;
  } else if (source == "csv") {
    check_keys(data, "data", {"source", "path"});
    spec.data = CsvSource{require<std::string>(data, "data", "path")};
  } else {
    throw ConfigError("data.source: unknown value '" + source + "'");
  }

  const json model = j.value("model", json::object());
  check_keys(model, "model", {"hidden"});
  c.hidden = get_or(model, "model", "hidden", c.hidden);

  const json sp = j.value("split", json::object());
  check_keys(sp, "split", {"cut1"});
  c.split.cut1 = get_or<std::size_t>(sp, "split", "cut1", 1);

  const json order = j.value("order", json::object());
  check_keys(order, "order", {"policy", "phi", "label_order"});
  c.order = parse_order(get_or<std::string>(order, "order", "policy", "random"));
  c.order_phi = get_or<std::size_t>(order, "order", "phi", 1);
  if (order.contains("label_order")) c.label_order = require<std::vector<Label>>(order, "order", "label_order");

  const json part = j.value("partition", json::object());
  const auto method = get_or<std::string>(part, "partition", "method", "iid");
  c.partition.client_count = get_or<std::size_t>(part, "partition", "clients", 4);
  if (method == "iid") {
    check_keys(part, "partition", {"method", "clients"});
    c.partition.method = IidPartition{};
  } else if (method == "dominant_label") {
    check_keys(part, "partition", {"method", "clients", "p", "phi"});
    c.partition.method = DominantLabelPartition{get_or<double>(part, "partition", "p", 80.0),
                                                get_or<std::size_t>(part, "partition", "phi", 1)};
  } else if (method == "dirichlet") {
    check_keys(part, "partition", {"method", "clients", "alpha"});
    c.partition.method = DirichletPartition{get_or<double>(part, "partition", "alpha", 0.3)};
  } else if (method == "sharding") {
    check_keys(part, "partition", {"method", "clients", "p", "n"});
    c.partition.method = ShardingPartition{get_or<double>(part, "partition", "p", 80.0),
                                           get_or<std::size_t>(part, "partition", "n", 2)};
  } else {
    throw ConfigError("partition.method: unknown value '" + method + "'");
  }

  if (j.contains("hydra")) {
    const json& h = j.at("hydra");
    check_keys(h, "hydra", {"heads", "cut2", "label_to_group", "weighting"});
    HydraConfig hc;
    hc.heads = get_or<std::size_t>(h, "hydra", "heads", 0);
    hc.cut2 = require<std::size_t>(h, "hydra", "cut2");
    if (h.contains("label_to_group")) {
      hc.label_to_group = require<std::vector<std::size_t>>(h, "hydra", "label_to_group");
    }
    const auto w = get_or<std::string>(h, "hydra", "weighting", "samples");
    if (w == "samples") {
      hc.weighting = HeadWeighting::kRoutedSamples;
    } else if (w == "uniform") {
      hc.weighting = HeadWeighting::kUniform;
    } else {
      throw ConfigError("hydra.weighting: unknown value '" + w + "'");
    }
    c.hydra = hc;
  }

  const json opt = j.value("optimizer", json::object());
  check_keys(opt, "optimizer", {"lr", "decay", "min_lr", "batch_size"});
  c.optimizer.learning_rate = get_or(opt, "optimizer", "lr", c.optimizer.learning_rate);
  c.optimizer.decay = get_or(opt, "optimizer", "decay", c.optimizer.decay);
  c.optimizer.min_lr = get_or(opt, "optimizer", "min_lr", c.optimizer.min_lr);
  c.optimizer.batch_size = get_or(opt, "optimizer", "batch_size", c.optimizer.batch_size);

  const json l2 = j.value("l2", json::object());
  check_keys(l2, "l2", {"mode", "lambda"});
  c.l2_mode = parse_l2(get_or<std::string>(l2, "l2", "mode", "none"));
  c.l2_lambda = get_or<double>(l2, "l2", "lambda", 0.0);
  return spec;
}

/// Every semantically meaningful field with defaults filled in. The config
/// hash is computed over this document.
inline json canonical_json(const RunSpec& spec) {
  const ExperimentConfig& c = spec.experiment;
  json j;
  j["protocol"] = to_string(c.protocol);
  j["rounds"] = c.rounds;
  j["eval_fraction"] = c.eval_fraction;
  j["freeze_part1"] = c.freeze_part1;
  if (const auto* s = std::get_if<SyntheticSource>(&spec.data)) {
    j["data"] = {{"source", "synthetic"}, {"labels", s->labels}, {"dim", s->dim},
                 {"per_label", s->per_label}, {"separation", s->separation}};
    if (s->seed) j["data"]["seed"] = *s->seed;
  } else {
    j["data"] = {{"source", "csv"}, {"path", std::get<CsvSource>(spec.data).path}};
  }
  j["model"] = {{"hidden", c.hidden}};
  j["split"] = {{"cut1", c.split.cut1}};
  j["order"] = {{"policy", to_string(c.order)}, {"phi", c.order_phi}};
  if (c.label_order) j["order"]["label_order"] = *c.label_order;
  json part = {{"clients", c.partition.client_count}};
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IidPartition>) {
          part["method"] = "iid";
        } else if constexpr (std::is_same_v<T, DominantLabelPartition>) {
          part["method"] = "dominant_label";
          part["p"] = m.percent;
          part["phi"] = m.clients_per_label;
        } else if constexpr (std::is_same_v<T, DirichletPartition>) {
          part["method"] = "dirichlet";
          part["alpha"] = m.alpha;
        } else {
          part["method"] = "sharding";
          part["p"] = m.percent;
          part["n"] = m.dominant_per_group;
        }
      },
      c.partition.method);
  j["partition"] = part;
  if (c.hydra) {
    j["hydra"] = {{"heads", c.hydra->heads},
                  {"cut2", c.hydra->cut2},
                  {"weighting", c.hydra->weighting == HeadWeighting::kUniform ? "uniform" : "samples"}};
    if (c.hydra->label_to_group) j["hydra"]["label_to_group"] = *c.hydra->label_to_group;
  }
  j["optimizer"] = {{"lr", c.optimizer.learning_rate},
                    {"decay", c.optimizer.decay},
                    {"min_lr", c.optimizer.min_lr},
                    {"batch_size", c.optimizer.batch_size}};
  j["l2"] = {{"mode", config_detail::l2_name(c.l2_mode)}, {"lambda", c.l2_lambda}};
  j["init"] = "uniform_fan_in";
  return j;
}

inline std::string config_hash(const RunSpec& spec) {
  Fnv1a h;
  h.update(canonical_json(spec).dump());
  return to_hex(h.digest());
}

inline Dataset load_dataset(const DataSource& source, std::uint64_t run_seed) {
  if (const auto* s = std::get_if<SyntheticSource>(&source)) {
    const std::uint64_t seed = s->seed.value_or(derive_seed(run_seed, Stream::kData));
    return generate_synthetic(s->labels, s->dim, s->per_label, s->separation, seed);
  }
  return load_csv(std::get<CsvSource>(source).path);
}

struct ExperimentSuite {
  std::vector<RunSpec> variants;
  std::vector<std::uint64_t> seeds;
};

inline ExperimentSuite parse_suite(const json& j) {
  using namespace config_detail;
  check_keys(j, "suite", {"base", "variants", "seeds"});
  const json base = j.value("base", json::object());
  ExperimentSuite suite;
  if (j.contains("seeds")) {
    suite.seeds = require<std::vector<std::uint64_t>>(j, "suite", "seeds");
  } else {
    for (std::uint64_t s = 0; s < 10; ++s) suite.seeds.push_back(s);
  }
  if (suite.seeds.empty()) throw ConfigError("suite.seeds: must not be empty");
  std::set<std::uint64_t> distinct(suite.seeds.begin(), suite.seeds.end());
  if (distinct.size() != suite.seeds.size()) throw ConfigError("suite.seeds: seeds must be distinct");

  const json variants = j.value("variants", json::array({json::object()}));
  if (!variants.is_array() || variants.empty()) throw ConfigError("suite.variants: expected a non-empty array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const std::string path = "suite.variants[" + std::to_string(i) + "]";
    const json& v = variants[i];
    check_keys(v, path, {"name", "set"});
    const auto name = get_or<std::string>(v, path, "name", "variant" + std::to_string(i));
    if (!names.insert(name).second) throw ConfigError(path + ".name: duplicate '" + name + "'");
    json merged = base;
    merged.merge_patch(v.value("set", json::object()));
    try {
      suite.variants.push_back(parse_run_spec(merged, name));
    } catch (const ConfigError& e) {
      throw ConfigError(path + " (" + name + "): " + e.what());
    }
  }
  return suite;
}

inline ExperimentSuite load_suite(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open suite file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_suite(j);
}

/// Checks every variant against its data (label count) before any training.
inline void validate_suite(const ExperimentSuite& suite) {
  for (const auto& v : suite.variants) {
    try {
      std::size_t labels = 0;
      if (const auto* s = std::get_if<SyntheticSource>(&v.data)) {
        if (s->labels < 2 || s->dim < 2 || s->per_label < 1) throw ConfigError("data: invalid synthetic shape");
        labels = s->labels;
      } else {
        labels = load_csv(std::get<CsvSource>(v.data).path).label_count;
      }
      v.experiment.validate(labels);
    } catch (const ConfigError& e) {
      throw ConfigError("variant '" + v.name + "': " + e.what());
    }
  }
}

// ------------------------------------------------------------------ output

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes via a temporary file and rename so readers never see partial files.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string accuracy_csv(const RunRecord& rec) {
  std::string s = "round,label,per_label_acc\n";
  for (std::size_t r = 0; r < rec.rounds(); ++r) {
    for (std::size_t l = 0; l < rec.label_count(); ++l) {
      s += std::to_string(r + 1) + "," + std::to_string(l) + "," + format_double(rec.accuracy[r][l]) + "\n";
    }
  }
  return s;
}

inline std::string global_csv(const RunRecord& rec) {
  std::string s = "round,global_acc\n";
  for (std::size_t r = 0; r < rec.rounds(); ++r) {
    s += std::to_string(r + 1) + "," + format_double(rec.global_accuracy[r]) + "\n";
  }
  return s;
}

inline json record_metadata(const RunSpec& spec, const RunRecord& rec) {
  json j;
  j["name"] = spec.name;
  j["config"] = canonical_json(spec);
  j["config_hash"] = rec.config_hash;
  j["seed"] = rec.seed;
  j["order"] = to_string(rec.order_kind);
  j["label_order"] = rec.label_order;
  json pos = json::object();
  for (const auto& [label, p] : rec.position_of_label) pos[std::to_string(label)] = p;
  j["position_of_label"] = pos;
  json hashes = json::array();
  for (auto h : rec.model_hash) hashes.push_back(to_hex(h));
  j["model_hash"] = hashes;
  return j;
}

inline std::string pg_csv(const MetricReport& rep) {
  std::string s = "round,pg_median\n";
  for (std::size_t r = 0; r < rep.pg_series.size(); ++r) {
    s += std::to_string(r + 1) + "," + format_double(rep.pg_series[r]) + "\n";
  }
  return s;
}

inline std::string per_position_csv(const Matrix& m) {
  std::string s = "position,round,acc_median\n";
  for (std::size_t k = 0; k < m.size(); ++k) {
    for (std::size_t r = 0; r < m[k].size(); ++r) {
      s += std::to_string(k + 1) + "," + std::to_string(r + 1) + "," + format_double(m[k][r]) + "\n";
    }
  }
  return s;
}

inline json report_json(const MetricReport& rep) {
  return {{"runs", rep.runs},
          {"backward_transfer", rep.backward_transfer},
          {"backward_transfer_std", rep.backward_transfer_std},
          {"reported_acc", rep.reported_acc},
          {"acc_std", rep.acc_std},
          {"reported_pg", rep.reported_pg},
          {"pg_std", rep.pg_std},
          {"report_window", kReportWindow}};
}

/// Writes `<stem>.json`, `<stem>_pg.csv` and, for cyclic runs, `<stem>_per_position.csv`.
inline void write_report(const std::filesystem::path& dir, const std::string& stem, const MetricReport& rep,
                         json extra = json::object()) {
  json j = report_json(rep);
  j.update(extra);
  write_file_atomic(dir / (stem + ".json"), j.dump(2) + "\n");
  write_file_atomic(dir / (stem + "_pg.csv"), pg_csv(rep));
  if (rep.per_position) write_file_atomic(dir / (stem + "_per_position.csv"), per_position_csv(*rep.per_position));
}

inline void write_record(const std::filesystem::path& dir, const RunSpec& spec, const RunRecord& rec) {
  const std::string stem = rec.config_hash + "_" + std::to_string(rec.seed);
  write_file_atomic(dir / (stem + ".csv"), accuracy_csv(rec));
  write_file_atomic(dir / (stem + "_global.csv"), global_csv(rec));
  write_file_atomic(dir / (stem + ".record.json"), record_metadata(spec, rec).dump(2) + "\n");
  if (rec.final_model) {
    write_file_atomic(dir / (stem + "_model.json"), checkpoint_to_json(*rec.final_model).dump(1) + "\n");
  }
}

/// Reads a record back from `<stem>.record.json` and its sibling CSV files.
inline RunRecord read_record(const std::filesystem::path& meta_path) {
  std::ifstream in(meta_path);
  if (!in) throw ConfigError("cannot open " + meta_path.string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw ConfigError(meta_path.string() + ": " + e.what());
  }
  RunRecord rec;
  try {
    rec.config_hash = meta.at("config_hash").get<std::string>();
    rec.seed = meta.at("seed").get<std::uint64_t>();
    rec.order_kind = config_detail::parse_order(meta.at("order").get<std::string>());
    rec.label_order = meta.at("label_order").get<std::vector<Label>>();
    for (auto it = meta.at("position_of_label").begin(); it != meta.at("position_of_label").end(); ++it) {
      rec.position_of_label[std::stoul(it.key())] = it.value().get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(meta_path.string() + ": " + e.what());
  }
  std::string stem = meta_path.filename().string();
  stem = stem.substr(0, stem.size() - std::string(".record.json").size());
  const auto dir = meta_path.parent_path();
  auto read_lines = [](const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw ConfigError("cannot open " + p.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      for (std::string x; std::getline(ss, x, ',');) fields.push_back(x);
      rows.push_back(std::move(fields));
    }
    return rows;
  };
  for (const auto& row : read_lines(dir / (stem + ".csv"))) {
    if (row.size() != 3) throw ConfigError(stem + ".csv: malformed row");
    const std::size_t r = std::stoul(row[0]) - 1;
    const std::size_t l = std::stoul(row[1]);
    if (rec.accuracy.size() <= r) rec.accuracy.resize(r + 1);
    if (rec.accuracy[r].size() <= l) rec.accuracy[r].resize(l + 1);
    rec.accuracy[r][l] = std::stod(row[2]);
  }
  for (const auto& row : read_lines(dir / (stem + "_global.csv"))) {
    if (row.size() != 2) throw ConfigError(stem + "_global.csv: malformed row");
    rec.global_accuracy.push_back(std::stod(row[1]));
  }
  return rec;
}

struct SuiteResult {
  std::map<std::string, std::vector<RunRecord>> records;  // config hash -> records in seed order
  std::map<std::string, MetricReport> reports;
  std::map<std::string, std::string> names;  // config hash -> variant name
};

/// Runs every (variant, seed) pair on `jobs` worker threads and writes one
/// record per pair plus one summary per variant into `out_dir`.
inline SuiteResult run_suite(const ExperimentSuite& suite, const std::filesystem::path& out_dir,
                             std::size_t jobs = 1) {
  validate_suite(suite);
  std::filesystem::create_directories(out_dir);
  struct Task {
    std::size_t variant;
    std::size_t seed_index;
  };
  std::vector<Task> tasks;
  for (std::size_t v = 0; v < suite.variants.size(); ++v) {
    for (std::size_t s = 0; s < suite.seeds.size(); ++s) tasks.push_back({v, s});
  }
  std::vector<std::string> hashes;
  for (const auto& v : suite.variants) {
    hashes.push_back(config_hash(v));
    if (std::count(hashes.begin(), hashes.end(), hashes.back()) > 1) {
      throw ConfigError("variant '" + v.name + "' resolves to the same configuration as an earlier variant");
    }
  }

  std::vector<RunRecord> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      try {
        const RunSpec& spec = suite.variants[tasks[t].variant];
        ExperimentConfig cfg = spec.experiment;
        cfg.seed = suite.seeds[tasks[t].seed_index];
        RunRecord rec = run_experiment(cfg, load_dataset(spec.data, cfg.seed));
        rec.config_hash = hashes[tasks[t].variant];
        write_record(out_dir, spec, rec);
        results[t] = std::move(rec);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next = tasks.size();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);

  SuiteResult out;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& h = hashes[tasks[t].variant];
    out.records[h].push_back(std::move(results[t]));
    out.names[h] = suite.variants[tasks[t].variant].name;
  }
  for (const auto& [h, recs] : out.records) {
    MetricReport rep = report(recs);
    write_report(out_dir, h + "_summary", rep, {{"config_hash", h}, {"name", out.names[h]}});
    out.reports[h] = std::move(rep);
  }
  return out;
}

}  // namespace sflsim

namespace sflsim {

/// Audit documents for one run: the label statistics each client reports,
/// the per-round processing order and, for head-based protocols, the grouping.
struct RunInspection {
  json partition;
  json schedules;
  std::optional<json> assignment;
};

inline json assignment_json(const GroupAssignment& a, const GroupScores& scores,
                            const std::optional<GroupAssignment>& exact = std::nullopt) {
  json j;
  json groups = json::object();
  for (ClientId c = 0; c < a.group_of.size(); ++c) groups[std::to_string(c)] = a.group_of[c];
  j["group_of"] = groups;
  j["groups"] = a.group_count;
  j["objective"] = objective_value(a, scores);
  if (exact) {
    const double best = objective_value(*exact, scores);
    j["exact_objective"] = best;
    j["gap"] = best - objective_value(a, scores);
  }
  return j;
}

inline RunInspection inspect_run(const RunSpec& spec, std::uint64_t seed) {
  ExperimentConfig cfg = spec.experiment;
  cfg.seed = seed;
  const Dataset data = load_dataset(spec.data, seed);
  const PreparedRun p = prepare_run(cfg, data);
  RunInspection out;
  out.partition = partition_report(p.shards);
  out.schedules = json::array();
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const auto s = round_schedule(p, r, seed);
    json row = {{"round", r + 1}, {"order", s.order}};
    if (!s.position_of_label.empty()) {
      json pos = json::object();
      for (const auto& [label, k] : s.position_of_label) pos[std::to_string(label)] = k;
      row["position_of_label"] = pos;
    }
    out.schedules.push_back(std::move(row));
  }
  if (p.groups) {
    const std::size_t g = p.groups->group_count;
    GroupScores scores;
    if (cfg.hydra->label_to_group) {
      scores = superclass_scores(p.shards, *cfg.hydra->label_to_group, g);
    } else {
      scores = group_scores(p.shards, std::vector<Label>(p.policy.label_order.begin(),
                                                         p.policy.label_order.begin() + static_cast<std::ptrdiff_t>(g)));
    }
    std::optional<GroupAssignment> exact;
    std::size_t space = 1;
    for (std::size_t c = 0; c < scores.size() && space <= kMaxExactAssignments; ++c) space *= g;
    if (space <= kMaxExactAssignments) exact = exact_assignment(scores, g);
    out.assignment = assignment_json(*p.groups, scores, exact);
  }
  return out;
}

}  // namespace sflsim

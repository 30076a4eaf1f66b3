// sflsim command-line driver.
//
//   sflsim run <suite.json> --out <dir> [--jobs N]
//   sflsim oracle grad-check|group-exact|metric-check [options]
//   sflsim metrics "<dir>/*.record.json" --out <report.json>
//   sflsim inspect <suite.json> --seed S --out <dir> [--variant NAME]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or numeric error,
// 3 oracle failure.

#include <glob.h>

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "sflsim/harness.hpp"
#include "sflsim/oracles.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitOracleFail = 3;

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  return out;
}

int cmd_grad_check(std::uint64_t seed, std::size_t nets) {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  for (std::size_t k = 0; k < nets; ++k) {
    const auto r = sflsim::oracle::grad_check_random_net(sflsim::splitmix64(seed + k));
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
    skipped += r.skipped_kinks;
  }
  const bool pass = worst < 1e-4 && checked > 0;
  std::printf("grad-check: %zu nets, %zu components (%zu skipped at ReLU kinks), max rel err %.3e -> %s\n", nets,
              checked, skipped, worst, pass ? "PASS" : "FAIL");
  return pass ? 0 : kExitOracleFail;
}

int cmd_group_exact(std::uint64_t seed, std::size_t clients, std::size_t groups, std::size_t instances) {
  sflsim::Rng rng(seed);
  bool pass = true;
  double worst_gap = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto scores = sflsim::oracle::random_scores(clients, groups, rng);
    const auto cmp = sflsim::oracle::compare_grouping(scores, groups);
    std::printf("instance %zu: greedy %.6g, optimal %.6g, gap %.6g\n", i, cmp.greedy, cmp.optimal,
                cmp.optimal - cmp.greedy);
    worst_gap = std::max(worst_gap, cmp.optimal - cmp.greedy);
    pass &= cmp.optimal >= cmp.greedy;
  }
  std::printf("group-exact: C=%zu G=%zu, %zu instances, worst gap %.6g -> %s\n", clients, groups, instances,
              worst_gap, pass ? "PASS" : "FAIL");
  return pass ? 0 : kExitOracleFail;
}

int cmd_metric_check(std::uint64_t seed, std::size_t count) {
  sflsim::Rng rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t R = 2 + rng.below(20);
    const std::size_t L = 1 + rng.below(12);
    sflsim::Matrix a(R, std::vector<double>(L));
    for (auto& row : a) {
      for (double& v : row) v = rng.uniform();
    }
    worst = std::max(worst, std::abs(sflsim::backward_transfer(a) - sflsim::oracle::backward_transfer_brute(a)));
    for (const auto& row : a) {
      worst = std::max(worst, std::abs(sflsim::performance_gap(row) - sflsim::oracle::performance_gap_brute(row)));
    }
  }
  const bool pass = worst <= 1e-15;
  std::printf("metric-check: %zu matrices, max abs err %.3e -> %s\n", count, worst, pass ? "PASS" : "FAIL");
  return pass ? 0 : kExitOracleFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split federated learning forgetting simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run an experiment suite");
  std::string suite_file;
  std::string out_dir;
  std::size_t jobs = 1;
  run->add_option("suite", suite_file, "Suite JSON file")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  auto* oracle = app.add_subcommand("oracle", "Brute-force self checks");
  oracle->require_subcommand(1);
  std::uint64_t oracle_seed = 1;
  oracle->add_option("--seed", oracle_seed, "Seed");
  std::size_t nets = 20;
  auto* grad = oracle->add_subcommand("grad-check", "Finite-difference gradient check on random nets");
  grad->add_option("--nets", nets, "Number of random nets");
  std::size_t clients = 6;
  std::size_t groups = 2;
  std::size_t instances = 1;
  auto* group = oracle->add_subcommand("group-exact", "Greedy grouping vs exhaustive optimum");
  group->add_option("--clients", clients, "Clients C");
  group->add_option("--groups", groups, "Groups G");
  group->add_option("--instances", instances, "Random instances");
  std::size_t matrices = 1000;
  auto* metric = oracle->add_subcommand("metric-check", "Metric implementations vs double-loop formulas");
  metric->add_option("--count", matrices, "Random accuracy matrices");

  auto* metrics = app.add_subcommand("metrics", "Compute a metric report from saved records");
  std::string records_glob;
  std::string report_out;
  metrics->add_option("records", records_glob, "Glob of *.record.json files")->required();
  metrics->add_option("--out", report_out, "Report JSON path")->required();

  auto* inspect = app.add_subcommand("inspect", "Dump partition, schedules and grouping of one run");
  std::string inspect_suite;
  std::string inspect_out;
  std::string variant;
  std::uint64_t inspect_seed = 0;
  inspect->add_option("suite", inspect_suite, "Suite JSON file")->required();
  inspect->add_option("--out", inspect_out, "Output directory")->required();
  inspect->add_option("--seed", inspect_seed, "Run seed");
  inspect->add_option("--variant", variant, "Variant name (default: first)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      const auto suite = sflsim::load_suite(suite_file);
      const auto result = sflsim::run_suite(suite, out_dir, jobs);
      for (const auto& v : suite.variants) {
        const auto hash = sflsim::config_hash(v);
        const auto& rep = result.reports.at(hash);
        std::printf("%s (%s): runs=%zu acc=%.4f pg=%.4f bw=%.4f\n", v.name.c_str(), hash.c_str(), rep.runs,
                    rep.reported_acc, rep.reported_pg, rep.backward_transfer);
      }
    } else if (*oracle) {
      if (*grad) return cmd_grad_check(oracle_seed, nets);
      if (*group) return cmd_group_exact(oracle_seed, clients, groups, instances);
      return cmd_metric_check(oracle_seed, matrices);
    } else if (*metrics) {
      const auto files = expand_glob(records_glob);
      if (files.empty()) throw sflsim::ConfigError("no records match " + records_glob);
      std::vector<sflsim::RunRecord> records;
      for (const auto& f : files) records.push_back(sflsim::read_record(f));
      const auto rep = sflsim::report(records);
      std::filesystem::path out(report_out);
      const auto dir = out.has_parent_path() ? out.parent_path() : std::filesystem::path(".");
      std::filesystem::create_directories(dir);
      sflsim::write_report(dir, out.stem().string(), rep);
      std::printf("runs=%zu acc=%.4f pg=%.4f bw=%.4f\n", rep.runs, rep.reported_acc, rep.reported_pg,
                  rep.backward_transfer);
    } else if (*inspect) {
      const auto suite = sflsim::load_suite(inspect_suite);
      const sflsim::RunSpec* spec = &suite.variants.front();
      if (!variant.empty()) {
        spec = nullptr;
        for (const auto& v : suite.variants) {
          if (v.name == variant) spec = &v;
        }
        if (!spec) throw sflsim::ConfigError("no variant named '" + variant + "'");
      }
      const auto ins = sflsim::inspect_run(*spec, inspect_seed);
      std::filesystem::create_directories(inspect_out);
      const std::filesystem::path dir(inspect_out);
      sflsim::write_file_atomic(dir / "partition.json", ins.partition.dump(2) + "\n");
      sflsim::write_file_atomic(dir / "schedule.json", ins.schedules.dump(2) + "\n");
      if (ins.assignment) sflsim::write_file_atomic(dir / "assignment.json", ins.assignment->dump(2) + "\n");
    }
  } catch (const sflsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}

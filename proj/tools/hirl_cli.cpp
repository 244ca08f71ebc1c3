// Command-line front end: run, sweep, stats, validate-config, scenario-info.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure, 4 I/O.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "hirl/config.hpp"
#include "hirl/harness.hpp"
#include "hirl/stats.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitIo = 4;

struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::uint64_t> seeds;
  std::string out;
  int episodes = -1;
  int eval_episodes = -1;
  int jobs = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("-c,--config", o.config, "INI or JSON experiment file");
  cmd->add_option("--set", o.sets, "Override a key, section.key=value (repeatable)");
  cmd->add_option("--seed", o.seeds, "Seed list (overrides experiment.seeds)")->delimiter(',');
  cmd->add_option("--out", o.out, "Output directory (default $HIRL_OUT_DIR or experiment.output_dir)");
  cmd->add_option("--episodes", o.episodes, "Training episodes per seed");
  cmd->add_option("--eval-episodes", o.eval_episodes, "Evaluation episodes per seed");
  cmd->add_option("--jobs", o.jobs, "Worker threads");
}

hirl::ExperimentConfig resolve(const CommonOpts& o) {
  hirl::ExperimentConfig cfg = o.config.empty() ? hirl::ExperimentConfig{} : hirl::load_config(o.config);
  // Output directory precedence: --out, then $HIRL_OUT_DIR, then the file.
  if (const char* env = std::getenv("HIRL_OUT_DIR"); env && *env) cfg.output_dir = env;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw hirl::ConfigError("--set expects section.key=value, got '" + s + "'");
    hirl::set_option(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.episodes >= 0) cfg.episodes = o.episodes;
  if (o.eval_episodes > 0) cfg.eval_episodes = o.eval_episodes;
  if (o.jobs > 0) cfg.jobs = o.jobs;
  hirl::validate(cfg);
  return cfg;
}

int cmd_run(const CommonOpts& o) {
  const auto cfg = resolve(o);
  const auto cells = hirl::matrix_cells(cfg);
  std::cerr << "running " << cells.size() << " cells on " << cfg.jobs << " thread(s)\n";
  std::size_t done = 0;
  const auto results = hirl::run_cells(cfg, cells, cfg.jobs, [&](const hirl::CellResult& r) {
    ++done;
    std::cerr << "[" << done << "/" << cells.size() << "] " << hirl::csv_stem(r.cell) << " seed " << r.cell.seed
              << " (train " << r.train_seconds << " s)\n";
  });
  for (const auto& p : hirl::write_results(cfg.output_dir, results)) std::cout << p.string() << "\n";
  hirl::write_atomic(std::filesystem::path(cfg.output_dir) / "config.ini", hirl::serialize_config(cfg));
  const auto bands = hirl::sli_bands(results, cfg.regimes);
  for (const auto& b : bands)
    std::cout << "sli " << b.regime << " [" << hirl::format_double(b.lo) << ", " << hirl::format_double(b.hi)
              << "]\n";
  return 0;
}

int cmd_sweep(const CommonOpts& o) {
  const auto cfg = resolve(o);
  const auto res = hirl::run_sweep(cfg, cfg.jobs, [](const hirl::SweepPoint& p, const hirl::CellResult& r) {
    std::cerr << "lambda " << p.lambda << " gamma_fail " << p.gamma_fail << " seed " << r.cell.seed << " done\n";
  });
  std::cout << hirl::write_sweep(cfg.output_dir, res).string() << "\n";
  const auto& b = res.grid[res.best];
  std::cout << "best lambda=" << hirl::format_double(b.lambda) << " gamma_fail=" << hirl::format_double(b.gamma_fail)
            << " completion=" << hirl::format_double(b.completion_rate) << "\n";
  std::cout << "schedules monotone: " << (res.schedules_monotone ? "yes" : "no") << "\n";
  return 0;
}

int cmd_stats(const std::string& a_path, const std::string& b_path, const std::string& metric) {
  const auto a = hirl::per_seed_means(hirl::read_csv(a_path), metric);
  const auto b = hirl::per_seed_means(hirl::read_csv(b_path), metric);
  std::vector<double> xa, xb;
  for (const auto& [seed, v] : a) {
    auto it = b.find(seed);
    if (it == b.end()) continue;
    xa.push_back(v);
    xb.push_back(it->second);
  }
  if (xa.size() < 2) throw std::runtime_error("fewer than two common seeds between the two files");
  const auto ca = hirl::stats::ci95(xa);
  const auto cb = hirl::stats::ci95(xb);
  const auto t = hirl::stats::paired_t(xa, xb);
  std::cout << "metric " << metric << " over " << xa.size() << " paired seeds\n";
  std::cout << "A mean " << ca.mean << " +- " << ca.half_width << "\n";
  std::cout << "B mean " << cb.mean << " +- " << cb.half_width << "\n";
  std::cout << "A - B " << t.mean_diff << "  t " << t.t << "  p " << t.p << (t.degenerate ? " (zero variance)" : "")
            << "\n";
  return 0;
}

int cmd_scenario_info(const CommonOpts& o) {
  const auto cfg = resolve(o);
  for (auto seed : cfg.seeds) {
    hirl::Rng rng = hirl::make_rng({seed, hirl::tag(hirl::Stream::Topology)});
    const auto topo = hirl::build_topology(cfg.scenario.topology, rng);
    std::cout << "seed " << seed << "\n";
    for (const auto& s : topo.servers)
      std::cout << "  server " << s.id << " cpu " << s.cpu_f_hz / 1e9 << " GHz, mem " << s.mem_bytes / hirl::kGB
                << " GB, gpu " << s.gpu.name << "\n";
    for (const auto& d : topo.devices) {
      std::cout << "  device " << d.id << " cpu " << d.cpu_f_max_hz / 1e9 << " GHz, p_max " << d.p_max_w
                << " W, gpu " << d.gpu.name << ", gamma";
      for (double g : d.pathloss_gamma) std::cout << " " << g;
      std::cout << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical power control and task allocation for mobile-edge computing"};
  app.require_subcommand(1);

  CommonOpts run_o, sweep_o, info_o, val_o;
  auto* run = app.add_subcommand("run", "Train and evaluate the configured matrix, write CSVs");
  add_common(run, run_o);
  auto* sweep = app.add_subcommand("sweep", "lambda x gamma_fail sensitivity grid");
  add_common(sweep, sweep_o);
  auto* info = app.add_subcommand("scenario-info", "Print the topology drawn for each seed");
  add_common(info, info_o);
  auto* val = app.add_subcommand("validate-config", "Check a config and print it normalized");
  add_common(val, val_o);

  std::string a_path, b_path, metric = "energy_j";
  auto* st = app.add_subcommand("stats", "Paired t-test between two episode CSVs");
  st->add_option("a", a_path, "First CSV")->required();
  st->add_option("b", b_path, "Second CSV")->required();
  st->add_option("--metric", metric, "Column to compare");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_o);
    if (*sweep) return cmd_sweep(sweep_o);
    if (*info) return cmd_scenario_info(info_o);
    if (*val) {
      std::cout << hirl::serialize_config(resolve(val_o));
      return 0;
    }
    if (*st) return cmd_stats(a_path, b_path, metric);
  } catch (const hirl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const hirl::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

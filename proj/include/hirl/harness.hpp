#pragma once

// Experiment runner: trains and evaluates (algorithm, ablation, regime, seed)
// cells, writes per-episode CSVs plus a summary, and runs the lambda x
// gamma_fail sensitivity sweep.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hirl/config.hpp"
#include "hirl/coordinator.hpp"
#include "hirl/stats.hpp"

namespace hirl {

inline constexpr int kCsvSchemaVersion = 1;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Cell {
  PolicyKind algorithm = PolicyKind::Hirl;
  Ablations ablations;
  std::string regime;
  int rate = 8;
  std::uint64_t seed = 1;
};

struct CellResult {
  Cell cell;
  std::vector<EpisodeMetrics> eval;
  double train_seconds = 0.0;
  int train_mask_violations = 0;
};

// File stem shared by every cell of one (algorithm, ablation, regime).
inline std::string variant_name(PolicyKind k, const Ablations& a) {
  std::string s = to_string(k);
  if (a.any()) s += "_" + a.name();
  return s;
}

inline std::string csv_stem(const Cell& c) { return variant_name(c.algorithm, c.ablations) + "_" + c.regime; }

// Trains for cfg.episodes (learning algorithms only), then evaluates
// cfg.eval_episodes with exploration and learning disabled. Evaluation
// episodes use indices after the training block, so every algorithm sees
// the same evaluation workloads for a given seed.
inline CellResult run_cell(const ExperimentConfig& cfg, const Cell& cell) {
  CellResult res;
  res.cell = cell;
  Simulation sim(cfg.scenario, cfg.learning, RunSpec{cell.algorithm, cell.ablations, cell.rate, cell.seed});
  const auto t0 = std::chrono::steady_clock::now();
  if (sim.uses_ddqn() || sim.uses_td3()) {
    for (int e = 0; e < cfg.episodes; ++e) res.train_mask_violations += sim.run_episode(e, true).mask_violations;
  }
  res.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (int e = 0; e < cfg.eval_episodes; ++e) res.eval.push_back(sim.run_episode(cfg.episodes + e, false));
  return res;
}

// Every cell of the configured matrix, in the order results are written.
inline std::vector<Cell> matrix_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  for (auto k : cfg.algorithms)
    for (const auto& a : cfg.ablations)
      for (std::size_t r = 0; r < cfg.rates.size(); ++r)
        for (auto seed : cfg.seeds) cells.push_back(Cell{k, a, cfg.regimes[r], cfg.rates[r], seed});
  return cells;
}

// Runs cells on up to `jobs` threads. Results come back in input order, so
// output does not depend on scheduling.
template <typename Progress>
std::vector<CellResult> run_cells(const ExperimentConfig& cfg, const std::vector<Cell>& cells, int jobs,
                                  Progress&& progress) {
  std::vector<CellResult> out(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  std::mutex progress_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        out[i] = run_cell(cfg, cells[i]);
        std::lock_guard lock(progress_mu);
        progress(out[i]);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
        next = cells.size();
      }
    }
  };
  const int n = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(1, cells.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

inline std::vector<CellResult> run_cells(const ExperimentConfig& cfg, const std::vector<Cell>& cells, int jobs) {
  return run_cells(cfg, cells, jobs, [](const CellResult&) {});
}

// ---- CSV ------------------------------------------------------------------

inline std::string csv_number(double v) { return format_double(v); }

inline const std::vector<std::string>& episode_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c{"schema_version", "algorithm", "ablation", "regime", "rate", "seed",
                               "episode", "generated", "completed", "failed", "completion_rate",
                               "cumulative_latency_s", "completed_latency_s", "mean_latency_s",
                               "energy_j", "device_energy_j", "server_energy_j", "mean_load",
                               "sli_pct", "slots", "offloaded", "risk_flags", "mask_violations"};
    for (int k = 0; k < kTaskKinds; ++k) {
      const std::string p = to_string(static_cast<TaskKind>(k));
      for (const char* s : {"_generated", "_completed", "_latency_s", "_energy_j"}) c.push_back(p + s);
    }
    return c;
  }();
  return cols;
}

inline double mean_latency(const EpisodeMetrics& m) {
  return m.generated > 0 ? m.cumulative_latency_s / m.generated : 0.0;
}

inline std::string episode_row(const Cell& c, const EpisodeMetrics& m) {
  std::vector<std::string> v{std::to_string(kCsvSchemaVersion),
                             to_string(c.algorithm),
                             c.ablations.name(),
                             c.regime,
                             std::to_string(c.rate),
                             std::to_string(c.seed),
                             std::to_string(m.episode),
                             std::to_string(m.generated),
                             std::to_string(m.completed),
                             std::to_string(m.failed),
                             csv_number(m.completion_rate),
                             csv_number(m.cumulative_latency_s),
                             csv_number(m.completed_latency_s),
                             csv_number(mean_latency(m)),
                             csv_number(m.energy_j),
                             csv_number(m.device_energy_j),
                             csv_number(m.server_energy_j),
                             csv_number(m.mean_load),
                             csv_number(100.0 * m.mean_load),
                             std::to_string(m.slots),
                             std::to_string(m.offloaded),
                             std::to_string(m.risk_flags),
                             std::to_string(m.mask_violations)};
  for (const auto& k : m.kinds) {
    v.push_back(std::to_string(k.generated));
    v.push_back(std::to_string(k.completed));
    v.push_back(csv_number(k.latency_s));
    v.push_back(csv_number(k.energy_j));
  }
  std::string line;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) line += ',';
    line += v[i];
  }
  return line;
}

// Writes to `path.partial` and renames on success; a failed write leaves
// only the .partial file behind.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  const auto tmp = std::filesystem::path(path.string() + ".partial");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

inline std::string join_header(const std::vector<std::string>& cols) {
  std::string h;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) h += ',';
    h += cols[i];
  }
  return h + "\n";
}

// Per-seed mean of one metric over a cell's evaluation episodes.
template <typename Get>
double seed_mean(const CellResult& r, Get&& get) {
  std::vector<double> x;
  for (const auto& m : r.eval) x.push_back(get(m));
  return stats::mean(x);
}

struct SummaryMetric {
  const char* name;
  double (*get)(const EpisodeMetrics&);
};

inline const std::vector<SummaryMetric>& summary_metrics() {
  static const std::vector<SummaryMetric> m{
      {"completion_rate", [](const EpisodeMetrics& e) { return e.completion_rate; }},
      {"cumulative_latency_s", [](const EpisodeMetrics& e) { return e.cumulative_latency_s; }},
      {"mean_latency_s", [](const EpisodeMetrics& e) { return mean_latency(e); }},
      {"energy_j", [](const EpisodeMetrics& e) { return e.energy_j; }},
      {"device_energy_j", [](const EpisodeMetrics& e) { return e.device_energy_j; }},
      {"server_energy_j", [](const EpisodeMetrics& e) { return e.server_energy_j; }},
      {"mean_load", [](const EpisodeMetrics& e) { return e.mean_load; }},
      {"sli_pct", [](const EpisodeMetrics& e) { return 100.0 * e.mean_load; }},
  };
  return m;
}

// Groups results by CSV stem, keeping first-seen order.
inline std::vector<std::pair<std::string, std::vector<const CellResult*>>> group_results(
    const std::vector<CellResult>& results) {
  std::vector<std::pair<std::string, std::vector<const CellResult*>>> groups;
  for (const auto& r : results) {
    const std::string stem = csv_stem(r.cell);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == stem; });
    if (it == groups.end()) {
      groups.push_back({stem, {}});
      it = std::prev(groups.end());
    }
    it->second.push_back(&r);
  }
  return groups;
}

// One CSV per (algorithm[-ablation], regime) with a row per (seed, episode),
// and summary.csv with mean, std and 95% CI across per-seed means.
inline std::vector<std::filesystem::path> write_results(const std::filesystem::path& dir,
                                                        const std::vector<CellResult>& results) {
  std::vector<std::filesystem::path> written;
  std::ostringstream summary;
  summary << join_header({"schema_version", "algorithm", "ablation", "regime", "rate", "metric", "n", "mean",
                          "std", "ci95_low", "ci95_high"});
  for (const auto& [stem, cells] : group_results(results)) {
    std::string body = join_header(episode_columns());
    for (const auto* r : cells)
      for (const auto& m : r->eval) body += episode_row(r->cell, m) + "\n";
    const auto path = dir / (stem + ".csv");
    write_atomic(path, body);
    written.push_back(path);

    const Cell& c = cells.front()->cell;
    for (const auto& metric : summary_metrics()) {
      std::vector<double> per_seed;
      for (const auto* r : cells) per_seed.push_back(seed_mean(*r, metric.get));
      const double mu = stats::mean(per_seed);
      const double sd = stats::stddev(per_seed);
      double lo = mu, hi = mu;
      if (per_seed.size() >= 2) {
        const auto ci = stats::ci95(per_seed);
        lo = mu - ci.half_width;
        hi = mu + ci.half_width;
      }
      summary << kCsvSchemaVersion << ',' << to_string(c.algorithm) << ',' << c.ablations.name() << ','
              << c.regime << ',' << c.rate << ',' << metric.name << ',' << per_seed.size() << ','
              << csv_number(mu) << ',' << csv_number(sd) << ',' << csv_number(lo) << ',' << csv_number(hi)
              << '\n';
    }
  }
  const auto spath = dir / "summary.csv";
  write_atomic(spath, summary.str());
  written.push_back(spath);
  return written;
}

// ---- Reading back ---------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::invalid_argument("no column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  CsvTable t;
  std::string line;
  auto split_line = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(l);
    while (std::getline(is, cur, ',')) out.push_back(cur);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
  t.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_line(line);
    if (row.size() != t.header.size())
      throw IoError("'" + path.string() + "': row has " + std::to_string(row.size()) + " fields, expected " +
                    std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// Per-seed means of `metric` from an episode CSV, ordered by seed.
inline std::map<std::uint64_t, double> per_seed_means(const CsvTable& t, const std::string& metric) {
  const auto cs = t.column("seed");
  const auto cm = t.column(metric);
  std::map<std::uint64_t, std::pair<double, int>> acc;
  for (const auto& r : t.rows) {
    auto& a = acc[std::stoull(r[cs])];
    a.first += std::stod(r[cm]);
    a.second += 1;
  }
  std::map<std::uint64_t, double> out;
  for (const auto& [s, a] : acc) out[s] = a.first / a.second;
  return out;
}

// ---- Sweep ----------------------------------------------------------------

struct SweepPoint {
  double lambda = 0.0;
  double gamma_fail = 0.0;
  double completion_rate = 0.0;
  double cumulative_latency_s = 0.0;
  double energy_j = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> grid;  // lambda-major
  std::size_t best = 0;
  // Exploration must fall and the DDQN step size rise as load goes 0 -> 1.
  bool schedules_monotone = false;
};

// Checks epsilon(L) strictly decreasing and eta(L) strictly increasing on
// a uniform grid over [0, 1].
inline bool schedules_monotone(const DdqnConfig& c, int points = 101) {
  double prev_eps = epsilon_for_load(c, 0.0);
  double prev_eta = learning_rate_for_load(c, 0.0);
  for (int i = 1; i < points; ++i) {
    const double L = static_cast<double>(i) / (points - 1);
    const double eps = epsilon_for_load(c, L);
    const double eta = learning_rate_for_load(c, L);
    if (!(eps < prev_eps) || !(eta > prev_eta)) return false;
    prev_eps = eps;
    prev_eta = eta;
  }
  return true;
}

// Best cell: highest completion, then lowest latency, then lowest energy.
inline std::size_t best_sweep_point(const std::vector<SweepPoint>& grid) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const auto& a = grid[i];
    const auto& b = grid[best];
    if (a.completion_rate != b.completion_rate) {
      if (a.completion_rate > b.completion_rate) best = i;
    } else if (a.cumulative_latency_s != b.cumulative_latency_s) {
      if (a.cumulative_latency_s < b.cumulative_latency_s) best = i;
    } else if (a.energy_j < b.energy_j) {
      best = i;
    }
  }
  return best;
}

template <typename Progress>
SweepResult run_sweep(const ExperimentConfig& base, int jobs, Progress&& progress) {
  SweepResult res;
  const int rate = base.rate_of(base.sweep.regime);
  std::vector<Cell> cells;
  std::vector<ExperimentConfig> cfgs;
  for (double lam : base.sweep.lambdas) {
    for (double gf : base.sweep.gamma_fails) {
      ExperimentConfig c = base;
      c.scenario.cost.lambda = lam;
      c.learning.ddqn.gamma_fail = gf;
      c.learning.td3.gamma_fail = gf;
      cfgs.push_back(c);
      res.grid.push_back(SweepPoint{lam, gf, 0, 0, 0});
    }
  }
  // Flatten (grid point, seed) so the pool stays busy across points.
  struct Job {
    std::size_t point;
    std::uint64_t seed;
  };
  std::vector<Job> job_list;
  for (std::size_t p = 0; p < cfgs.size(); ++p)
    for (auto s : base.seeds) job_list.push_back({p, s});
  std::vector<CellResult> out(job_list.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= job_list.size()) return;
      try {
        const auto& j = job_list[i];
        out[i] = run_cell(cfgs[j.point], Cell{PolicyKind::Hirl, Ablations{}, base.sweep.regime, rate, j.seed});
        std::lock_guard lock(mu);
        progress(res.grid[j.point], out[i]);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!err) err = std::current_exception();
        next = job_list.size();
      }
    }
  };
  const int n = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(1, job_list.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);

  for (std::size_t p = 0; p < res.grid.size(); ++p) {
    std::vector<double> comp, lat, en;
    for (std::size_t i = 0; i < job_list.size(); ++i) {
      if (job_list[i].point != p) continue;
      comp.push_back(seed_mean(out[i], [](const EpisodeMetrics& m) { return m.completion_rate; }));
      lat.push_back(seed_mean(out[i], [](const EpisodeMetrics& m) { return m.cumulative_latency_s; }));
      en.push_back(seed_mean(out[i], [](const EpisodeMetrics& m) { return m.energy_j; }));
    }
    res.grid[p].completion_rate = stats::mean(comp);
    res.grid[p].cumulative_latency_s = stats::mean(lat);
    res.grid[p].energy_j = stats::mean(en);
  }
  res.best = best_sweep_point(res.grid);
  res.schedules_monotone = schedules_monotone(base.learning.ddqn);
  return res;
}

inline SweepResult run_sweep(const ExperimentConfig& base, int jobs) {
  return run_sweep(base, jobs, [](const SweepPoint&, const CellResult&) {});
}

inline std::filesystem::path write_sweep(const std::filesystem::path& dir, const SweepResult& r) {
  std::ostringstream os;
  os << join_header({"schema_version", "lambda", "gamma_fail", "completion_rate", "cumulative_latency_s",
                     "energy_j", "best"});
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    const auto& p = r.grid[i];
    os << kCsvSchemaVersion << ',' << csv_number(p.lambda) << ',' << csv_number(p.gamma_fail) << ','
       << csv_number(p.completion_rate) << ',' << csv_number(p.cumulative_latency_s) << ','
       << csv_number(p.energy_j) << ',' << (i == r.best ? 1 : 0) << '\n';
  }
  const auto path = dir / "sweep.csv";
  write_atomic(path, os.str());
  return path;
}

// ---- Load regimes ----------------------------------------------------------

struct SliBand {
  std::string regime;
  double lo = 0.0;  // percent
  double hi = 0.0;
};

// Range over cells (seeds) of the evaluation-mean SLI, 100 * mean load, for
// each regime, ordered as the regimes are configured.
inline std::vector<SliBand> sli_bands(const std::vector<CellResult>& results,
                                      const std::vector<std::string>& regimes) {
  std::vector<SliBand> bands;
  for (const auto& name : regimes) {
    SliBand b{name, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& r : results) {
      if (r.cell.regime != name || r.eval.empty()) continue;
      double sum = 0.0;
      for (const auto& m : r.eval) sum += m.mean_load;
      const double sli = 100.0 * sum / static_cast<double>(r.eval.size());
      b.lo = std::min(b.lo, sli);
      b.hi = std::max(b.hi, sli);
    }
    if (b.lo <= b.hi) bands.push_back(b);
  }
  return bands;
}

inline bool bands_disjoint_ascending(const std::vector<SliBand>& bands) {
  for (std::size_t i = 1; i < bands.size(); ++i)
    if (!(bands[i].lo > bands[i - 1].hi)) return false;
  return !bands.empty();
}

}  // namespace hirl

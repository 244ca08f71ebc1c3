// Acceptance run: one PASS/FAIL line per headline criterion, exit status 1
// if any fails. Experiment cells use configs/desk.ini; CSVs land in
// $HIRL_ACCEPTANCE_OUT (default ./acceptance_results).
//
// HIRL_ACCEPTANCE_QUICK=1 shrinks the experiment budget for smoke checks;
// its verdicts are not the acceptance result.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hirl/config.hpp"
#include "hirl/harness.hpp"
#include "hirl/stats.hpp"
#include "support/fidelity.hpp"
#include "support/oracles.hpp"

namespace {

using namespace hirl;
using Clock = std::chrono::steady_clock;

// Tolerances.
constexpr double kFidelitySeconds = 10.0;
constexpr double kGradientRelTol = 1e-4;
constexpr int kGradientNets = 20;
constexpr double kGradientSeconds = 30.0;
constexpr double kToyMdpRelTol = 0.05;
constexpr int kToyMdpSteps = 5000;
constexpr double kCompletionLowMedium = 0.97;
constexpr double kCompletionHigh = 0.95;
constexpr double kTrainSecondsPerSeed = 30.0 * 60.0;
constexpr double kLatencyGain = 0.05;
constexpr double kEnergyGain = 0.15;
constexpr double kPValue = 0.05;
constexpr double kBaselineGap = 0.20;
constexpr double kNoFailureGap = 0.10;
constexpr double kEnergyPenalty = 0.20;
constexpr double kNoDeadlineBand = 0.01;

int failures = 0;

void verdict(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// Per-seed evaluation means of one metric, ordered by seed.
template <typename Get>
std::vector<double> per_seed(const std::vector<CellResult>& rs, Get&& get) {
  std::map<std::uint64_t, double> by_seed;
  for (const auto& r : rs) by_seed[r.cell.seed] = seed_mean(r, get);
  std::vector<double> out;
  for (const auto& [s, v] : by_seed) out.push_back(v);
  return out;
}

double completion(const EpisodeMetrics& m) { return m.completion_rate; }
double latency(const EpisodeMetrics& m) { return m.cumulative_latency_s; }
double energy(const EpisodeMetrics& m) { return m.energy_j; }

struct Group {
  PolicyKind alg;
  Ablations ab;
  std::string regime;
};

std::string key(PolicyKind alg, const Ablations& ab, const std::string& regime) {
  return variant_name(alg, ab) + "_" + regime;
}

Ablations only(bool Ablations::*flag) {
  Ablations a;
  a.*flag = true;
  return a;
}

void check_fidelity() {
  const auto t0 = Clock::now();
  const auto table = testing::equation_examples();
  int bad = 0;
  std::string first;
  for (const auto& e : table) {
    double got = 0;
    if (!testing::example_passes(e, &got)) {
      if (first.empty()) first = " first failure: " + e.name + " = " + fmt(got, 17);
      ++bad;
    }
  }
  const double secs = seconds_since(t0);
  verdict("equation_fidelity", bad == 0 && secs < kFidelitySeconds,
          std::to_string(table.size() - static_cast<std::size_t>(bad)) + "/" + std::to_string(table.size()) +
              " worked examples in " + fmt(secs) + " s (limit " + fmt(kFidelitySeconds) + " s)" + first);
}

void check_gradients() {
  const auto t0 = Clock::now();
  const auto rep = testing::gradient_oracle(kGradientNets, 2024);
  const double secs = seconds_since(t0);
  verdict("gradient_oracle", rep.max_rel_err < kGradientRelTol && secs < kGradientSeconds,
          std::to_string(kGradientNets) + " nets, " + std::to_string(rep.checked) +
              " partials, max relative error " + fmt(rep.max_rel_err, 3) + " (tol " + fmt(kGradientRelTol) +
              "), " + fmt(secs) + " s");
}

void check_targets() {
  const int dq = testing::double_q_mismatches(500, 31);
  const int tm = testing::twin_min_mismatches(500, 32);
  const Vec yd = ddqn_targets(testing::constant_net(2, {0.1, 0.2, 0.9}), testing::constant_net(2, {3.0, 2.0, 0.5}),
                              Mat::Zero(2, 1), Vec::Ones(1), Vec::Zero(1), 0.99);
  const Vec yt = td3_targets(testing::constant_net(3, {0.0, 0.0}), testing::constant_net(5, {1.0}),
                             testing::constant_net(5, {0.8}), Mat::Zero(3, 1), Vec::Zero(1), Vec::Zero(1), 0.99,
                             Mat::Zero(kPowerActionDim, 1), 0.5);
  const bool fixtures = yd(0) == 1.0 + 0.99 * 0.5 && yt(0) == 0.99 * 0.8;
  verdict("double_q_and_twin_min", dq == 0 && tm == 0 && fixtures,
          "brute-force mismatches ddqn " + std::to_string(dq) + "/8000, td3 " + std::to_string(tm) +
              "/8000; fixtures y=" + fmt(yd(0), 6) + " and y=" + fmt(yt(0), 6));
}

void check_toy_mdp() {
  double worst = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = testing::run_toy_mdp(seed, kToyMdpSteps);
    worst = std::max(worst, r.max_rel_err);
    if (seed == 1)
      detail = "seed 1 Q=(" + fmt(r.learned[0]) + ", " + fmt(r.learned[1]) + ") vs value iteration (" +
               fmt(r.optimal[0]) + ", " + fmt(r.optimal[1]) + ")";
  }
  verdict("toy_mdp_convergence", worst <= kToyMdpRelTol,
          "worst relative error over 5 seeds " + fmt(worst, 3) + " after " + std::to_string(kToyMdpSteps) +
              " steps (tol " + fmt(kToyMdpRelTol) + "); " + detail);
}

bool same_bytes(const std::filesystem::path& a, const std::filesystem::path& b) {
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const auto x = slurp(a);
  return !x.empty() && x == slurp(b);
}

// Two full runs of one reduced-length HiRL cell and one heuristic cell.
void check_determinism(const ExperimentConfig& desk, const std::filesystem::path& out) {
  ExperimentConfig c = desk;
  c.episodes = 10;
  c.eval_episodes = 5;
  const std::vector<Cell> cells{{PolicyKind::Hirl, {}, "medium", c.rate_of("medium"), 1},
                                {PolicyKind::Qpso, {}, "medium", c.rate_of("medium"), 1}};
  const auto a = out / "determinism_a", b = out / "determinism_b";
  write_results(a, run_cells(c, cells, 1));
  write_results(b, run_cells(c, cells, 1));
  bool ok = true;
  for (const auto* f : {"hirl_medium.csv", "qpso_medium.csv", "summary.csv"}) ok = ok && same_bytes(a / f, b / f);
  verdict("determinism", ok, "hirl and qpso medium cells, seed 1, rerun byte-identical: " + std::string(ok ? "yes" : "no"));
}

}  // namespace

int main() {
  const bool quick = std::getenv("HIRL_ACCEPTANCE_QUICK") != nullptr;
  const char* out_env = std::getenv("HIRL_ACCEPTANCE_OUT");
  const std::filesystem::path out = out_env && *out_env ? out_env : "acceptance_results";
  ExperimentConfig desk = load_config(std::string(HIRL_SOURCE_DIR) + "/configs/desk.ini");
  if (quick) {
    desk.seeds = {1, 2};
    desk.episodes = 20;
    desk.eval_episodes = 5;
    std::cout << "quick mode: reduced budget, verdicts are not the acceptance result" << std::endl;
  }
  validate(desk);
  std::cout << "desk scale: " << desk.scenario.topology.devices << " devices, " << desk.scenario.topology.servers
            << " servers, " << desk.episodes << " training + " << desk.eval_episodes << " evaluation episodes, "
            << desk.seeds.size() << " seeds" << std::endl;

  check_fidelity();
  check_gradients();
  check_targets();
  check_toy_mdp();
  check_determinism(desk, out);

  // Experiment matrix.
  const std::vector<Group> groups{
      {PolicyKind::Hirl, {}, "low"},
      {PolicyKind::Hirl, {}, "medium"},
      {PolicyKind::Hirl, {}, "high"},
      {PolicyKind::SingleDdqn, {}, "low"},
      {PolicyKind::Random, {}, "high"},
      {PolicyKind::RoundRobin, {}, "high"},
      {PolicyKind::Hirl, only(&Ablations::no_failure), "high"},
      {PolicyKind::Hirl, only(&Ablations::no_coord), "medium"},
      {PolicyKind::Hirl, only(&Ablations::no_gpu), "medium"},
      {PolicyKind::Hirl, only(&Ablations::no_deadline), "high"},
  };
  std::vector<Cell> cells;
  for (const auto& g : groups)
    for (auto seed : desk.seeds) cells.push_back(Cell{g.alg, g.ab, g.regime, desk.rate_of(g.regime), seed});
  const int jobs = std::max(1u, std::thread::hardware_concurrency());
  const auto t0 = Clock::now();
  std::size_t done = 0;
  const auto results = run_cells(desk, cells, jobs, [&](const CellResult& r) {
    ++done;
    std::cerr << "[" << done << "/" << cells.size() << "] " << csv_stem(r.cell) << " seed " << r.cell.seed
              << " train " << fmt(r.train_seconds) << " s" << std::endl;
  });
  std::cerr << "experiment cells took " << fmt(seconds_since(t0)) << " s" << std::endl;
  write_results(out, results);

  std::map<std::string, std::vector<CellResult>> by;
  for (const auto& r : results) by[csv_stem(r.cell)].push_back(r);
  auto get = [&](PolicyKind alg, const Ablations& ab, const std::string& regime) -> const std::vector<CellResult>& {
    return by.at(key(alg, ab, regime));
  };
  const Ablations none;

  // Masking safety over every HiRL run, training and evaluation.
  {
    long violations = 0, episodes = 0;
    for (const auto& r : results) {
      if (r.cell.algorithm != PolicyKind::Hirl || r.cell.ablations.no_gpu) continue;
      violations += r.train_mask_violations;
      for (const auto& m : r.eval) violations += m.mask_violations;
      episodes += desk.episodes + static_cast<long>(r.eval.size());
    }
    verdict("masking_safety", violations == 0,
            std::to_string(violations) + " infeasible dispatches with a feasible alternative over " +
                std::to_string(episodes) + " HiRL episodes (NoGPU excluded, it removes the mask by design)");
  }

  // Completion guarantee.
  {
    bool ok = true;
    std::string detail;
    double slowest = 0;
    for (const auto* regime : {"low", "medium", "high"}) {
      const auto& rs = get(PolicyKind::Hirl, none, regime);
      const double c = stats::mean(per_seed(rs, completion));
      const double need = std::string(regime) == "high" ? kCompletionHigh : kCompletionLowMedium;
      ok = ok && c >= need;
      for (const auto& r : rs) slowest = std::max(slowest, r.train_seconds);
      detail += std::string(detail.empty() ? "" : ", ") + regime + " " + fmt(c) + " (need " + fmt(need) + ")";
    }
    ok = ok && slowest <= kTrainSecondsPerSeed;
    verdict("completion_guarantee", ok, detail + "; slowest seed trained in " + fmt(slowest) + " s");
  }

  // Latency and energy against Single-DDQN at low load, paired over seeds.
  auto paired_gain = [&](const char* name, double (*metric)(const EpisodeMetrics&), double need) {
    const auto h = per_seed(get(PolicyKind::Hirl, none, "low"), metric);
    const auto s = per_seed(get(PolicyKind::SingleDdqn, none, "low"), metric);
    const double mh = stats::mean(h), ms = stats::mean(s);
    const double gain = ms > 0 ? (ms - mh) / ms : 0.0;
    const auto t = stats::paired_t(h, s);
    verdict(name, gain >= need && mh < ms && t.p < kPValue,
            "HiRL " + fmt(mh) + " vs Single-DDQN " + fmt(ms) + ", reduction " + fmt(100 * gain, 3) + "% (need " +
                fmt(100 * need) + "%), paired t " + fmt(t.t, 3) + " p " + fmt(t.p, 3) + " (need < " +
                fmt(kPValue) + ")");
  };
  paired_gain("latency_ordering", latency, kLatencyGain);
  paired_gain("energy_ordering", energy, kEnergyGain);

  // Baseline floor at high load.
  {
    const double h = stats::mean(per_seed(get(PolicyKind::Hirl, none, "high"), completion));
    const double rnd = stats::mean(per_seed(get(PolicyKind::Random, none, "high"), completion));
    const double rr = stats::mean(per_seed(get(PolicyKind::RoundRobin, none, "high"), completion));
    verdict("baseline_floor", h - rnd >= kBaselineGap && h - rr >= kBaselineGap,
            "high-load completion HiRL " + fmt(h) + ", Random " + fmt(rnd) + ", Round-Robin " + fmt(rr) +
                " (need gaps >= " + fmt(100 * kBaselineGap) + " points)");
  }

  // Ablation signatures.
  {
    const double hh = stats::mean(per_seed(get(PolicyKind::Hirl, none, "high"), completion));
    const double nf = stats::mean(per_seed(get(PolicyKind::Hirl, only(&Ablations::no_failure), "high"), completion));
    const double nd = stats::mean(per_seed(get(PolicyKind::Hirl, only(&Ablations::no_deadline), "high"), completion));
    const double em = stats::mean(per_seed(get(PolicyKind::Hirl, none, "medium"), energy));
    const double nc = stats::mean(per_seed(get(PolicyKind::Hirl, only(&Ablations::no_coord), "medium"), energy));
    const double ng = stats::mean(per_seed(get(PolicyKind::Hirl, only(&Ablations::no_gpu), "medium"), energy));
    const bool f_ok = hh - nf >= kNoFailureGap;
    const bool c_ok = nc >= (1 + kEnergyPenalty) * em;
    const bool g_ok = ng >= (1 + kEnergyPenalty) * em;
    const bool d_ok = std::abs(nd - hh) <= kNoDeadlineBand;
    verdict("ablation_signatures", f_ok && c_ok && g_ok && d_ok,
            std::string("NoFailure high completion ") + fmt(nf) + " vs " + fmt(hh) + (f_ok ? " ok" : " too close") +
                "; NoCoord medium energy " + fmt(nc) + " vs " + fmt(em) + (c_ok ? " ok" : " below +20%") +
                "; NoGPU medium energy " + fmt(ng) + (g_ok ? " ok" : " below +20%") +
                "; NoDeadline high completion " + fmt(nd) + (d_ok ? " within 1 point" : " outside 1 point"));
  }

  // Sensitivity sweep on a reduced budget: the criterion is the grid shape,
  // the reported best cell and the schedule monotonicity.
  {
    ExperimentConfig sw = desk;
    sw.seeds = {1};
    sw.episodes = quick ? 5 : 30;
    sw.eval_episodes = quick ? 2 : 10;
    const auto res = run_sweep(sw, jobs);
    write_sweep(out, res);
    bool mono = res.schedules_monotone;
    for (const auto& p : res.grid) {
      ExperimentConfig c = sw;
      c.learning.ddqn.gamma_fail = p.gamma_fail;
      mono = mono && schedules_monotone(c.learning.ddqn);
    }
    const auto& b = res.grid[res.best];
    verdict("sensitivity_sweep", res.grid.size() == 9 && mono,
            std::to_string(res.grid.size()) + " cells at " + sw.sweep.regime + " load, best lambda=" +
                fmt(b.lambda) + " gamma_fail=" + fmt(b.gamma_fail) + " completion " + fmt(b.completion_rate) +
                "; epsilon/eta schedules monotone: " + (mono ? "yes" : "no"));
  }

  // SLI calibration.
  {
    std::vector<CellResult> hirl;
    for (const auto& r : results)
      if (r.cell.algorithm == PolicyKind::Hirl && !r.cell.ablations.any()) hirl.push_back(r);
    const auto bands = sli_bands(hirl, {"low", "medium", "high"});
    std::string detail;
    for (const auto& b : bands)
      detail += (detail.empty() ? "" : ", ") + b.regime + " [" + fmt(b.lo, 3) + ", " + fmt(b.hi, 3) + "]%";
    verdict("sli_calibration", bands.size() == 3 && bands_disjoint_ascending(bands),
            detail + " (reference bands 10-30/30-60/60-90% are not gates at desk scale)");
  }

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}

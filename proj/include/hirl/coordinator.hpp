#pragma once

// Slot pipeline: power control, coordination (rates, normalized queues,
// load), per-task allocation, then one slot of queue service with reward
// routing and learning updates.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hirl/baselines.hpp"
#include "hirl/common.hpp"
#include "hirl/ddqn.hpp"
#include "hirl/perf_model.hpp"
#include "hirl/queueing.hpp"
#include "hirl/sim_env.hpp"
#include "hirl/td3.hpp"

namespace hirl {

struct Ablations {
  bool no_coord = false;
  bool no_gpu = false;
  bool no_deadline = false;
  bool no_failure = false;

  [[nodiscard]] bool any() const noexcept { return no_coord || no_gpu || no_deadline || no_failure; }

  [[nodiscard]] std::string name() const {
    std::string s;
    auto add = [&](bool on, const char* n) {
      if (!on) return;
      if (!s.empty()) s += '+';
      s += n;
    };
    add(no_coord, "nocoord");
    add(no_gpu, "nogpu");
    add(no_deadline, "nodeadline");
    add(no_failure, "nofailure");
    return s.empty() ? "none" : s;
  }
};

// Accepts "none", or '+'/','-separated flags.
inline Ablations parse_ablations(const std::string& text) {
  Ablations a;
  std::string token;
  auto flush = [&] {
    if (token.empty() || token == "none") {
    } else if (token == "nocoord") {
      a.no_coord = true;
    } else if (token == "nogpu") {
      a.no_gpu = true;
    } else if (token == "nodeadline") {
      a.no_deadline = true;
    } else if (token == "nofailure") {
      a.no_failure = true;
    } else {
      throw std::invalid_argument("unknown ablation '" + token + "'");
    }
    token.clear();
  };
  for (char c : text) {
    if (c == '+' || c == ',' || c == ' ') {
      flush();
    } else {
      token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  flush();
  return a;
}

struct ScenarioConfig {
  TopologyParams topology;
  WorkloadRanges workload;
  ChannelParams channel;
  MobilityBounds mobility;
  CostParams cost;
  LoadWeights weights;
  double theta_min = 0.05;
  int horizon = 200;
  // Listed with the load-metric settings but not part of the load formula;
  // kept so configurations that set it still validate.
  double load_sensitivity = 0.1;
};

struct LearningConfig {
  Td3Config td3;
  DdqnConfig ddqn;
  QpsoConfig qpso;
  bool temporal_state = true;
  bool alloc_bootstrap = false;
  bool pin_power = false;  // hold (f, p) at the caps even under hirl
};

struct RunSpec {
  PolicyKind algorithm = PolicyKind::Hirl;
  Ablations ablations;
  int rate = 8;
  std::uint64_t seed = 1;
};

struct DecisionRecord {
  std::uint64_t task_id = 0;
  int device = 0;
  int action = 0;
  bool explored = false;
  bool no_feasible = false;
  int risk = 0;
  bool mask_violation = false;
  std::vector<double> seen_rates;  // r^t entries of the allocation state
};

struct SlotRecord {
  int slot = 0;
  std::vector<double> f_hz;
  std::vector<double> p_w;
  std::vector<std::vector<double>> rates_bps;  // per device, per server, this slot
  std::vector<DecisionRecord> decisions;
  int arrivals = 0;
  int completed = 0;
  int failed = 0;
  int in_flight = 0;
  int generated_total = 0;
  int completed_total = 0;
  int failed_total = 0;
  double energy_j = 0.0;
  std::vector<double> device_energy_j;
  double server_energy_j = 0.0;
  std::array<double, kQueueDims> qhat{};  // system mean of normalized backlogs
  double load = 0.0;
};

struct KindStats {
  int generated = 0;
  int completed = 0;
  double latency_s = 0.0;
  double energy_j = 0.0;
};

struct EpisodeMetrics {
  int episode = 0;
  bool eval = false;
  int generated = 0;
  int completed = 0;
  int failed = 0;
  double completion_rate = 1.0;
  double cumulative_latency_s = 0.0;  // sum of D_tot over all tasks
  double completed_latency_s = 0.0;   // sum of D_tot over completed tasks
  double energy_j = 0.0;
  double device_energy_j = 0.0;
  double server_energy_j = 0.0;
  double mean_load = 0.0;
  int slots = 0;
  int risk_flags = 0;
  int mask_violations = 0;
  int offloaded = 0;
  std::array<KindStats, kTaskKinds> kinds{};
};

using SlotSink = std::function<void(const SlotRecord&)>;

// Scales for agent inputs. All state entries land in [0, 1].
struct StateScales {
  double f_max = 1.0;
  double p_max = 1.0;
  double gpu_clock = 1.0;
  double gpu_cores = 1.0;
  double gpu_bw = 1.0;
  double gpu_power = 1.0;
  double size_bits = 1.0;
  double cycles_per_bit = 1.0;
  double deadline_s = 1.0;
  double cores = 1.0;
  double mem_bytes = 1.0;
  double gpu_load = 1.0;
};

inline double scale_qhat(double q) { return std::clamp(q, 0.0, kNormalizedCeiling) / kNormalizedCeiling; }

// log10 gain mapped from [1e-12, 1e-3] onto [0, 1].
inline double scale_gain(double g) {
  if (g <= 0.0) return 0.0;
  return clamp01((std::log10(g) + 12.0) / 9.0);
}

// log10(1 + r) mapped from [0, 9] onto [0, 1].
inline double scale_rate(double r) { return clamp01(std::log10(1.0 + std::max(0.0, r)) / 9.0); }

inline int alloc_base_dim(int servers) { return 23 + 2 * servers; }

inline int alloc_state_dim(int servers, bool temporal) {
  return temporal ? 3 * alloc_base_dim(servers) : alloc_base_dim(servers);
}

class Simulation {
 public:
  Simulation(ScenarioConfig scenario, LearningConfig learning, RunSpec run)
      : sc_(std::move(scenario)), lc_(std::move(learning)), run_(run) {
    if (!sc_.cost.valid()) throw std::invalid_argument("invalid cost parameters");
    if (!sc_.weights.valid()) throw std::invalid_argument("load weights must be nonnegative and sum to 1");
    if (sc_.horizon < sc_.workload.generation_slots)
      throw std::invalid_argument("horizon must cover the generation window");
    Rng topo_rng = make_rng({run_.seed, tag(Stream::Topology)});
    topo_ = build_topology(sc_.topology, topo_rng);
    n_dev_ = static_cast<int>(topo_.devices.size());
    n_srv_ = static_cast<int>(topo_.servers.size());
    dev_.resize(static_cast<std::size_t>(n_dev_));
    srv_.resize(static_cast<std::size_t>(n_srv_));
    for (const auto& d : topo_.devices) {
      dev_gpu_flops_.push_back(effective_gpu_flops(d.gpu, sc_.cost.gpu_efficiency));
    }
    for (const auto& s : topo_.servers) {
      srv_gpu_flops_.push_back(effective_gpu_flops(s.gpu, sc_.cost.gpu_efficiency));
      sum_srv_hz_ += s.cpu_f_hz;
      sum_srv_flops_ += srv_gpu_flops_.back();
    }
    init_scales();
    if (run_.ablations.no_failure) {
      lc_.td3.replay_mode = ReplayMode::Uniform;
      lc_.ddqn.replay_mode = ReplayMode::Uniform;
    }
    if (uses_ddqn()) {
      ddqn_ = std::make_unique<DdqnAgent>(lc_.ddqn, alloc_state_dim(n_srv_, lc_.temporal_state), n_srv_ + 1,
                                          run_.seed);
    }
    if (uses_td3()) td3_ = std::make_unique<Td3Agent>(lc_.td3, run_.seed);
  }

  [[nodiscard]] const Topology& topology() const noexcept { return topo_; }
  [[nodiscard]] const RunSpec& run_spec() const noexcept { return run_; }
  [[nodiscard]] const ScenarioConfig& scenario() const noexcept { return sc_; }
  [[nodiscard]] const LearningConfig& learning() const noexcept { return lc_; }
  [[nodiscard]] DdqnAgent* ddqn() noexcept { return ddqn_.get(); }
  [[nodiscard]] Td3Agent* td3() noexcept { return td3_.get(); }
  [[nodiscard]] Diagnostics& diagnostics() noexcept { return diag_; }
  [[nodiscard]] int alloc_dim() const { return alloc_state_dim(n_srv_, lc_.temporal_state); }

  [[nodiscard]] bool uses_ddqn() const noexcept {
    return run_.algorithm == PolicyKind::Hirl || run_.algorithm == PolicyKind::SingleDdqn;
  }
  [[nodiscard]] bool uses_td3() const noexcept {
    return run_.algorithm == PolicyKind::Hirl && !lc_.pin_power;
  }

  // Runs one episode. `train` enables exploration and learning.
  EpisodeMetrics run_episode(int episode, bool train, const SlotSink& sink = {}) {
    reset_episode(episode);
    EpisodeMetrics m;
    m.episode = episode;
    m.eval = !train;
    double load_sum = 0.0;
    int t = 0;
    for (; t < sc_.horizon; ++t) {
      SlotRecord rec = run_slot(episode, t, train, m);
      load_sum += rec.load;
      if (sink) sink(rec);
      if (t + 1 >= sc_.workload.generation_slots && in_flight() == 0) {
        ++t;
        break;
      }
    }
    m.slots = t;
    // Anything still queued at the horizon is a failure.
    const double end_s = t * sc_.cost.slot_s;
    for (auto& d : dev_) {
      for (auto* q : {&d.lc, &d.tx, &d.lg}) {
        for (auto& job : *q) fail_task(job, std::max(end_s, job.task.created_s), m);
        q->clear();
      }
    }
    for (auto& s : srv_) {
      for (auto* q : {&s.sc, &s.sg}) {
        for (auto& job : *q) fail_task(job, std::max(end_s, job.task.created_s), m);
        q->clear();
      }
    }
    finish_episode_learning(train);
    m.generated = generated_;
    m.completion_rate = generated_ == 0 ? 1.0 : static_cast<double>(m.completed) / generated_;
    m.mean_load = m.slots > 0 ? load_sum / m.slots : 0.0;
    return m;
  }

 private:
  struct Snapshot {
    std::array<double, kQueueDims> qhat{};
    std::vector<double> rates;
    double f_hz = 0.0;
    double p_w = 0.0;
    double load = 0.0;
    UtilizationSnapshot util;
  };

  struct PendingPower {
    Vec state;
    Vec action;
    double reward = 0.0;
    int fail = 0;
  };

  struct PendingAlloc {
    Experience exp;
    bool outcome_known = false;
    bool waiting_next = false;
  };

  struct DeviceRt {
    std::vector<QueuedTask> lc, tx, lg;
    double f_hz = 0.0;
    double p_w = 0.0;
    std::vector<double> gain;
    std::vector<double> rate;
    Snapshot snap;       // this slot's coordination output
    Snapshot stale;      // previous slot's, used without coordination
    double busy_cpu_s = 0.0;
    double busy_gpu_s = 0.0;
    double tx_energy_j = 0.0;
    double gpu_energy_j = 0.0;
    std::vector<int> completed_b;
    int failed_in_slot = 0;
    std::optional<PendingPower> pending_power;
    Vec last_alloc_base;
    std::optional<std::size_t> last_decision;  // index into pending_alloc_
  };

  struct ServerRt {
    std::vector<QueuedTask> sc, sg;
    double busy_cpu_s = 0.0;
    double busy_gpu_s = 0.0;
    double gpu_energy_j = 0.0;
  };

  void init_scales() {
    for (const auto& d : topo_.devices) {
      scales_.f_max = std::max(scales_.f_max, d.cpu_f_max_hz);
      scales_.p_max = std::max(scales_.p_max, d.p_max_w);
    }
    auto gpu_max = [&](const GpuSpec& g) {
      scales_.gpu_clock = std::max(scales_.gpu_clock, g.clock_hz);
      scales_.gpu_cores = std::max(scales_.gpu_cores, g.cuda_cores);
      scales_.gpu_bw = std::max(scales_.gpu_bw, g.bandwidth_bytes_per_s);
      scales_.gpu_power = std::max(scales_.gpu_power, g.power_w);
    };
    for (const auto& d : topo_.devices) gpu_max(d.gpu);
    for (const auto& s : topo_.servers) gpu_max(s.gpu);
    const auto& w = sc_.workload;
    scales_.size_bits = 8.0 * std::max({w.cpu_size_bytes.hi, w.gpu_size_bytes.hi, w.io_size_bytes.hi});
    scales_.cycles_per_bit = std::max({w.cpu_cycles_per_bit.hi, w.gpu_cycles_per_bit.hi, w.io_cycles_per_bit.hi});
    scales_.deadline_s = std::max(w.compute_deadline_s.hi, w.io_deadline_s.hi);
    scales_.cores = std::max(1.0, w.gpu_cores.hi);
    scales_.mem_bytes = std::max(1.0, w.gpu_mem_bytes.hi);
    scales_.gpu_load = std::max(1.0, w.gpu_load_flops.hi);
  }

  void reset_episode(int episode) {
    episode_ = episode;
    Rng ep = make_rng({run_.seed, tag(Stream::Episode), static_cast<std::uint64_t>(episode)});
    for (auto& d : topo_.devices) {
      for (double& x : d.distance_m)
        x = uniform(ep, sc_.topology.initial_distance_m.lo, sc_.topology.initial_distance_m.hi);
    }
    baseline_rng_ = make_rng({run_.seed, tag(Stream::Baseline), static_cast<std::uint64_t>(episode)});
    rr_counter_ = 0;
    next_id_ = 0;
    generated_ = completed_ = failed_ = 0;
    pending_alloc_.clear();
    task_decision_.clear();
    for (std::size_t j = 0; j < dev_.size(); ++j) {
      auto& d = dev_[j];
      const auto& ds = topo_.devices[j];
      d = DeviceRt{};
      d.f_hz = ds.cpu_f_max_hz;
      d.p_w = ds.p_max_w;
      refresh_links(static_cast<int>(j));
      d.snap = coordinate(static_cast<int>(j));
      d.stale = d.snap;
    }
    for (auto& s : srv_) s = ServerRt{};
  }

  [[nodiscard]] int in_flight() const {
    return generated_ - completed_ - failed_;
  }

  void refresh_links(int j) {
    auto& d = dev_[static_cast<std::size_t>(j)];
    const auto& ds = topo_.devices[static_cast<std::size_t>(j)];
    d.gain.resize(static_cast<std::size_t>(n_srv_));
    d.rate.resize(static_cast<std::size_t>(n_srv_));
    for (int k = 0; k < n_srv_; ++k) {
      d.gain[static_cast<std::size_t>(k)] =
          channel_gain(sc_.channel, ds.distance_m[static_cast<std::size_t>(k)],
                       ds.pathloss_gamma[static_cast<std::size_t>(k)], &diag_);
      d.rate[static_cast<std::size_t>(k)] = transmission_rate(sc_.channel, d.p_w, d.gain[static_cast<std::size_t>(k)]);
    }
  }

  [[nodiscard]] double best_rate(const std::vector<double>& rates) const {
    double r = 0.0;
    for (double x : rates) r = std::max(r, x);
    return r;
  }

  [[nodiscard]] UtilizationSnapshot utilization(int j) const {
    const auto& d = dev_[static_cast<std::size_t>(j)];
    const double tau = sc_.cost.slot_s;
    UtilizationSnapshot u;
    u.u_cpu_local = clamp01(d.busy_cpu_s / tau);
    u.u_gpu_local = clamp01(d.busy_gpu_s / tau);
    if (n_srv_ > 0) {
      for (const auto& s : srv_) {
        u.u_cpu_server += clamp01(s.busy_cpu_s / tau) / n_srv_;
        u.u_gpu_server += clamp01(s.busy_gpu_s / tau) / n_srv_;
      }
    }
    return u;
  }

  // Normalized backlogs seen from device j at the current (f, p).
  [[nodiscard]] std::array<double, kQueueDims> normalized_queues(int j, const std::vector<double>& rates,
                                                                 double f_hz) const {
    const auto& d = dev_[static_cast<std::size_t>(j)];
    const double tau = sc_.cost.slot_s;
    std::array<double, kQueueDims> q{};
    q[0] = normalize_queue(backlog_of(d.lc), f_hz, tau, nullptr);
    q[1] = normalize_queue(backlog_of(d.tx), best_rate(rates), tau, nullptr);
    q[2] = normalize_queue(backlog_of(d.lg), dev_gpu_flops_[static_cast<std::size_t>(j)], tau, nullptr);
    double sc = 0.0, sg = 0.0;
    for (const auto& s : srv_) {
      sc += backlog_of(s.sc);
      sg += backlog_of(s.sg);
    }
    q[3] = normalize_queue(sc, sum_srv_hz_, tau, nullptr);
    q[4] = normalize_queue(sg, sum_srv_flops_, tau, nullptr);
    return q;
  }

  [[nodiscard]] Snapshot coordinate(int j) const {
    const auto& d = dev_[static_cast<std::size_t>(j)];
    Snapshot s;
    s.rates = d.rate;
    s.f_hz = d.f_hz;
    s.p_w = d.p_w;
    s.qhat = normalized_queues(j, d.rate, d.f_hz);
    s.util = utilization(j);
    s.load = load_metric(s.qhat, s.util, sc_.weights);
    return s;
  }

  // Power-tier state: backlogs relative to the device's capacities, best
  // link gain and the caps.
  [[nodiscard]] Vec power_state(int j) const {
    const auto& d = dev_[static_cast<std::size_t>(j)];
    const auto& ds = topo_.devices[static_cast<std::size_t>(j)];
    const double tau = sc_.cost.slot_s;
    double g_best = 0.0;
    double r_cap = 0.0;
    for (int k = 0; k < n_srv_; ++k) {
      g_best = std::max(g_best, d.gain[static_cast<std::size_t>(k)]);
      r_cap = std::max(r_cap, transmission_rate(sc_.channel, ds.p_max_w, d.gain[static_cast<std::size_t>(k)]));
    }
    double sc = 0.0, sg = 0.0;
    for (const auto& s : srv_) {
      sc += backlog_of(s.sc);
      sg += backlog_of(s.sg);
    }
    Vec s(kPowerStateDim);
    s << scale_qhat(normalize_queue(backlog_of(d.lc), ds.cpu_f_max_hz, tau)),
        scale_qhat(normalize_queue(backlog_of(d.tx), r_cap, tau)),
        scale_qhat(normalize_queue(backlog_of(d.lg), dev_gpu_flops_[static_cast<std::size_t>(j)], tau)),
        scale_qhat(normalize_queue(sc, sum_srv_hz_, tau)), scale_qhat(normalize_queue(sg, sum_srv_flops_, tau)),
        scale_gain(g_best), ds.cpu_f_max_hz / scales_.f_max, ds.p_max_w / scales_.p_max;
    return s;
  }

  [[nodiscard]] TargetCapacity capacity_of(int j, int action) const {
    if (action == kLocal) {
      const auto& ds = topo_.devices[static_cast<std::size_t>(j)];
      return {ds.mem_bytes, ds.gpu.cuda_cores, ds.gpu.memory_bytes};
    }
    const auto& s = topo_.servers[static_cast<std::size_t>(action - 1)];
    return {s.mem_bytes, s.gpu.cuda_cores, s.gpu.memory_bytes};
  }

  // Live view of every target for a task from device j.
  [[nodiscard]] std::vector<PlacementOption> options_for(const Task& task) const {
    const int j = task.origin_device;
    const auto& d = dev_[static_cast<std::size_t>(j)];
    const auto& ds = topo_.devices[static_cast<std::size_t>(j)];
    std::vector<PlacementOption> opts(static_cast<std::size_t>(n_srv_ + 1));
    const double tx_backlog = backlog_of(d.tx);
    for (int a = 0; a <= n_srv_; ++a) {
      auto& o = opts[static_cast<std::size_t>(a)];
      const auto c = compatibility(task, capacity_of(j, a));
      o.feasible = c.feasible;
      o.rho = c.rho;
      o.f_local_hz = d.f_hz;
      o.p_w = d.p_w;
      if (a == kLocal) {
        o.view.cpu_hz = d.f_hz;
        o.view.gpu_flops = dev_gpu_flops_[static_cast<std::size_t>(j)];
        o.view.cpu_backlog_cycles = backlog_of(d.lc);
        o.view.gpu_backlog_flops = backlog_of(d.lg);
        o.gpu_power_w = ds.gpu.power_w;
      } else {
        const auto k = static_cast<std::size_t>(a - 1);
        o.view.remote = true;
        o.view.cpu_hz = topo_.servers[k].cpu_f_hz;
        o.view.gpu_flops = srv_gpu_flops_[k];
        o.view.tx_bps = d.rate[k];
        o.view.tx_backlog_bits = tx_backlog;
        o.view.cpu_backlog_cycles = backlog_of(srv_[k].sc);
        o.view.gpu_backlog_flops = backlog_of(srv_[k].sg);
        o.gpu_power_w = topo_.servers[k].gpu.power_w;
      }
      o.view.gpu_capable = c.feasible;
    }
    return opts;
  }

  [[nodiscard]] Vec alloc_base_state(const Task& task, const Snapshot& snap, bool live) const {
    const int j = task.origin_device;
    const auto& d = dev_[static_cast<std::size_t>(j)];
    const auto& ds = topo_.devices[static_cast<std::size_t>(j)];
    const double now = slot_now_;
    const auto q = live ? normalized_queues(j, snap.rates, snap.f_hz) : snap.qhat;
    Vec s(alloc_base_dim(n_srv_));
    int i = 0;
    for (double x : q) s(i++) = scale_qhat(x);
    s(i++) = snap.f_hz / scales_.f_max;
    s(i++) = snap.p_w / scales_.p_max;
    for (int k = 0; k < n_srv_; ++k) s(i++) = scale_gain(d.gain[static_cast<std::size_t>(k)]);
    s(i++) = ds.gpu.clock_hz / scales_.gpu_clock;
    s(i++) = ds.gpu.cuda_cores / scales_.gpu_cores;
    s(i++) = ds.gpu.bandwidth_bytes_per_s / scales_.gpu_bw;
    s(i++) = ds.gpu.power_w / scales_.gpu_power;
    s(i++) = snap.util.u_cpu_local;
    s(i++) = snap.util.u_gpu_local;
    s(i++) = snap.util.u_cpu_server;
    s(i++) = snap.util.u_gpu_server;
    s(i++) = static_cast<double>(task.priority) / kMaxPriority;
    s(i++) = clamp01(task.size_bits / scales_.size_bits);
    s(i++) = clamp01(task.cycles_per_bit / scales_.cycles_per_bit);
    s(i++) = clamp01((task.deadline_s - now) / scales_.deadline_s);
    s(i++) = clamp01(task.cores / scales_.cores);
    s(i++) = clamp01(task.mem_bytes / scales_.mem_bytes);
    s(i++) = clamp01(task.gpu_load_flops / scales_.gpu_load);
    s(i++) = static_cast<double>(static_cast<int>(task.kind)) / (kTaskKinds - 1);
    for (int k = 0; k < n_srv_; ++k) s(i++) = scale_rate(snap.rates[static_cast<std::size_t>(k)]);
    return s;
  }

  // [S, dS, clip(S + dS)] with dS against the device's previous decision.
  [[nodiscard]] Vec augment(const Vec& base, const Vec& prev) const {
    if (!lc_.temporal_state) return base;
    const Vec delta = prev.size() == base.size() ? Vec(base - prev) : Vec(Vec::Zero(base.size()));
    Vec s(3 * base.size());
    s << base, delta, (base + delta).cwiseMax(0.0).cwiseMin(1.0);
    return s;
  }

  SlotRecord run_slot(int episode, int t, bool train, EpisodeMetrics& m) {
    const double tau = sc_.cost.slot_s;
    const double t0 = t * tau;
    const double t1 = t0 + tau;
    slot_now_ = t0;
    SlotRecord rec;
    rec.slot = t;

    // Mobility, then channel gains at the new positions.
    if (t > 0) {
      Rng mob = make_rng({run_.seed, tag(Stream::Mobility), static_cast<std::uint64_t>(episode),
                          static_cast<std::uint64_t>(t)});
      for (auto& ds : topo_.devices) step_mobility(ds, mob, sc_.mobility);
    }

    // Stage 1: power control.
    for (int j = 0; j < n_dev_; ++j) {
      auto& d = dev_[static_cast<std::size_t>(j)];
      const auto& ds = topo_.devices[static_cast<std::size_t>(j)];
      d.stale = d.snap;
      refresh_links(j);
      if (uses_td3()) {
        const Vec s = power_state(j);
        if (d.pending_power && train) {
          Experience e;
          e.state = d.pending_power->state;
          e.action = d.pending_power->action;
          e.reward = d.pending_power->reward;
          e.next_state = s;
          e.fail_flag = d.pending_power->fail;
          td3_->remember(std::move(e));
        }
        d.pending_power.reset();
        const PowerAction a = td3_->act(s, d.snap.load, train, ds.cpu_f_max_hz, ds.p_max_w);
        d.f_hz = a.f_hz;
        d.p_w = a.p_w;
        d.pending_power = PendingPower{s, a.normalized, 0.0, 0};
      } else {
        d.f_hz = ds.cpu_f_max_hz;
        d.p_w = ds.p_max_w;
      }
      rec.f_hz.push_back(d.f_hz);
      rec.p_w.push_back(d.p_w);
    }

    // Stage 2: rates at the chosen power, normalized queues, load.
    double load_sum = 0.0;
    std::array<double, kQueueDims> q_sum{};
    for (int j = 0; j < n_dev_; ++j) {
      auto& d = dev_[static_cast<std::size_t>(j)];
      refresh_links(j);
      d.snap = coordinate(j);
      load_sum += d.snap.load;
      for (int i = 0; i < kQueueDims; ++i) q_sum[static_cast<std::size_t>(i)] += d.snap.qhat[static_cast<std::size_t>(i)];
      rec.rates_bps.push_back(d.rate);
    }
    rec.load = n_dev_ > 0 ? load_sum / n_dev_ : 0.0;
    for (int i = 0; i < kQueueDims; ++i) rec.qhat[static_cast<std::size_t>(i)] = n_dev_ > 0 ? q_sum[static_cast<std::size_t>(i)] / n_dev_ : 0.0;

    // Stage 3: allocation of this slot's arrivals.
    Rng arr = make_rng({run_.seed, tag(Stream::Arrivals), static_cast<std::uint64_t>(episode),
                        static_cast<std::uint64_t>(t)});
    auto tasks = generate_tasks(run_.rate, t, tau, n_dev_, sc_.workload, next_id_, arr);
    rec.arrivals = static_cast<int>(tasks.size());
    generated_ += rec.arrivals;
    for (const auto& task : tasks) {
      auto& ks = m.kinds[static_cast<std::size_t>(task.kind)];
      ++ks.generated;
    }
    order_arrivals(tasks);
    std::vector<int> qpso_alloc;
    if (run_.algorithm == PolicyKind::Qpso && !tasks.empty()) {
      std::vector<std::vector<PlacementOption>> opts;
      for (const auto& task : tasks) opts.push_back(options_for(task));
      qpso_alloc = qpso_solve(tasks, opts, n_dev_, n_srv_, t0, sc_.cost, lc_.qpso, baseline_rng_).allocation;
    }
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      rec.decisions.push_back(dispatch(tasks[i], qpso_alloc.empty() ? -1 : qpso_alloc[i], train, m));
    }

    // Service for one slot.
    for (auto& d : dev_) {
      d.busy_cpu_s = d.busy_gpu_s = 0.0;
      d.tx_energy_j = d.gpu_energy_j = 0.0;
      d.completed_b.clear();
      d.failed_in_slot = 0;
    }
    for (auto& s : srv_) s.busy_cpu_s = s.busy_gpu_s = s.gpu_energy_j = 0.0;
    const int done_before = completed_, failed_before = failed_;
    for (int j = 0; j < n_dev_; ++j) serve_device(j, t0, t1, m);
    for (int k = 0; k < n_srv_; ++k) serve_server(k, t0, t1, m);

    // Energy and power-tier rewards.
    for (int j = 0; j < n_dev_; ++j) {
      auto& d = dev_[static_cast<std::size_t>(j)];
      const double e = cpu_energy(sc_.cost.kappa, d.f_hz, d.busy_cpu_s) + d.tx_energy_j + d.gpu_energy_j;
      rec.device_energy_j.push_back(e);
      rec.energy_j += e;
      if (d.pending_power) {
        d.pending_power->reward = power_reward(d.completed_b, e, sc_.cost);
        d.pending_power->fail = d.failed_in_slot > 0 ? 1 : 0;
      }
    }
    for (const auto& s : srv_) rec.server_energy_j += s.gpu_energy_j;
    rec.energy_j += rec.server_energy_j;
    m.energy_j += rec.energy_j;
    m.server_energy_j += rec.server_energy_j;
    for (double e : rec.device_energy_j) m.device_energy_j += e;

    if (train && td3_) {
      for (int j = 0; j < n_dev_; ++j)
        if (td3_->ready()) td3_->train_step(&diag_);
    }

    rec.completed = completed_ - done_before;
    rec.failed = failed_ - failed_before;
    rec.generated_total = generated_;
    rec.completed_total = completed_;
    rec.failed_total = failed_;
    rec.in_flight = count_queued();
    if (rec.in_flight != in_flight()) {
      std::ostringstream os;
      os << "task conservation violated at episode " << episode << " slot " << t << ": generated "
         << generated_ << ", completed " << completed_ << ", failed " << failed_ << ", queued "
         << rec.in_flight;
      throw std::logic_error(os.str());
    }
    return rec;
  }

  [[nodiscard]] int count_queued() const {
    std::size_t n = 0;
    for (const auto& d : dev_) n += d.lc.size() + d.tx.size() + d.lg.size();
    for (const auto& s : srv_) n += s.sc.size() + s.sg.size();
    return static_cast<int>(n);
  }

  // Highest deadline score first (arrival order without deadline awareness).
  void order_arrivals(std::vector<Task>& tasks) const {
    if (run_.ablations.no_deadline) return;
    std::vector<double> score(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto opts = options_for(tasks[i]);
      double best_rho = 0.0;
      double d_est = std::numeric_limits<double>::infinity();
      for (const auto& o : opts) {
        if (!o.feasible && !run_.ablations.no_gpu) continue;
        best_rho = std::max(best_rho, run_.ablations.no_gpu ? 1.0 : o.rho);
        d_est = std::min(d_est, estimate_times(tasks[i], o.view).service_s());
      }
      score[i] = std::isfinite(d_est) ? priority_score(tasks[i], slot_now_, d_est, best_rho) : 0.0;
    }
    std::vector<std::size_t> idx(tasks.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (score[a] != score[b]) return score[a] > score[b];
      return tasks[a].id < tasks[b].id;
    });
    std::vector<Task> sorted;
    sorted.reserve(tasks.size());
    for (auto i : idx) sorted.push_back(tasks[i]);
    tasks = std::move(sorted);
  }

  DecisionRecord dispatch(const Task& task, int preset_action, bool train, EpisodeMetrics& m) {
    const int j = task.origin_device;
    auto& d = dev_[static_cast<std::size_t>(j)];
    const auto opts = options_for(task);
    std::vector<bool> mask(opts.size());
    bool any_feasible = false;
    double best_rho = 0.0;
    for (std::size_t a = 0; a < opts.size(); ++a) {
      mask[a] = run_.ablations.no_gpu || opts[a].feasible;
      any_feasible = any_feasible || opts[a].feasible;
      if (mask[a]) best_rho = std::max(best_rho, run_.ablations.no_gpu ? 1.0 : opts[a].rho);
    }

    DecisionRecord rec;
    rec.task_id = task.id;
    rec.device = j;
    const Snapshot& snap = run_.ablations.no_coord ? d.stale : d.snap;
    Vec state;
    switch (run_.algorithm) {
      case PolicyKind::Hirl:
      case PolicyKind::SingleDdqn: {
        const Vec base = alloc_base_state(task, snap, !run_.ablations.no_coord);
        state = augment(base, d.last_alloc_base);
        d.last_alloc_base = base;
        const auto dec = ddqn_->act(state, mask, snap.load, train);
        rec.action = dec.action;
        rec.explored = dec.explored;
        rec.no_feasible = dec.no_feasible;
        rec.seen_rates = snap.rates;
        break;
      }
      case PolicyKind::Random: rec.action = random_place(n_srv_, baseline_rng_); break;
      case PolicyKind::GreedyLocal: rec.action = greedy_local_place(task, opts, sc_.cost.slot_s); break;
      case PolicyKind::GreedyOffload: rec.action = greedy_offload_place(task, opts, sc_.cost.slot_s); break;
      case PolicyKind::RoundRobin: rec.action = round_robin_place(n_srv_, rr_counter_); break;
      case PolicyKind::Qpso: rec.action = preset_action < 0 ? kLocal : preset_action; break;
    }
    const auto& chosen = opts[static_cast<std::size_t>(rec.action)];
    rec.mask_violation = !chosen.feasible && any_feasible;
    if (rec.mask_violation) ++m.mask_violations;
    const double d_est = estimate_times(task, chosen.view).service_s();
    rec.risk = failure_risk(task, slot_now_, best_rho, d_est, sc_.theta_min);
    if (!any_feasible && !run_.ablations.no_gpu) rec.risk = 1;
    m.risk_flags += rec.risk;
    if (rec.action != kLocal) ++m.offloaded;

    // Learning bookkeeping: the experience waits for the task outcome.
    if (ddqn_ && train) {
      PendingAlloc pa;
      pa.exp.state = state;
      pa.exp.action_index = rec.action;
      pa.exp.terminal = true;
      if (lc_.alloc_bootstrap) {
        if (d.last_decision) {
          auto& prev = pending_alloc_[*d.last_decision];
          prev.exp.next_state = state;
          prev.exp.terminal = false;
          prev.waiting_next = false;
          maybe_commit(*d.last_decision);
        }
        pa.waiting_next = true;
      }
      pending_alloc_.push_back(std::move(pa));
      const std::size_t idx = pending_alloc_.size() - 1;
      task_decision_.resize(std::max<std::size_t>(task_decision_.size(), task.id + 1), kNoDecision);
      task_decision_[task.id] = idx;
      d.last_decision = idx;
    }

    QueuedTask q;
    q.task = task;
    q.ready_s = slot_now_;
    q.stage_start_s = slot_now_;
    q.arrival_seq = seq_++;
    q.best_rho = best_rho;
    q.target = rec.action;
    if (rec.action == kLocal) {
      if (!chosen.feasible) {
        fail_task(q, slot_now_, m);
      } else {
        q.remaining = task.cpu_cycles();
        d.lc.push_back(std::move(q));
      }
    } else {
      q.remaining = task.size_bits;
      d.tx.push_back(std::move(q));
    }

    if (ddqn_ && train && ddqn_->ready()) ddqn_->train_step(snap.load, &diag_);
    return rec;
  }

  void maybe_commit(std::size_t idx) {
    auto& pa = pending_alloc_[idx];
    if (!pa.outcome_known || pa.waiting_next || !ddqn_) return;
    if (pa.exp.next_state.size() == 0) pa.exp.next_state = pa.exp.state;
    ddqn_->remember(std::move(pa.exp));
    pa.exp = Experience{};
    pa.outcome_known = false;
  }

  void record_outcome(const QueuedTask& q, const TaskOutcome& o) {
    if (q.task.id >= task_decision_.size()) return;
    const std::size_t idx = task_decision_[q.task.id];
    if (idx == kNoDecision) return;
    auto& pa = pending_alloc_[idx];
    pa.exp.reward = allocation_reward(o, sc_.cost);
    pa.exp.fail_flag = o.fail_flag;
    pa.outcome_known = true;
    maybe_commit(idx);
  }

  void complete_task(QueuedTask& q, double t, EpisodeMetrics& m) {
    TaskOutcome o;
    o.task_id = q.task.id;
    o.completed = o.deadline_met = t <= q.task.deadline_s;
    o.d_total_s = t - q.task.created_s;
    o.energy_j = q.energy_j;
    o.fail_flag = 0;
    o.placement = q.target;
    o.priority = q.task.priority;
    o.kind = q.task.kind;
    ++completed_;
    ++m.completed;
    m.cumulative_latency_s += o.d_total_s;
    m.completed_latency_s += o.d_total_s;
    auto& ks = m.kinds[static_cast<std::size_t>(q.task.kind)];
    ++ks.completed;
    ks.latency_s += o.d_total_s;
    ks.energy_j += o.energy_j;
    dev_[static_cast<std::size_t>(q.task.origin_device)].completed_b.push_back(q.task.priority);
    record_outcome(q, o);
  }

  void fail_task(QueuedTask& q, double t, EpisodeMetrics& m) {
    TaskOutcome o;
    o.task_id = q.task.id;
    o.d_total_s = std::max(0.0, t - q.task.created_s);
    o.energy_j = q.energy_j;
    o.fail_flag = 1;
    o.placement = q.target;
    o.priority = q.task.priority;
    o.kind = q.task.kind;
    ++failed_;
    ++m.failed;
    m.cumulative_latency_s += o.d_total_s;
    auto& ks = m.kinds[static_cast<std::size_t>(q.task.kind)];
    ks.latency_s += o.d_total_s;
    ks.energy_j += o.energy_j;
    ++dev_[static_cast<std::size_t>(q.task.origin_device)].failed_in_slot;
    record_outcome(q, o);
  }

  [[nodiscard]] DequeueMode dequeue_mode() const {
    return run_.ablations.no_deadline ? DequeueMode::Fcfs : DequeueMode::DeadlinePriority;
  }

  // Deadline score of a queued task given the rate of the stage it waits in.
  [[nodiscard]] static double queued_score(const QueuedTask& q, double now, double rate) {
    const double d_est = rate > 0 ? q.remaining / rate : std::numeric_limits<double>::infinity();
    if (!std::isfinite(d_est)) return 0.0;
    return priority_score(q.task, now, std::max(d_est, 1e-12), q.best_rho);
  }

  static void close_stage(QueuedTask& q, QueueDim dim, double t) {
    const auto i = static_cast<std::size_t>(dim);
    q.wait_s[i] = std::max(0.0, (t - q.stage_start_s) - q.service_s[i]);
  }

  void serve_device(int j, double t0, double t1, EpisodeMetrics& m) {
    auto& d = dev_[static_cast<std::size_t>(j)];
    const auto& ds = topo_.devices[static_cast<std::size_t>(j)];
    const double kappa = sc_.cost.kappa;
    const double f = d.f_hz;
    const double gflops = dev_gpu_flops_[static_cast<std::size_t>(j)];
    const auto mode = dequeue_mode();

    auto stats = serve_queue(
        d.lc, t0, t1, mode, [&](const QueuedTask&) { return f; },
        [&](const QueuedTask& q, double now) { return queued_score(q, now, f); },
        [&](QueuedTask& q, double a, double b) {
          q.energy_j += cpu_energy(kappa, f, b - a);
          q.service_s[static_cast<std::size_t>(QueueDim::LocalCpu)] += b - a;
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::LocalCpu, t);
          if (q.task.needs_gpu()) {
            q.remaining = q.task.gpu_load_flops;
            q.ready_s = q.stage_start_s = t;
            q.in_service = false;
            q.arrival_seq = seq_++;
            d.lg.push_back(std::move(q));
          } else {
            complete_task(q, t, m);
          }
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::LocalCpu, t);
          fail_task(q, t, m);
        });
    d.busy_cpu_s = stats.busy_s;

    stats = serve_queue(
        d.lg, t0, t1, mode, [&](const QueuedTask&) { return gflops; },
        [&](const QueuedTask& q, double now) { return queued_score(q, now, gflops); },
        [&](QueuedTask& q, double a, double b) {
          const double e = ds.gpu.power_w * (b - a);
          q.energy_j += e;
          d.gpu_energy_j += e;
          q.service_s[static_cast<std::size_t>(QueueDim::LocalGpu)] += b - a;
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::LocalGpu, t);
          complete_task(q, t, m);
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::LocalGpu, t);
          fail_task(q, t, m);
        });
    d.busy_gpu_s = stats.busy_s;

    auto tx_rate = [&](const QueuedTask& q) { return d.rate[static_cast<std::size_t>(q.target - 1)]; };
    serve_queue(
        d.tx, t0, t1, mode, tx_rate,
        [&](const QueuedTask& q, double now) { return queued_score(q, now, tx_rate(q)); },
        [&](QueuedTask& q, double a, double b) {
          const double e = d.p_w * (b - a);
          q.energy_j += e;
          d.tx_energy_j += e;
          q.service_s[static_cast<std::size_t>(QueueDim::Tx)] += b - a;
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::Tx, t);
          const auto c = compatibility(q.task, capacity_of(j, q.target));
          if (!c.feasible) {
            fail_task(q, t, m);  // rejected on arrival at the server
            return;
          }
          auto& s = srv_[static_cast<std::size_t>(q.target - 1)];
          q.remaining = q.task.cpu_cycles();
          q.ready_s = q.stage_start_s = t;
          q.in_service = false;
          q.arrival_seq = seq_++;
          s.sc.push_back(std::move(q));
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::Tx, t);
          fail_task(q, t, m);
        });
  }

  void serve_server(int k, double t0, double t1, EpisodeMetrics& m) {
    auto& s = srv_[static_cast<std::size_t>(k)];
    const auto& ss = topo_.servers[static_cast<std::size_t>(k)];
    const double f = ss.cpu_f_hz;
    const double gflops = srv_gpu_flops_[static_cast<std::size_t>(k)];
    const auto mode = dequeue_mode();
    auto stats = serve_queue(
        s.sc, t0, t1, mode, [&](const QueuedTask&) { return f; },
        [&](const QueuedTask& q, double now) { return queued_score(q, now, f); },
        [&](QueuedTask& q, double a, double b) {
          q.service_s[static_cast<std::size_t>(QueueDim::ServerCpu)] += b - a;
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::ServerCpu, t);
          if (q.task.needs_gpu()) {
            q.remaining = q.task.gpu_load_flops;
            q.ready_s = q.stage_start_s = t;
            q.in_service = false;
            q.arrival_seq = seq_++;
            s.sg.push_back(std::move(q));
          } else {
            complete_task(q, t, m);
          }
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::ServerCpu, t);
          fail_task(q, t, m);
        });
    s.busy_cpu_s = stats.busy_s;
    stats = serve_queue(
        s.sg, t0, t1, mode, [&](const QueuedTask&) { return gflops; },
        [&](const QueuedTask& q, double now) { return queued_score(q, now, gflops); },
        [&](QueuedTask& q, double a, double b) {
          const double e = ss.gpu.power_w * (b - a);
          q.energy_j += e;
          s.gpu_energy_j += e;
          q.service_s[static_cast<std::size_t>(QueueDim::ServerGpu)] += b - a;
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::ServerGpu, t);
          complete_task(q, t, m);
        },
        [&](QueuedTask& q, double t) {
          close_stage(q, QueueDim::ServerGpu, t);
          fail_task(q, t, m);
        });
    s.busy_gpu_s = stats.busy_s;
  }

  void finish_episode_learning(bool train) {
    if (!train) return;
    if (td3_) {
      for (int j = 0; j < n_dev_; ++j) {
        auto& d = dev_[static_cast<std::size_t>(j)];
        if (!d.pending_power) continue;
        Experience e;
        e.state = d.pending_power->state;
        e.action = d.pending_power->action;
        e.reward = d.pending_power->reward;
        e.next_state = power_state(j);
        e.terminal = true;
        e.fail_flag = d.pending_power->fail;
        td3_->remember(std::move(e));
        d.pending_power.reset();
      }
    }
    for (std::size_t i = 0; i < pending_alloc_.size(); ++i) {
      auto& pa = pending_alloc_[i];
      if (pa.waiting_next) {
        pa.waiting_next = false;
        pa.exp.terminal = true;
        maybe_commit(i);
      }
    }
  }

  static constexpr std::size_t kNoDecision = std::numeric_limits<std::size_t>::max();

  ScenarioConfig sc_;
  LearningConfig lc_;
  RunSpec run_;
  Topology topo_;
  int n_dev_ = 0;
  int n_srv_ = 0;
  std::vector<DeviceRt> dev_;
  std::vector<ServerRt> srv_;
  std::vector<double> dev_gpu_flops_;
  std::vector<double> srv_gpu_flops_;
  double sum_srv_hz_ = 0.0;
  double sum_srv_flops_ = 0.0;
  StateScales scales_;
  std::unique_ptr<DdqnAgent> ddqn_;
  std::unique_ptr<Td3Agent> td3_;
  Rng baseline_rng_;
  std::uint64_t rr_counter_ = 0;
  std::uint64_t next_id_ = 0;
  std::uint64_t seq_ = 0;
  int episode_ = 0;
  int generated_ = 0;
  int completed_ = 0;
  int failed_ = 0;
  double slot_now_ = 0.0;
  std::vector<PendingAlloc> pending_alloc_;
  std::vector<std::size_t> task_decision_;
  Diagnostics diag_;
};

}  // namespace hirl

#pragma once

// Non-hierarchical placement policies evaluated against the learned
// orchestrator: Random, Greedy-Local, Greedy-Offload, Round-Robin and a
// per-slot QPSO search.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "hirl/common.hpp"
#include "hirl/perf_model.hpp"
#include "hirl/queueing.hpp"
#include "hirl/sim_env.hpp"

namespace hirl {

enum class PolicyKind { Random, GreedyLocal, GreedyOffload, RoundRobin, Qpso, SingleDdqn, Hirl };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Random: return "random";
    case PolicyKind::GreedyLocal: return "greedy-local";
    case PolicyKind::GreedyOffload: return "greedy-offload";
    case PolicyKind::RoundRobin: return "round-robin";
    case PolicyKind::Qpso: return "qpso";
    case PolicyKind::SingleDdqn: return "single-ddqn";
    case PolicyKind::Hirl: return "hirl";
  }
  return "?";
}

inline PolicyKind parse_policy(const std::string& s) {
  for (auto k : {PolicyKind::Random, PolicyKind::GreedyLocal, PolicyKind::GreedyOffload,
                 PolicyKind::RoundRobin, PolicyKind::Qpso, PolicyKind::SingleDdqn, PolicyKind::Hirl}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown algorithm '" + s + "'");
}

// One candidate target for a task as seen at decision time. Index 0 of an
// option list is local execution, index k is server k-1.
struct PlacementOption {
  bool feasible = true;  // true compatibility, never relaxed
  double rho = 1.0;
  TargetView view;
  double gpu_power_w = 0.0;
  double f_local_hz = 0.0;  // device CPU frequency (local energy)
  double p_w = 0.0;         // device transmit power (uplink energy)
};

inline int random_place(int num_servers, Rng& rng) {
  return static_cast<int>(uniform_int(rng, 0, num_servers));
}

inline int round_robin_place(int num_servers, std::uint64_t& counter) {
  if (num_servers <= 0) return kLocal;
  return 1 + static_cast<int>(counter++ % static_cast<std::uint64_t>(num_servers));
}

// Server backlog relative to one slot of its capacity, over the stages the
// task would use.
inline double server_load(const Task& task, const TargetView& v, double slot_s) {
  double load = v.cpu_hz > 0 ? v.cpu_backlog_cycles / (v.cpu_hz * slot_s) : kNormalizedCeiling;
  if (task.needs_gpu())
    load = std::max(load, v.gpu_flops > 0 ? v.gpu_backlog_flops / (v.gpu_flops * slot_s) : kNormalizedCeiling);
  return load;
}

// Local unless a local queue the task needs holds more than one slot of
// work (or local cannot host it); then the least-loaded feasible server.
inline int greedy_local_place(const Task& task, const std::vector<PlacementOption>& options,
                              double slot_s) {
  const auto& local = options.at(0);
  const double q_lc = normalize_queue(local.view.cpu_backlog_cycles, local.view.cpu_hz, slot_s);
  const double q_lg = task.needs_gpu()
                          ? normalize_queue(local.view.gpu_backlog_flops, local.view.gpu_flops, slot_s)
                          : 0.0;
  if (local.feasible && q_lc <= 1.0 && q_lg <= 1.0) return kLocal;
  int best = -1;
  double best_load = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < options.size(); ++k) {
    if (!options[k].feasible) continue;
    const double load = server_load(task, options[k].view, slot_s);
    if (load < best_load) {
      best_load = load;
      best = static_cast<int>(k);
    }
  }
  return best < 0 ? kLocal : best;
}

// Feasible server with the most spare compute in the coming slot (GPU
// FLOPs for GPU tasks, CPU cycles otherwise); local when none is feasible.
inline int greedy_offload_place(const Task& task, const std::vector<PlacementOption>& options,
                                double slot_s) {
  int best = -1;
  double best_avail = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < options.size(); ++k) {
    if (!options[k].feasible) continue;
    const auto& v = options[k].view;
    const double avail = task.needs_gpu() ? v.gpu_flops * slot_s - v.gpu_backlog_flops
                                          : v.cpu_hz * slot_s - v.cpu_backlog_cycles;
    if (avail > best_avail) {
      best_avail = avail;
      best = static_cast<int>(k);
    }
  }
  return best < 0 ? kLocal : best;
}

// Work a placement adds to the queues it traverses; used to let earlier
// tasks of a batch delay later ones during estimation.
struct BatchBacklog {
  std::vector<std::array<double, 3>> device;  // per device: cpu, tx, gpu
  std::vector<std::array<double, 2>> server;  // per server: cpu, gpu
};

// Predicted outcome of running `task` on `option` behind `extra` work.
// Infeasible or late predictions count as failures that end at the deadline.
inline TaskOutcome estimate_outcome(const Task& task, int action, const PlacementOption& option,
                                    const std::array<double, 3>& extra_device,
                                    const std::array<double, 2>& extra_server, double now_s,
                                    const CostParams& params) {
  TargetView v = option.view;
  v.cpu_backlog_cycles += action == kLocal ? extra_device[0] : extra_server[0];
  v.gpu_backlog_flops += action == kLocal ? extra_device[2] : extra_server[1];
  if (action != kLocal) v.tx_backlog_bits += extra_device[1];
  const TimeEstimate est = estimate_times(task, v);
  TaskOutcome o;
  o.task_id = task.id;
  o.placement = action;
  o.priority = task.priority;
  o.kind = task.kind;
  const double slack = std::max(0.0, task.deadline_s - now_s);
  const bool ok = option.feasible && est.feasible && est.total_s() <= slack;
  if (ok) {
    o.completed = o.deadline_met = true;
    o.d_total_s = est.total_s();
    const ExecRates rates{v.cpu_hz, v.gpu_flops, v.tx_bps};
    o.energy_j = task_energy(task, action != kLocal, option.f_local_hz, option.p_w, rates,
                             option.gpu_power_w, params).energy_j;
  } else {
    o.fail_flag = 1;
    o.d_total_s = slack;
    o.energy_j = 0.0;
  }
  return o;
}

// Sum over the batch of task cost plus alpha_fail per predicted failure,
// with tasks placed in batch order.
inline double allocation_fitness(const std::vector<Task>& tasks,
                                 const std::vector<std::vector<PlacementOption>>& options,
                                 const std::vector<int>& alloc, int num_devices, int num_servers,
                                 double now_s, const CostParams& params) {
  BatchBacklog extra{std::vector<std::array<double, 3>>(static_cast<std::size_t>(num_devices), {0, 0, 0}),
                     std::vector<std::array<double, 2>>(static_cast<std::size_t>(num_servers), {0, 0})};
  double total = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Task& t = tasks[i];
    const int a = alloc[i];
    auto& dev = extra.device[static_cast<std::size_t>(t.origin_device)];
    static const std::array<double, 2> none{0, 0};
    const auto& srv = a == kLocal ? none : extra.server[static_cast<std::size_t>(a - 1)];
    const TaskOutcome o = estimate_outcome(t, a, options[i][static_cast<std::size_t>(a)], dev, srv, now_s, params);
    total += task_cost(o, params) + params.alpha_fail * o.fail_flag;
    if (a == kLocal) {
      dev[0] += t.cpu_cycles();
      dev[2] += t.gpu_load_flops;
    } else {
      dev[1] += t.size_bits;
      auto& s = extra.server[static_cast<std::size_t>(a - 1)];
      s[0] += t.cpu_cycles();
      s[1] += t.gpu_load_flops;
    }
  }
  return total;
}

struct QpsoConfig {
  int particles = 30;
  int iterations = 50;
  double beta_start = 1.0;
  double beta_end = 0.5;
};

struct QpsoResult {
  std::vector<int> allocation;
  double fitness = std::numeric_limits<double>::infinity();
  std::vector<double> best_history;  // global best after init and each iteration
};

// Quantum-behaved PSO over target indices. Each particle holds one
// continuous coordinate per task in [0, N+1); floor() gives the target.
template <typename Fitness>
QpsoResult qpso_minimize(std::size_t dims, int num_actions, const QpsoConfig& cfg, Rng& rng,
                         Fitness&& fitness) {
  if (cfg.particles < 2) throw std::invalid_argument("qpso needs at least two particles");
  QpsoResult res;
  if (dims == 0) {
    res.fitness = fitness(std::vector<int>{});
    res.best_history.push_back(res.fitness);
    return res;
  }
  const double hi = static_cast<double>(num_actions);
  const double top = std::nextafter(hi, 0.0);
  auto decode = [&](const std::vector<double>& x) {
    std::vector<int> a(x.size());
    for (std::size_t d = 0; d < x.size(); ++d)
      a[d] = std::clamp(static_cast<int>(std::floor(x[d])), 0, num_actions - 1);
    return a;
  };
  const auto np = static_cast<std::size_t>(cfg.particles);
  std::vector<std::vector<double>> x(np, std::vector<double>(dims));
  std::vector<std::vector<double>> pbest(np);
  std::vector<double> pfit(np);
  std::size_t g = 0;
  for (std::size_t i = 0; i < np; ++i) {
    for (auto& v : x[i]) v = uniform(rng, 0.0, hi);
    pbest[i] = x[i];
    pfit[i] = fitness(decode(x[i]));
    if (pfit[i] < pfit[g]) g = i;
  }
  res.best_history.push_back(pfit[g]);
  std::vector<double> mbest(dims);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double beta = cfg.iterations > 1
                            ? cfg.beta_start + (cfg.beta_end - cfg.beta_start) * it / (cfg.iterations - 1)
                            : cfg.beta_start;
    std::fill(mbest.begin(), mbest.end(), 0.0);
    for (const auto& p : pbest)
      for (std::size_t d = 0; d < dims; ++d) mbest[d] += p[d] / static_cast<double>(np);
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t d = 0; d < dims; ++d) {
        const double phi = uniform(rng, 0.0, 1.0);
        const double attractor = phi * pbest[i][d] + (1.0 - phi) * pbest[g][d];
        const double u = std::max(uniform(rng, 0.0, 1.0), std::numeric_limits<double>::min());
        const double spread = beta * std::abs(mbest[d] - x[i][d]) * std::log(1.0 / u);
        x[i][d] = uniform(rng, 0.0, 1.0) < 0.5 ? attractor + spread : attractor - spread;
        x[i][d] = std::clamp(x[i][d], 0.0, top);
      }
      const double f = fitness(decode(x[i]));
      if (f < pfit[i]) {
        pfit[i] = f;
        pbest[i] = x[i];
      }
    }
    for (std::size_t i = 0; i < np; ++i)
      if (pfit[i] < pfit[g]) g = i;
    res.best_history.push_back(pfit[g]);
  }
  res.allocation = decode(pbest[g]);
  res.fitness = pfit[g];
  return res;
}

inline QpsoResult qpso_solve(const std::vector<Task>& tasks,
                             const std::vector<std::vector<PlacementOption>>& options,
                             int num_devices, int num_servers, double now_s,
                             const CostParams& params, const QpsoConfig& cfg, Rng& rng) {
  return qpso_minimize(tasks.size(), num_servers + 1, cfg, rng, [&](const std::vector<int>& a) {
    return allocation_fitness(tasks, options, a, num_devices, num_servers, now_s, params);
  });
}

}  // namespace hirl

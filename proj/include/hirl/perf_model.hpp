#pragma once

// Per-task latency, energy and cost, plus the reward signals of both tiers.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hirl/sim_env.hpp"

namespace hirl {

struct CostParams {
  double lambda = 0.8;      // latency weight in the task cost
  double lambda_e = 0.5;    // energy weight in the power reward
  double alpha_fail = 1.0;  // failure penalty in the allocation reward
  double kappa = 1e-28;     // effective switching capacitance
  double slot_s = 1.0;
  double gpu_efficiency = 0.5;

  [[nodiscard]] bool valid() const noexcept {
    return lambda >= 0 && lambda <= 1 && lambda_e >= 0 && lambda_e <= 1 && alpha_fail >= 0 &&
           kappa > 0 && slot_s > 0 && gpu_efficiency > 0 && gpu_efficiency <= 1;
  }
};

// 2 * cores * clock * efficiency (one fused multiply-add per core per cycle).
inline double effective_gpu_flops(const GpuSpec& spec, double efficiency) {
  if (!(efficiency > 0.0 && efficiency <= 1.0))
    throw std::invalid_argument("gpu efficiency must lie in (0, 1]");
  return 2.0 * spec.cuda_cores * spec.clock_hz * efficiency;
}

// Index 0 is local execution, k >= 1 is server k-1.
inline constexpr int kLocal = 0;

struct TaskOutcome {
  std::uint64_t task_id = 0;
  bool completed = false;
  bool deadline_met = false;
  double d_total_s = 0.0;
  double energy_j = 0.0;
  int fail_flag = 0;
  int placement = kLocal;
  int priority = 1;
  TaskKind kind = TaskKind::CpuIntensive;
};

// Processing rates seen by a task on its chosen target.
struct ExecRates {
  double cpu_hz = 0.0;
  double gpu_flops = 0.0;
  double tx_bps = 0.0;  // ignored for local execution
};

struct StageWaits {
  double tx_s = 0.0;
  double cpu_s = 0.0;
  double gpu_s = 0.0;
};

struct LatencyResult {
  bool feasible = true;
  double d_total_s = 0.0;
};

// Sequential stages: [uplink] -> CPU -> [GPU].
inline LatencyResult task_latency(const Task& task, bool remote, const StageWaits& waits,
                                  const ExecRates& rates) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  LatencyResult out;
  double d = 0.0;
  if (remote) {
    if (rates.tx_bps <= 0.0) return {false, inf};
    d += waits.tx_s + task.size_bits / rates.tx_bps;
  }
  if (rates.cpu_hz <= 0.0) return {false, inf};
  d += waits.cpu_s + task.cpu_cycles() / rates.cpu_hz;
  if (task.needs_gpu()) {
    if (rates.gpu_flops <= 0.0) return {false, inf};
    d += waits.gpu_s + task.gpu_load_flops / rates.gpu_flops;
  }
  out.d_total_s = d;
  return out;
}

struct EnergyResult {
  bool feasible = true;
  double energy_j = 0.0;
};

// Local: kappa*f^2 per cycle over s*c cycles for the CPU stage plus device GPU power over the GPU
// stage. Remote: p*s/r for the uplink plus server GPU power over the GPU
// stage; server CPU energy is not charged to the task.
inline EnergyResult task_energy(const Task& task, bool remote, double f_local_hz, double p_w,
                                const ExecRates& rates, double gpu_power_w,
                                const CostParams& params) {
  EnergyResult out;
  if (remote) {
    if (p_w > 0.0) {
      if (rates.tx_bps <= 0.0) return {false, 0.0};
      out.energy_j += p_w * task.size_bits / rates.tx_bps;
    }
  } else {
    out.energy_j += params.kappa * f_local_hz * f_local_hz * task.cpu_cycles();
  }
  if (task.needs_gpu()) {
    if (rates.gpu_flops <= 0.0) return {false, out.energy_j};
    out.energy_j += gpu_power_w * task.gpu_load_flops / rates.gpu_flops;
  }
  return out;
}

// Energy of running the local CPU at f for `busy_s` seconds: kappa*f^2 per
// executed cycle. An idle CPU draws nothing.
inline double cpu_energy(double kappa, double f_hz, double busy_s) {
  return kappa * f_hz * f_hz * (f_hz * busy_s);
}

inline double task_cost(const TaskOutcome& o, const CostParams& params) {
  return params.lambda * o.priority * o.d_total_s + (1.0 - params.lambda) * o.energy_j;
}

// sum of completed priorities minus lambda_e * slot energy of the device.
inline double power_reward(const std::vector<int>& completed_priorities, double slot_energy_j,
                           const CostParams& params) {
  double sum = 0.0;
  for (int b : completed_priorities) sum += b;
  return sum - params.lambda_e * slot_energy_j;
}

inline double allocation_reward(const TaskOutcome& o, const CostParams& params) {
  return -task_cost(o, params) - params.alpha_fail * o.fail_flag;
}

}  // namespace hirl

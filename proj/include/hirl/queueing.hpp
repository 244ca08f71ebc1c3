#pragma once

// Five-dimensional queue state, load metric and deadline-oriented dequeueing.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "hirl/common.hpp"
#include "hirl/sim_env.hpp"

namespace hirl {

enum class QueueDim : int { LocalCpu = 0, Tx = 1, LocalGpu = 2, ServerCpu = 3, ServerGpu = 4 };

inline constexpr int kQueueDims = 5;

// Raw backlogs in native work units: cycles (lc, sc), bits (tx), FLOPs (lg, sg).
struct QueueState {
  std::array<double, kQueueDims> backlog{};

  double& operator[](QueueDim d) { return backlog[static_cast<std::size_t>(d)]; }
  double operator[](QueueDim d) const { return backlog[static_cast<std::size_t>(d)]; }
};

struct LoadWeights {
  double w_q = 0.6;
  double w_u = 0.2;
  double w_g = 0.2;

  [[nodiscard]] bool valid() const noexcept {
    return w_q >= 0 && w_u >= 0 && w_g >= 0 && std::abs(w_q + w_u + w_g - 1.0) < 1e-9;
  }
};

struct UtilizationSnapshot {
  double u_cpu_local = 0.0;
  double u_gpu_local = 0.0;
  double u_cpu_server = 0.0;
  double u_gpu_server = 0.0;
};

inline constexpr double kNormalizedCeiling = 10.0;

// backlog / (rate * slot). A zero rate with pending work saturates at the
// ceiling; an empty queue is always 0.
inline double normalize_queue(double backlog, double service_rate, double slot_s,
                              Diagnostics* diag = nullptr, double ceiling = kNormalizedCeiling) {
  if (backlog <= 0.0) return 0.0;
  if (service_rate <= 0.0 || slot_s <= 0.0) {
    note(diag, "normalize_queue: zero service rate with pending backlog, saturated");
    return ceiling;
  }
  return backlog / (service_rate * slot_s);
}

inline double load_metric(const std::array<double, kQueueDims>& qhat, const UtilizationSnapshot& u,
                          const LoadWeights& w = {}) {
  double queue_term = 0.0;
  for (double q : qhat) queue_term += std::tanh(std::max(0.0, q));
  const double u_cpu = 0.5 * (clamp01(u.u_cpu_local) + clamp01(u.u_cpu_server));
  const double u_gpu = 0.5 * (clamp01(u.u_gpu_local) + clamp01(u.u_gpu_server));
  return std::clamp(w.w_q / kQueueDims * queue_term + w.w_u * u_cpu + w.w_g * u_gpu, 0.0, 1.0);
}

// Deadline priority: (b/b_max) * max(0, slack/D_est) * best_rho.
inline double priority_score(const Task& task, double now_s, double d_est_s, double best_rho,
                             int b_max = kMaxPriority) {
  if (d_est_s <= 0.0) d_est_s = std::numeric_limits<double>::min();
  const double slack = task.deadline_s - now_s;
  return (static_cast<double>(task.priority) / b_max) * std::max(0.0, slack / d_est_s) * best_rho;
}

// What the estimator needs to know about a prospective execution target.
struct TargetView {
  double cpu_hz = 0.0;
  double gpu_flops = 0.0;
  double tx_bps = 0.0;  // 0 for local execution (no transfer stage)
  bool remote = false;
  double cpu_backlog_cycles = 0.0;
  double gpu_backlog_flops = 0.0;
  double tx_backlog_bits = 0.0;
  bool gpu_capable = true;  // task's GPU demand fits this target
};

struct TimeEstimate {
  bool feasible = true;
  double exec_s = 0.0;      // compute stages on the target
  double transfer_s = 0.0;  // uplink stage, 0 for local
  double wait_s = 0.0;      // work queued ahead, per stage

  [[nodiscard]] double service_s() const noexcept { return exec_s + transfer_s; }
  [[nodiscard]] double total_s() const noexcept { return exec_s + transfer_s + wait_s; }
};

// Current-rate estimate of processing and waiting time for `task` on `target`.
inline TimeEstimate estimate_times(const Task& task, const TargetView& target) {
  TimeEstimate est;
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (!target.gpu_capable && task.needs_gpu()) {
    est.feasible = false;
  }
  if (target.cpu_hz <= 0.0) {
    est.feasible = false;
    est.exec_s = inf;
  } else {
    est.exec_s = task.cpu_cycles() / target.cpu_hz;
    est.wait_s += target.cpu_backlog_cycles / target.cpu_hz;
  }
  if (task.needs_gpu()) {
    if (target.gpu_flops <= 0.0) {
      est.feasible = false;
      est.exec_s = inf;
    } else {
      est.exec_s += task.gpu_load_flops / target.gpu_flops;
      est.wait_s += target.gpu_backlog_flops / target.gpu_flops;
    }
  }
  if (target.remote) {
    if (target.tx_bps <= 0.0) {
      est.feasible = false;
      est.transfer_s = inf;
    } else {
      est.transfer_s = task.size_bits / target.tx_bps;
      est.wait_s += target.tx_backlog_bits / target.tx_bps;
    }
  }
  return est;
}

// 1 when no target is acceptably compatible or the remaining slack is
// shorter than the estimated processing time.
inline int failure_risk(const Task& task, double now_s, double best_rho, double d_est_s,
                        double theta_min) {
  return (best_rho < theta_min || (task.deadline_s - now_s) < d_est_s) ? 1 : 0;
}

enum class DequeueMode { DeadlinePriority, Fcfs };

// A task waiting at one stage of its execution pipeline.
struct QueuedTask {
  Task task;
  double remaining = 0.0;   // work left at this stage, native units
  double ready_s = 0.0;     // earliest time the stage may start on it
  std::uint64_t arrival_seq = 0;
  double best_rho = 1.0;
  int target = 0;  // 0 local, k > 0 server k-1
  double energy_j = 0.0;
  double stage_start_s = 0.0;
  bool in_service = false;  // started in an earlier slot; resumes first
  std::array<double, kQueueDims> wait_s{};
  std::array<double, kQueueDims> service_s{};
};

// Orders tasks for service. DeadlinePriority sorts by descending score with
// ties broken by creation time then id; Fcfs sorts by queue arrival order.
template <typename ScoreFn>
std::vector<std::size_t> dequeue_order(const std::vector<QueuedTask>& queue, DequeueMode mode,
                                       ScoreFn&& score) {
  std::vector<std::size_t> idx(queue.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (mode == DequeueMode::Fcfs) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (queue[a].arrival_seq != queue[b].arrival_seq)
        return queue[a].arrival_seq < queue[b].arrival_seq;
      return queue[a].task.id < queue[b].task.id;
    });
    return idx;
  }
  std::vector<double> scores(queue.size());
  for (std::size_t i = 0; i < queue.size(); ++i) scores[i] = score(queue[i]);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (queue[a].task.created_s != queue[b].task.created_s)
      return queue[a].task.created_s < queue[b].task.created_s;
    return queue[a].task.id < queue[b].task.id;
  });
  return idx;
}

inline double backlog_of(const std::vector<QueuedTask>& queue) {
  double sum = 0.0;
  for (const auto& q : queue) sum += q.remaining;
  return sum;
}

struct ServiceStats {
  double busy_s = 0.0;
  double served = 0.0;  // work units removed by processing
};

// Serves one queue as a single non-preemptive server over [start, end).
// Among tasks that are ready, the dequeue order picks the next one; tasks
// whose deadline passes are dropped. Callbacks:
//   rate(q) -> work units per second (<= 0 stalls the task)
//   progress(q, t0, t1) while q is in service
//   finish(q, t) / drop(q, t) when q leaves the queue.
template <typename RateFn, typename ScoreFn, typename ProgressFn, typename FinishFn,
          typename DropFn>
ServiceStats serve_queue(std::vector<QueuedTask>& queue, double start, double end,
                         DequeueMode mode, RateFn&& rate, ScoreFn&& score, ProgressFn&& progress,
                         FinishFn&& finish, DropFn&& drop) {
  ServiceStats stats;
  double cursor = start;
  constexpr double inf = std::numeric_limits<double>::infinity();
  while (!queue.empty()) {
    // Drop expired tasks first.
    for (std::size_t i = 0; i < queue.size();) {
      if (queue[i].task.deadline_s <= cursor) {
        QueuedTask q = std::move(queue[i]);
        queue.erase(queue.begin() + static_cast<std::ptrdiff_t>(i));
        drop(q, std::max(q.task.deadline_s, q.ready_s));
      } else {
        ++i;
      }
    }
    if (queue.empty() || cursor >= end) break;

    std::vector<QueuedTask> ready;
    std::vector<std::size_t> ready_pos;
    double next_event = inf;
    for (std::size_t i = 0; i < queue.size(); ++i) {
      const bool runnable = rate(queue[i]) > 0.0;
      if (runnable && queue[i].ready_s <= cursor) {
        ready.push_back(queue[i]);
        ready_pos.push_back(i);
      } else {
        if (runnable) next_event = std::min(next_event, queue[i].ready_s);
        next_event = std::min(next_event, queue[i].task.deadline_s);
      }
    }
    if (ready.empty()) {
      if (next_event >= end) break;
      cursor = next_event;
      continue;
    }
    // A task cut off by the previous slot boundary keeps the server.
    std::size_t pick = ready.size();
    for (std::size_t i = 0; i < ready.size(); ++i)
      if (ready[i].in_service) pick = i;
    if (pick == ready.size()) {
      // dequeue_order sees the clock at `cursor` through the score callback.
      pick = dequeue_order(ready, mode, [&](const QueuedTask& q) { return score(q, cursor); }).front();
    }
    const std::size_t pos = ready_pos[pick];
    QueuedTask& job = queue[pos];
    const double r = rate(job);
    const double finish_at = cursor + job.remaining / r;
    const double stop = std::min({finish_at, job.task.deadline_s, end});
    progress(job, cursor, stop);
    stats.busy_s += stop - cursor;
    if (finish_at <= job.task.deadline_s && finish_at <= end) {
      stats.served += job.remaining;
      job.remaining = 0.0;
      QueuedTask done = std::move(job);
      queue.erase(queue.begin() + static_cast<std::ptrdiff_t>(pos));
      finish(done, finish_at);
      cursor = finish_at;
    } else {
      const double work = r * (stop - cursor);
      stats.served += work;
      job.remaining = std::max(0.0, job.remaining - work);
      cursor = stop;
      if (stop >= job.task.deadline_s) {
        QueuedTask dead = std::move(job);
        queue.erase(queue.begin() + static_cast<std::ptrdiff_t>(pos));
        drop(dead, stop);
      } else {
        job.in_service = true;
        break;  // slot exhausted
      }
    }
  }
  return stats;
}

}  // namespace hirl

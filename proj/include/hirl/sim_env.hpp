#pragma once

// Simulated mobile-edge environment: hardware envelopes, wireless channel,
// device mobility and the stochastic task workload.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hirl/common.hpp"

namespace hirl {

struct GpuSpec {
  std::string name;
  double clock_hz = 0.0;
  double cuda_cores = 0.0;
  double memory_bytes = 0.0;
  double bandwidth_bytes_per_s = 0.0;
  double power_w = 0.0;

  [[nodiscard]] bool valid() const noexcept {
    return clock_hz > 0 && cuda_cores > 0 && memory_bytes > 0 && bandwidth_bytes_per_s > 0 &&
           power_w > 0;
  }
};

inline constexpr double kGB = 1e9;

// Server presets carry the published core/memory/bandwidth/power figures;
// clocks are the vendor boost clocks.
// Device presets span the GTX 1660 .. RTX 4090 range; the two middle cards
// fill in the range so desk-scale device pools stay heterogeneous.
inline std::optional<GpuSpec> gpu_preset(std::string_view name) {
  static const std::array<GpuSpec, 8> presets{{
      {"P100", 1.480e9, 3584, 16 * kGB, 732 * kGB, 250},
      {"V100", 1.530e9, 5120, 32 * kGB, 900 * kGB, 300},
      {"A100", 1.410e9, 6912, 80 * kGB, 1555 * kGB, 400},
      {"H100", 1.980e9, 14592, 80 * kGB, 3000 * kGB, 700},
      {"GTX1660", 1.785e9, 1408, 6 * kGB, 192 * kGB, 120},
      {"RTX3060", 1.777e9, 3584, 12 * kGB, 360 * kGB, 170},
      {"RTX3080", 1.710e9, 8704, 10 * kGB, 760 * kGB, 320},
      {"RTX4090", 2.520e9, 16384, 32 * kGB, 1008 * kGB, 450},
  }};
  for (const auto& p : presets) {
    if (p.name == name) return p;
  }
  return std::nullopt;
}

enum class TaskKind : int { CpuIntensive = 0, GpuIntensive = 1, IoIntensive = 2 };

inline constexpr int kTaskKinds = 3;

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::CpuIntensive: return "cpu";
    case TaskKind::GpuIntensive: return "gpu";
    case TaskKind::IoIntensive: return "io";
  }
  return "?";
}

inline constexpr int kMaxPriority = 4;

struct Task {
  std::uint64_t id = 0;
  TaskKind kind = TaskKind::CpuIntensive;
  int priority = 1;
  double size_bits = 0.0;
  double cycles_per_bit = 0.0;
  double deadline_s = 0.0;  // absolute, seconds since episode start
  double cores = 0.0;
  double mem_bytes = 0.0;
  double gpu_load_flops = 0.0;
  double created_s = 0.0;
  int origin_device = 0;

  [[nodiscard]] double cpu_cycles() const noexcept { return size_bits * cycles_per_bit; }
  [[nodiscard]] double size_bytes() const noexcept { return size_bits / 8.0; }
  [[nodiscard]] bool needs_gpu() const noexcept { return gpu_load_flops > 0.0; }

  [[nodiscard]] bool valid() const noexcept {
    const bool gpu_zero = cores == 0 && mem_bytes == 0 && gpu_load_flops == 0;
    return size_bits > 0 && deadline_s > created_s && priority >= 1 &&
           priority <= kMaxPriority && (kind == TaskKind::GpuIntensive || gpu_zero);
  }
};

struct ChannelParams {
  double g0 = 1e-3;
  double d0_m = 1.0;
  double bandwidth_hz = 1e7;
  double noise_w = 1e-13;
};

struct MobilityBounds {
  double min_m = 100.0;
  double max_m = 10000.0;
};

struct DeviceState {
  int id = 0;
  double cpu_f_max_hz = 0.0;
  double p_max_w = 0.0;
  double mem_bytes = 0.0;
  GpuSpec gpu;
  double mobility_step_m = 10.0;
  std::vector<double> distance_m;      // per server
  std::vector<double> pathloss_gamma;  // per server, fixed per link
  double cpu_f_now_hz = 0.0;
  double p_now_w = 0.0;
};

struct ServerState {
  int id = 0;
  double cpu_f_hz = 0.0;
  double mem_bytes = 0.0;
  GpuSpec gpu;
};

// G0 * (d0/d)^gamma. Distances below d0 are clamped to d0.
inline double channel_gain(const ChannelParams& params, double distance_m, double gamma,
                           Diagnostics* diag = nullptr) {
  if (distance_m < params.d0_m) {
    note(diag, "channel_gain: distance " + std::to_string(distance_m) + " m below d0, clamped");
    distance_m = params.d0_m;
  }
  return params.g0 * std::pow(params.d0_m / distance_m, gamma);
}

// Single-link Shannon capacity B*log2(1 + p*g/N0), bits per second.
inline double transmission_rate(const ChannelParams& params, double p_w, double gain) {
  if (p_w <= 0.0 || gain <= 0.0) return 0.0;
  return params.bandwidth_hz * std::log2(1.0 + p_w * gain / params.noise_w);
}

// Folds x back into [lo, hi] by mirror reflection at the bounds.
inline double reflect_into(double x, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double y = std::fmod(x - lo, 2.0 * span);
  if (y < 0) y += 2.0 * span;
  return y <= span ? lo + y : hi - (y - span);
}

// Bounded random walk: every per-server distance moves by U(-step, +step).
inline void step_mobility(DeviceState& device, Rng& rng, const MobilityBounds& bounds = {}) {
  std::uniform_real_distribution<double> step(-device.mobility_step_m, device.mobility_step_m);
  for (double& d : device.distance_m) {
    d = reflect_into(d + step(rng), bounds.min_m, bounds.max_m);
  }
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  [[nodiscard]] bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

// Per-kind attribute ranges. Sizes are configured in bytes and converted to
// bits when tasks are drawn.
struct WorkloadRanges {
  std::array<double, 3> kind_weights{0.5, 0.4, 0.1};
  Range cpu_size_bytes{64e3, 262e3};
  Range cpu_cycles_per_bit{500, 2000};
  Range gpu_size_bytes{6.4e3, 26.2e3};
  Range gpu_cycles_per_bit{500, 2000};
  Range gpu_cores{5120, 14592};
  Range gpu_mem_bytes{2 * kGB, 16 * kGB};
  Range gpu_load_flops{1e10, 1e11};
  Range io_size_bytes{640, 2.6e3};
  Range io_cycles_per_bit{10, 100};
  Range compute_deadline_s{1.0, 1.5};
  Range io_deadline_s{0.5, 1.0};
  int generation_slots = 5;
};

// Emits exactly `rate_per_slot` tasks for slots inside the generation window
// and nothing afterwards. Ids are assigned from `next_id`.
inline std::vector<Task> generate_tasks(int rate_per_slot, int slot_t, double slot_s,
                                        int num_devices, const WorkloadRanges& ranges,
                                        std::uint64_t& next_id, Rng& rng) {
  std::vector<Task> out;
  if (slot_t >= ranges.generation_slots || rate_per_slot <= 0 || num_devices <= 0) return out;
  out.reserve(static_cast<std::size_t>(rate_per_slot));
  std::discrete_distribution<int> kind_dist(ranges.kind_weights.begin(), ranges.kind_weights.end());
  const double now = slot_t * slot_s;
  for (int i = 0; i < rate_per_slot; ++i) {
    Task t;
    t.id = next_id++;
    t.kind = static_cast<TaskKind>(kind_dist(rng));
    t.priority = static_cast<int>(uniform_int(rng, 1, kMaxPriority));
    t.created_s = now;
    t.origin_device = static_cast<int>(uniform_int(rng, 0, num_devices - 1));
    switch (t.kind) {
      case TaskKind::CpuIntensive:
        t.size_bits = 8.0 * uniform(rng, ranges.cpu_size_bytes.lo, ranges.cpu_size_bytes.hi);
        t.cycles_per_bit = uniform(rng, ranges.cpu_cycles_per_bit.lo, ranges.cpu_cycles_per_bit.hi);
        t.deadline_s = now + uniform(rng, ranges.compute_deadline_s.lo, ranges.compute_deadline_s.hi);
        break;
      case TaskKind::GpuIntensive:
        t.size_bits = 8.0 * uniform(rng, ranges.gpu_size_bytes.lo, ranges.gpu_size_bytes.hi);
        t.cycles_per_bit = uniform(rng, ranges.gpu_cycles_per_bit.lo, ranges.gpu_cycles_per_bit.hi);
        t.cores = static_cast<double>(uniform_int(rng, static_cast<long>(ranges.gpu_cores.lo),
                                                  static_cast<long>(ranges.gpu_cores.hi)));
        t.mem_bytes = uniform(rng, ranges.gpu_mem_bytes.lo, ranges.gpu_mem_bytes.hi);
        t.gpu_load_flops = uniform(rng, ranges.gpu_load_flops.lo, ranges.gpu_load_flops.hi);
        t.deadline_s = now + uniform(rng, ranges.compute_deadline_s.lo, ranges.compute_deadline_s.hi);
        break;
      case TaskKind::IoIntensive:
        t.size_bits = 8.0 * uniform(rng, ranges.io_size_bytes.lo, ranges.io_size_bytes.hi);
        t.cycles_per_bit = uniform(rng, ranges.io_cycles_per_bit.lo, ranges.io_cycles_per_bit.hi);
        t.deadline_s = now + uniform(rng, ranges.io_deadline_s.lo, ranges.io_deadline_s.hi);
        break;
    }
    out.push_back(t);
  }
  return out;
}

struct TopologyParams {
  int devices = 8;
  int servers = 3;
  std::vector<std::string> server_gpus{"V100", "A100", "H100"};
  std::vector<std::string> device_gpus{"GTX1660", "RTX3060", "RTX3080", "RTX4090"};
  Range device_cpu_hz{2e9, 3e9};
  Range device_p_max_w{2.0, 3.0};
  Range device_mem_bytes{8 * kGB, 16 * kGB};
  Range server_cpu_hz{50e9, 60e9};
  std::vector<double> server_mem_choices{64 * kGB, 128 * kGB, 256 * kGB, 512 * kGB, 1024 * kGB};
  Range initial_distance_m{1500, 7500};
  Range pathloss_gamma{1.6, 3.5};
  std::array<double, 2> mobility_steps{10.0, 20.0};
};

struct Topology {
  std::vector<DeviceState> devices;
  std::vector<ServerState> servers;
};

inline GpuSpec require_gpu(const std::string& name) {
  auto spec = gpu_preset(name);
  if (!spec) throw std::invalid_argument("unknown GPU preset '" + name + "'");
  return *spec;
}

// Draws capability envelopes and link exponents once per seed. Distances are
// drawn here too but the coordinator re-draws them per episode.
inline Topology build_topology(const TopologyParams& p, Rng& rng) {
  if (p.devices < 1 || p.servers < 0) throw std::invalid_argument("topology needs >= 1 device");
  if (p.servers > 0 && p.server_gpus.empty()) throw std::invalid_argument("no server GPU presets");
  if (p.device_gpus.empty()) throw std::invalid_argument("no device GPU presets");
  Topology topo;
  for (int k = 0; k < p.servers; ++k) {
    ServerState s;
    s.id = k;
    s.cpu_f_hz = uniform(rng, p.server_cpu_hz.lo, p.server_cpu_hz.hi);
    s.mem_bytes = p.server_mem_choices[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<long>(p.server_mem_choices.size()) - 1))];
    s.gpu = require_gpu(p.server_gpus[static_cast<std::size_t>(k) % p.server_gpus.size()]);
    topo.servers.push_back(std::move(s));
  }
  for (int j = 0; j < p.devices; ++j) {
    DeviceState d;
    d.id = j;
    d.cpu_f_max_hz = uniform(rng, p.device_cpu_hz.lo, p.device_cpu_hz.hi);
    d.p_max_w = uniform(rng, p.device_p_max_w.lo, p.device_p_max_w.hi);
    d.mem_bytes = uniform(rng, p.device_mem_bytes.lo, p.device_mem_bytes.hi);
    d.gpu = require_gpu(p.device_gpus[static_cast<std::size_t>(j) % p.device_gpus.size()]);
    d.mobility_step_m = p.mobility_steps[static_cast<std::size_t>(uniform_int(rng, 0, 1))];
    for (int k = 0; k < p.servers; ++k) {
      d.distance_m.push_back(uniform(rng, p.initial_distance_m.lo, p.initial_distance_m.hi));
      d.pathloss_gamma.push_back(uniform(rng, p.pathloss_gamma.lo, p.pathloss_gamma.hi));
    }
    d.cpu_f_now_hz = d.cpu_f_max_hz;
    d.p_now_w = d.p_max_w;
    topo.devices.push_back(std::move(d));
  }
  return topo;
}

}  // namespace hirl

#include <gtest/gtest.h>

#include "hirl/coordinator.hpp"

using namespace hirl;

namespace {

ScenarioConfig small_scenario() {
  ScenarioConfig sc;
  sc.topology.devices = 3;
  sc.topology.servers = 2;
  sc.topology.server_gpus = {"A100", "H100"};
  sc.horizon = 40;
  return sc;
}

LearningConfig small_learning() {
  LearningConfig lc;
  lc.td3.hidden = lc.ddqn.hidden = {16, 16};
  lc.td3.batch = lc.ddqn.batch = 32;
  lc.td3.buffer = 2000;
  lc.ddqn.buffer = 5000;
  return lc;
}

RunSpec spec(PolicyKind alg, int rate, std::uint64_t seed = 1, Ablations ab = {}) {
  RunSpec r;
  r.algorithm = alg;
  r.rate = rate;
  r.seed = seed;
  r.ablations = ab;
  return r;
}

// One device, no servers, identical small CPU tasks with deadlines far away.
ScenarioConfig local_fixture() {
  ScenarioConfig sc;
  sc.topology.devices = 1;
  sc.topology.servers = 0;
  sc.topology.device_cpu_hz = {2e9, 2e9};
  sc.workload.kind_weights = {1.0, 0.0, 0.0};
  sc.workload.cpu_size_bytes = {1e4, 1e4};
  sc.workload.cpu_cycles_per_bit = {100, 100};
  sc.workload.compute_deadline_s = {100, 100};
  sc.horizon = 20;
  return sc;
}

void expect_conserved(const EpisodeMetrics& m) {
  EXPECT_EQ(m.generated, m.completed + m.failed);
  int g = 0, c = 0;
  for (const auto& k : m.kinds) {
    g += k.generated;
    c += k.completed;
  }
  EXPECT_EQ(g, m.generated);
  EXPECT_EQ(c, m.completed);
}

}  // namespace

TEST(Episode, EmptyWorkloadConvention) {
  for (auto alg : {PolicyKind::Hirl, PolicyKind::Random}) {
    Simulation sim(small_scenario(), small_learning(), spec(alg, 0));
    const auto m = sim.run_episode(0, true);
    EXPECT_EQ(m.generated, 0);
    EXPECT_EQ(m.completion_rate, 1.0);
    EXPECT_EQ(m.cumulative_latency_s, 0.0);
    EXPECT_EQ(m.energy_j, 0.0);  // an idle CPU draws nothing
    EXPECT_EQ(m.slots, small_scenario().workload.generation_slots);
  }
}

// Hand timeline: two tasks of 8e6 cycles arrive per slot at f = 2 GHz, so
// each slot finishes them after 0.004 s and 0.008 s. Five slots give ten
// tasks, 0.06 s of summed latency and 10 * kappa f^2 * 8e6 J.
TEST(Episode, LooseLocalFixtureMatchesHandTimeline) {
  Simulation sim(local_fixture(), small_learning(), spec(PolicyKind::GreedyLocal, 2));
  const auto m = sim.run_episode(0, false);
  EXPECT_EQ(m.generated, 10);
  EXPECT_EQ(m.completion_rate, 1.0);
  EXPECT_NEAR(m.cumulative_latency_s, 0.06, 1e-12);
  EXPECT_NEAR(m.energy_j, 10 * 1e-28 * 4e18 * 8e6, 1e-15);
  EXPECT_EQ(m.slots, 5);
  expect_conserved(m);
}

TEST(Episode, HorizonExhaustionCountsFailures) {
  auto sc = local_fixture();
  sc.workload.cpu_cycles_per_bit = {1e6, 1e6};  // 8e10 cycles, 40 s each
  sc.horizon = 6;
  Simulation sim(sc, small_learning(), spec(PolicyKind::GreedyLocal, 1));
  const auto m = sim.run_episode(0, false);
  EXPECT_EQ(m.generated, 5);
  EXPECT_EQ(m.completed, 0);
  EXPECT_EQ(m.failed, 5);
  EXPECT_EQ(m.slots, 6);
  EXPECT_EQ(m.completion_rate, 0.0);
}

TEST(Episode, TasksAreConservedForEveryPolicy) {
  for (auto alg : {PolicyKind::Hirl, PolicyKind::SingleDdqn, PolicyKind::Random, PolicyKind::GreedyLocal,
                   PolicyKind::GreedyOffload, PolicyKind::RoundRobin, PolicyKind::Qpso}) {
    Simulation sim(small_scenario(), small_learning(), spec(alg, 8));
    for (int ep = 0; ep < 3; ++ep) {
      const auto m = sim.run_episode(ep, ep < 2);
      EXPECT_EQ(m.generated, 40) << to_string(alg);
      expect_conserved(m);
      EXPECT_GE(m.energy_j, 0.0);
      EXPECT_NEAR(m.energy_j, m.device_energy_j + m.server_energy_j, 1e-9 * std::max(1.0, m.energy_j));
    }
  }
}

TEST(Episode, MaskingSafetyHoldsWhileLearning) {
  auto sc = small_scenario();
  sc.workload.kind_weights = {0.2, 0.7, 0.1};
  sc.workload.gpu_cores = {5000, 14592};
  for (auto alg : {PolicyKind::Hirl, PolicyKind::SingleDdqn}) {
    Simulation sim(sc, small_learning(), spec(alg, 16, 3));
    int violations = 0;
    for (int ep = 0; ep < 6; ++ep) {
      sim.run_episode(ep, true, [&](const SlotRecord& r) {
        for (const auto& d : r.decisions) violations += d.mask_violation ? 1 : 0;
      });
    }
    EXPECT_EQ(violations, 0) << to_string(alg);
  }
}

TEST(Episode, SameSeedSameTrace) {
  auto run = [] {
    Simulation sim(small_scenario(), small_learning(), spec(PolicyKind::Hirl, 8, 7));
    std::vector<double> out;
    for (int ep = 0; ep < 4; ++ep) {
      const auto m = sim.run_episode(ep, ep < 3);
      out.insert(out.end(), {m.completion_rate, m.cumulative_latency_s, m.energy_j, m.mean_load});
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(SingleDdqn, PowerStaysAtCaps) {
  Simulation sim(small_scenario(), small_learning(), spec(PolicyKind::SingleDdqn, 8));
  const auto& topo = sim.topology();
  sim.run_episode(0, true, [&](const SlotRecord& r) {
    for (std::size_t j = 0; j < topo.devices.size(); ++j) {
      EXPECT_EQ(r.f_hz[j], topo.devices[j].cpu_f_max_hz);
      EXPECT_EQ(r.p_w[j], topo.devices[j].p_max_w);
    }
  });
  EXPECT_EQ(sim.td3(), nullptr);
}

// With the power tier pinned to the caps, the full orchestrator's allocation
// tier is the single-agent baseline.
TEST(SingleDdqn, EqualsPinnedHirlOnCpuOnlyFixture) {
  auto sc = small_scenario();
  sc.workload.kind_weights = {0.9, 0.0, 0.1};
  auto pinned = small_learning();
  pinned.pin_power = true;
  Simulation a(sc, pinned, spec(PolicyKind::Hirl, 8, 4));
  Simulation b(sc, small_learning(), spec(PolicyKind::SingleDdqn, 8, 4));
  for (int ep = 0; ep < 4; ++ep) {
    std::vector<int> acts_a, acts_b;
    const auto ma = a.run_episode(ep, ep < 3, [&](const SlotRecord& r) {
      for (const auto& d : r.decisions) acts_a.push_back(d.action);
    });
    const auto mb = b.run_episode(ep, ep < 3, [&](const SlotRecord& r) {
      for (const auto& d : r.decisions) acts_b.push_back(d.action);
    });
    EXPECT_EQ(acts_a, acts_b);
    EXPECT_EQ(ma.energy_j, mb.energy_j);
    EXPECT_EQ(ma.cumulative_latency_s, mb.cumulative_latency_s);
  }
}

TEST(Hirl, PowerActionsWithinCaps) {
  Simulation sim(small_scenario(), small_learning(), spec(PolicyKind::Hirl, 16));
  const auto& topo = sim.topology();
  for (int ep = 0; ep < 3; ++ep) {
    sim.run_episode(ep, true, [&](const SlotRecord& r) {
      for (std::size_t j = 0; j < topo.devices.size(); ++j) {
        EXPECT_GE(r.f_hz[j], 0.0);
        EXPECT_LE(r.f_hz[j], topo.devices[j].cpu_f_max_hz);
        EXPECT_GE(r.p_w[j], 0.0);
        EXPECT_LE(r.p_w[j], topo.devices[j].p_max_w);
      }
    });
  }
}

TEST(Ablation, NoCoordSeesPreviousSlotRates) {
  Ablations ab;
  ab.no_coord = true;
  for (bool coord : {true, false}) {
    Simulation sim(small_scenario(), small_learning(), spec(PolicyKind::Hirl, 8, 2, coord ? Ablations{} : ab));
    std::vector<std::vector<double>> prev;
    int checked = 0, differs = 0;
    sim.run_episode(0, true, [&](const SlotRecord& r) {
      for (const auto& d : r.decisions) {
        const auto& now = r.rates_bps[static_cast<std::size_t>(d.device)];
        if (coord) {
          EXPECT_EQ(d.seen_rates, now);
        } else if (r.slot > 0) {
          EXPECT_EQ(d.seen_rates, prev[static_cast<std::size_t>(d.device)]);
          differs += d.seen_rates != now ? 1 : 0;
        }
        ++checked;
      }
      prev = r.rates_bps;
    });
    EXPECT_GT(checked, 0);
    if (!coord) EXPECT_GT(differs, 0);
  }
}

// GPU demand above every device GPU and below only the H100: the mask keeps
// tasks off the other targets unless the ablation removes it, and tasks sent
// to an incompatible target fail.
TEST(Ablation, NoGpuDispatchesIncompatibleTasksThatFail) {
  auto sc = small_scenario();
  sc.topology.servers = 3;
  sc.topology.server_gpus = {"V100", "A100", "H100"};
  sc.topology.device_gpus = {"GTX1660"};
  sc.workload.kind_weights = {0.0, 1.0, 0.0};
  sc.workload.gpu_cores = {10000, 14592};
  for (bool ablate : {false, true}) {
    Ablations ab;
    ab.no_gpu = ablate;
    Simulation sim(sc, small_learning(), spec(PolicyKind::Hirl, 8, 5, ab));
    int violations = 0, failed = 0;
    for (int ep = 0; ep < 3; ++ep) {
      const auto m = sim.run_episode(ep, true);
      violations += m.mask_violations;
      failed += m.failed;
    }
    if (ablate) {
      EXPECT_GT(violations, 0);
      EXPECT_GE(failed, violations);
    } else {
      EXPECT_EQ(violations, 0);
    }
  }
}

TEST(Ablation, NoFailureSwitchesReplayToUniform) {
  Ablations ab;
  ab.no_failure = true;
  Simulation sim(small_scenario(), small_learning(), spec(PolicyKind::Hirl, 8, 1, ab));
  EXPECT_EQ(sim.ddqn()->replay().mode(), ReplayMode::Uniform);
  EXPECT_EQ(sim.td3()->replay().mode(), ReplayMode::Uniform);
  Simulation full(small_scenario(), small_learning(), spec(PolicyKind::Hirl, 8, 1));
  EXPECT_EQ(full.ddqn()->replay().mode(), ReplayMode::Prioritized);
}

TEST(Ablation, NoDeadlineRunsAndConserves) {
  Ablations ab;
  ab.no_deadline = true;
  Simulation sim(small_scenario(), small_learning(), spec(PolicyKind::Hirl, 16, 1, ab));
  for (int ep = 0; ep < 2; ++ep) expect_conserved(sim.run_episode(ep, true));
}

TEST(Ablation, ParseNames) {
  const auto a = parse_ablations("nocoord+nogpu");
  EXPECT_TRUE(a.no_coord);
  EXPECT_TRUE(a.no_gpu);
  EXPECT_FALSE(a.no_deadline);
  EXPECT_THROW(parse_ablations("nothing"), std::invalid_argument);
}

TEST(AllocState, TemporalOffUsesBaseLength) {
  auto lc = small_learning();
  lc.temporal_state = false;
  Simulation off(small_scenario(), lc, spec(PolicyKind::Hirl, 4));
  EXPECT_EQ(off.alloc_dim(), alloc_base_dim(2));
  EXPECT_EQ(off.ddqn()->state_dim(), alloc_base_dim(2));
  Simulation on(small_scenario(), small_learning(), spec(PolicyKind::Hirl, 4));
  EXPECT_EQ(on.alloc_dim(), 3 * alloc_base_dim(2));
}

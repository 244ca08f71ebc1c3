#include <gtest/gtest.h>

#include "hirl/queueing.hpp"

using namespace hirl;

namespace {

QueuedTask queued(std::uint64_t id, double created, double deadline, double work, std::uint64_t seq = 0) {
  QueuedTask q;
  q.task.id = id;
  q.task.created_s = created;
  q.task.deadline_s = deadline;
  q.task.size_bits = 1;
  q.remaining = work;
  q.arrival_seq = seq;
  return q;
}

}  // namespace

TEST(Normalize, ZeroRateFlagsDiagnostic) {
  Diagnostics diag;
  EXPECT_EQ(normalize_queue(1.0, 0.0, 1.0, &diag), kNormalizedCeiling);
  EXPECT_EQ(diag.size(), 1u);
  EXPECT_GT(normalize_queue(2.1e9, 2e9, 1.0), 1.0);
  EXPECT_LE(normalize_queue(2e9, 2e9, 1.0), 1.0);
}

TEST(Load, BoundedAndMonotone) {
  Rng rng = make_rng({4});
  for (int trial = 0; trial < 2000; ++trial) {
    std::array<double, kQueueDims> q{};
    for (auto& x : q) x = uniform(rng, 0.0, 5.0);
    UtilizationSnapshot u{uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)};
    const double base = load_metric(q, u);
    ASSERT_GE(base, 0.0);
    ASSERT_LE(base, 1.0);
    for (int j = 0; j < kQueueDims; ++j) {
      auto q2 = q;
      q2[static_cast<std::size_t>(j)] += 0.3;
      ASSERT_GE(load_metric(q2, u), base);
    }
    auto u2 = u;
    u2.u_gpu_server = std::min(1.0, u2.u_gpu_server + 0.1);
    ASSERT_GE(load_metric(q, u2), base);
  }
}

TEST(Load, WeightsValidity) {
  EXPECT_TRUE(LoadWeights{}.valid());
  EXPECT_FALSE((LoadWeights{0.5, 0.2, 0.2}.valid()));
}

TEST(Estimate, InfeasibleGpuTarget) {
  Task t;
  t.size_bits = 1e6;
  t.cycles_per_bit = 100;
  t.gpu_load_flops = 1e10;
  t.kind = TaskKind::GpuIntensive;
  TargetView v{5e10, 1e13, 0, false, 0, 0, 0, false};
  EXPECT_FALSE(estimate_times(t, v).feasible);
  v.gpu_capable = true;
  const auto est = estimate_times(t, v);
  EXPECT_TRUE(est.feasible);
  EXPECT_NEAR(est.exec_s, 1e8 / 5e10 + 1e10 / 1e13, 1e-15);
}

TEST(Estimate, RemoteAddsTransfer) {
  Task t;
  t.size_bits = 1e6;
  t.cycles_per_bit = 1000;
  TargetView v{5e10, 0, 1e7, true, 0, 0, 2e6, true};
  const auto est = estimate_times(t, v);
  EXPECT_NEAR(est.transfer_s, 0.1, 1e-15);
  EXPECT_NEAR(est.wait_s, 0.2, 1e-15);
  EXPECT_NEAR(est.total_s(), 0.32, 1e-15);
}

TEST(Dequeue, EmptyQueue) {
  std::vector<QueuedTask> q;
  EXPECT_TRUE(dequeue_order(q, DequeueMode::DeadlinePriority, [](const QueuedTask&) { return 0.0; }).empty());
}

TEST(Dequeue, HigherScoreFirst) {
  std::vector<QueuedTask> q{queued(1, 0, 5, 1), queued(2, 0, 5, 1)};
  auto order = dequeue_order(q, DequeueMode::DeadlinePriority,
                             [](const QueuedTask& t) { return t.task.id == 1 ? 0.4 : 0.5; });
  EXPECT_EQ(order, (std::vector<std::size_t>{1, 0}));
}

TEST(Dequeue, TieBreakCreatedThenId) {
  std::vector<QueuedTask> q{queued(9, 2, 5, 1), queued(7, 1, 5, 1), queued(3, 1, 5, 1)};
  auto order = dequeue_order(q, DequeueMode::DeadlinePriority, [](const QueuedTask&) { return 1.0; });
  EXPECT_EQ(order, (std::vector<std::size_t>{2, 1, 0}));
}

TEST(Dequeue, FcfsIgnoresScores) {
  std::vector<QueuedTask> q{queued(1, 0, 5, 1, 2), queued(2, 0, 5, 1, 0), queued(3, 0, 5, 1, 1)};
  auto order = dequeue_order(q, DequeueMode::Fcfs, [](const QueuedTask& t) { return double(t.task.id); });
  EXPECT_EQ(order, (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Dequeue, TotalOrderIsStable) {
  Rng rng = make_rng({8});
  std::vector<QueuedTask> q;
  for (std::uint64_t i = 0; i < 50; ++i) q.push_back(queued(i, double(uniform_int(rng, 0, 3)), 9, 1));
  auto score = [](const QueuedTask& t) { return double(t.task.id % 4); };
  const auto a = dequeue_order(q, DequeueMode::DeadlinePriority, score);
  const auto b = dequeue_order(q, DequeueMode::DeadlinePriority, score);
  EXPECT_EQ(a, b);
}

TEST(Serve, ConservesWorkAndDropsExpired) {
  // rate 1 unit/s, slot [0, 1): task A (1.0 work, deadline 0.5) cannot
  // finish, task B (0.3 work, deadline 2) can.
  std::vector<QueuedTask> q{queued(1, 0, 0.5, 1.0), queued(2, 0, 2.0, 0.3)};
  std::vector<std::uint64_t> done, dropped;
  const double before = backlog_of(q);
  auto stats = serve_queue(
      q, 0.0, 1.0, DequeueMode::DeadlinePriority, [](const QueuedTask&) { return 1.0; },
      [](const QueuedTask& t, double) { return t.task.id == 1 ? 2.0 : 1.0; },
      [](QueuedTask&, double, double) {}, [&](QueuedTask& t, double) { done.push_back(t.task.id); },
      [&](QueuedTask& t, double) { dropped.push_back(t.task.id); });
  EXPECT_EQ(dropped, std::vector<std::uint64_t>{1});
  EXPECT_EQ(done, std::vector<std::uint64_t>{2});
  EXPECT_TRUE(q.empty());
  EXPECT_NEAR(stats.busy_s, 0.8, 1e-12);
  EXPECT_LE(stats.served, before);
}

TEST(Serve, NonPreemptiveAcrossSlots) {
  std::vector<QueuedTask> q{queued(1, 0, 10, 1.5)};
  int finished = 0;
  auto rate = [](const QueuedTask&) { return 1.0; };
  auto score = [](const QueuedTask&, double) { return 1.0; };
  auto noop = [](QueuedTask&, double, double) {};
  auto fin = [&](QueuedTask&, double t) {
    ++finished;
    EXPECT_NEAR(t, 1.5, 1e-12);
  };
  auto drop = [](QueuedTask&, double) { FAIL(); };
  serve_queue(q, 0.0, 1.0, DequeueMode::DeadlinePriority, rate, score, noop, fin, drop);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_NEAR(q[0].remaining, 0.5, 1e-12);
  EXPECT_TRUE(q[0].in_service);
  // A newly arrived high-score task waits for the one in service.
  q.push_back(queued(2, 1, 10, 0.1));
  q.back().ready_s = 1.0;
  std::vector<std::uint64_t> order;
  serve_queue(
      q, 1.0, 2.0, DequeueMode::DeadlinePriority, rate,
      [](const QueuedTask& t, double) { return t.task.id == 2 ? 9.0 : 1.0; }, noop,
      [&](QueuedTask& t, double) { order.push_back(t.task.id); }, drop);
  EXPECT_EQ(order, (std::vector<std::uint64_t>{1, 2}));
}

TEST(Serve, WaitsForReadyTime) {
  std::vector<QueuedTask> q{queued(1, 0, 10, 0.2)};
  q[0].ready_s = 0.6;
  double finish_at = -1;
  serve_queue(
      q, 0.0, 1.0, DequeueMode::Fcfs, [](const QueuedTask&) { return 1.0; },
      [](const QueuedTask&, double) { return 0.0; }, [](QueuedTask&, double, double) {},
      [&](QueuedTask&, double t) { finish_at = t; }, [](QueuedTask&, double) {});
  EXPECT_NEAR(finish_at, 0.8, 1e-12);
}

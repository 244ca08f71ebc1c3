#pragma once

// Lower tier: one shared double-DQN placing each task locally or on a server,
// with GPU-compatibility masking and load-adaptive exploration/step size.

#include <cmath>
#include <limits>
#include <vector>

#include "hirl/common.hpp"
#include "hirl/nn.hpp"
#include "hirl/replay.hpp"
#include "hirl/sim_env.hpp"

namespace hirl {

// Capacity dimensions checked by the compatibility score.
struct TargetCapacity {
  double cpu_mem_bytes = 0.0;
  double gpu_cores = 0.0;
  double gpu_mem_bytes = 0.0;
};

struct Compatibility {
  bool feasible = true;
  double rho = 1.0;
};

// Demand/capacity ratios over CPU memory (task bytes), CUDA cores and GPU
// memory; dimensions without demand are skipped. Feasible iff no ratio
// exceeds 1; rho is the smallest included ratio clipped to [0, 1].
inline Compatibility compatibility(const Task& task, const TargetCapacity& cap) {
  Compatibility c;
  double rho = std::numeric_limits<double>::infinity();
  bool any = false;
  auto include = [&](double demand, double capacity) {
    if (demand <= 0.0) return;
    any = true;
    if (capacity <= 0.0) {
      c.feasible = false;
      rho = 0.0;
      return;
    }
    const double ratio = demand / capacity;
    if (ratio > 1.0) c.feasible = false;
    rho = std::min(rho, ratio);
  };
  include(task.size_bytes(), cap.cpu_mem_bytes);
  include(task.cores, cap.gpu_cores);
  include(task.mem_bytes, cap.gpu_mem_bytes);
  c.rho = any ? clamp01(rho) : 1.0;
  return c;
}

struct DdqnConfig {
  std::vector<int> hidden{256, 256};
  double eps_min = 0.01;
  double eps_max = 0.3;
  double beta = 2.0;
  double eta_base = 1e-4;
  double alpha_lr = 0.5;
  std::uint64_t hard_update = 1000;
  double discount = 0.99;
  std::size_t batch = 256;
  std::size_t buffer = 600000;
  double gamma_fail = 1.5;
  ReplayMode replay_mode = ReplayMode::Prioritized;
};

inline double epsilon_for_load(const DdqnConfig& cfg, double load) {
  return cfg.eps_min + (cfg.eps_max - cfg.eps_min) * std::exp(-cfg.beta * load);
}

inline double learning_rate_for_load(const DdqnConfig& cfg, double load) {
  return cfg.eta_base * (1.0 + cfg.alpha_lr * load);
}

// Index of the largest value among allowed entries, lowest index on ties;
// -1 if nothing is allowed.
inline int masked_argmax(const Vec& q, const std::vector<bool>& mask) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(q.size()); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    if (best < 0 || q(i) > q(best)) best = i;
  }
  return best;
}

// Online net picks a' = argmax Q(s', .), target net scores it.
inline Vec ddqn_targets(const Mlp& online, const Mlp& target, const Mat& next_states,
                        const Vec& rewards, const Vec& terminal, double discount) {
  const Mat qo = online.forward(next_states);
  const Mat qt = target.forward(next_states);
  Vec y(rewards.size());
  for (Eigen::Index i = 0; i < rewards.size(); ++i) {
    Eigen::Index best = 0;
    qo.col(i).maxCoeff(&best);
    y(i) = rewards(i) + discount * (1.0 - terminal(i)) * qt(best, i);
  }
  return y;
}

struct AllocDecision {
  int action = 0;
  bool explored = false;
  bool no_feasible = false;  // nothing passed the mask; local chosen
};

class DdqnAgent {
 public:
  DdqnAgent() = default;
  DdqnAgent(const DdqnConfig& cfg, int state_dim, int num_actions, std::uint64_t seed)
      : cfg_(cfg),
        state_dim_(state_dim),
        num_actions_(num_actions),
        rng_(make_rng({seed, tag(Stream::AllocAgent)})),
        replay_(cfg.buffer, cfg.gamma_fail, cfg.replay_mode) {
    std::vector<int> sizes{state_dim};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(num_actions);
    online_ = Mlp(sizes, OutputActivation::Identity, rng_);
    target_ = online_;
    opt_ = Adam(online_, {cfg.eta_base});
  }

  [[nodiscard]] double epsilon(double load) const { return epsilon_for_load(cfg_, load); }
  [[nodiscard]] double learning_rate(double load) const { return learning_rate_for_load(cfg_, load); }

  // Epsilon-greedy over feasible actions. Both random draws happen on every
  // call so the generator advances identically regardless of the branch.
  AllocDecision act(const Vec& state, const std::vector<bool>& mask, double load, bool explore) {
    AllocDecision d;
    std::vector<int> feasible;
    for (int i = 0; i < num_actions_; ++i)
      if (mask[static_cast<std::size_t>(i)]) feasible.push_back(i);
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    const double pick = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    if (feasible.empty()) {
      d.action = 0;
      d.no_feasible = true;
      return d;
    }
    if (feasible.size() == 1) {
      d.action = feasible.front();
      return d;
    }
    if (explore && u < epsilon(load)) {
      const auto k = std::min(static_cast<std::size_t>(pick * static_cast<double>(feasible.size())),
                              feasible.size() - 1);
      d.action = feasible[k];
      d.explored = true;
      return d;
    }
    d.action = masked_argmax(online_.forward(state), mask);
    return d;
  }

  void remember(Experience e) {
    const double td = td_error(e);
    replay_.push(std::move(e), std::isfinite(td) ? td : -1.0);
  }

  [[nodiscard]] bool ready() const noexcept { return replay_.size() >= cfg_.batch; }

  // One regression step of Q(s, a) toward the double-Q target with step size
  // eta(load). Returns the batch MSE (NaN when rejected).
  double train_step(double load, Diagnostics* diag = nullptr) {
    const auto idx = replay_.sample(cfg_.batch, rng_);
    const auto n = static_cast<Eigen::Index>(idx.size());
    Mat s(state_dim_, n), s2(state_dim_, n);
    Vec r(n), term(n);
    std::vector<int> acts(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& e = replay_.at(idx[static_cast<std::size_t>(j)]);
      s.col(j) = e.state;
      s2.col(j) = e.next_state.size() == state_dim_ ? e.next_state : e.state;
      r(j) = e.reward;
      term(j) = e.terminal ? 1.0 : 0.0;
      acts[static_cast<std::size_t>(j)] = e.action_index;
    }
    const Vec y = ddqn_targets(online_, target_, s2, r, term, cfg_.discount);
    const auto cache = online_.forward_cached(s);
    Mat up = Mat::Zero(num_actions_, n);
    double loss = 0.0;
    std::vector<double> td(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
      const int a = acts[static_cast<std::size_t>(j)];
      const double err = cache.output(a, j) - y(j);
      loss += err * err;
      up(a, j) = 2.0 * err / static_cast<double>(n);
      td[static_cast<std::size_t>(j)] = std::abs(err);
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) {
      note(diag, "ddqn: non-finite loss, step rejected");
      return std::numeric_limits<double>::quiet_NaN();
    }
    opt_.set_lr(learning_rate(load));
    if (!opt_.step(online_, online_.backward(cache, up))) {
      note(diag, "ddqn: non-finite gradient, step rejected");
      return std::numeric_limits<double>::quiet_NaN();
    }
    for (Eigen::Index j = 0; j < n; ++j)
      replay_.update_priority(idx[static_cast<std::size_t>(j)], td[static_cast<std::size_t>(j)]);
    ++steps_;
    if (cfg_.hard_update > 0 && steps_ % cfg_.hard_update == 0) hard_copy(target_, online_);
    return loss;
  }

  [[nodiscard]] const DdqnConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] int state_dim() const noexcept { return state_dim_; }
  [[nodiscard]] int num_actions() const noexcept { return num_actions_; }
  [[nodiscard]] const Mlp& online() const noexcept { return online_; }
  [[nodiscard]] const Mlp& target() const noexcept { return target_; }
  [[nodiscard]] Mlp& online() noexcept { return online_; }
  [[nodiscard]] Mlp& target() noexcept { return target_; }
  [[nodiscard]] const ReplayBuffer& replay() const noexcept { return replay_; }
  [[nodiscard]] ReplayBuffer& replay() noexcept { return replay_; }
  [[nodiscard]] std::uint64_t steps() const noexcept { return steps_; }

 private:
  double td_error(const Experience& e) const {
    Mat s2 = e.next_state.size() == state_dim_ ? e.next_state : e.state;
    Vec r(1), t(1);
    r << e.reward;
    t << (e.terminal ? 1.0 : 0.0);
    const Vec y = ddqn_targets(online_, target_, s2, r, t, cfg_.discount);
    return std::abs(online_.forward(e.state)(e.action_index) - y(0));
  }

  DdqnConfig cfg_;
  int state_dim_ = 0;
  int num_actions_ = 1;
  Rng rng_;
  ReplayBuffer replay_;
  Mlp online_, target_;
  Adam opt_;
  std::uint64_t steps_ = 0;
};

}  // namespace hirl

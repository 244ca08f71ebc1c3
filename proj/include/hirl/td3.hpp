#pragma once

// Upper tier: one shared TD3 policy choosing (CPU frequency, transmit power)
// for every device from a normalized 8-dimensional state.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "hirl/common.hpp"
#include "hirl/nn.hpp"
#include "hirl/replay.hpp"

namespace hirl {

inline constexpr int kPowerStateDim = 8;
inline constexpr int kPowerActionDim = 2;

struct Td3Config {
  std::vector<int> hidden{256, 256};
  double actor_lr = 1e-3;
  double critic_lr = 5e-4;
  double discount = 0.99;
  double tau = 0.001;
  int policy_delay = 2;
  double smoothing_sigma = 0.2;
  double smoothing_clip = 0.5;
  double sigma_base = 0.1;
  double noise_alpha = 0.5;
  std::size_t batch = 256;
  std::size_t buffer = 5000;
  double gamma_fail = 1.5;
  ReplayMode replay_mode = ReplayMode::Prioritized;
};

struct PowerAction {
  double f_hz = 0.0;
  double p_w = 0.0;
  Vec normalized = Vec::Zero(kPowerActionDim);  // actor coordinates in [-1, 1]
};

// [-1, 1] -> [0, cap]
inline double scale_action(double u, double cap) { return 0.5 * (std::clamp(u, -1.0, 1.0) + 1.0) * cap; }

inline double exploration_sigma(double sigma_base, double alpha, double load) {
  return sigma_base * (1.0 + alpha * load);
}

// Twin-minimum bootstrap with target-policy smoothing. `noise` holds the
// pre-clip smoothing draws (action_dim x batch); pass zeros to disable.
inline Vec td3_targets(const Mlp& actor_target, const Mlp& q1_target, const Mlp& q2_target,
                       const Mat& next_states, const Vec& rewards, const Vec& terminal,
                       double discount, const Mat& noise, double noise_clip) {
  Mat a = actor_target.forward(next_states);
  a += noise.cwiseMax(-noise_clip).cwiseMin(noise_clip);
  a = a.cwiseMax(-1.0).cwiseMin(1.0);
  Mat sa(next_states.rows() + a.rows(), next_states.cols());
  sa << next_states, a;
  const Mat q1 = q1_target.forward(sa);
  const Mat q2 = q2_target.forward(sa);
  Vec y(rewards.size());
  for (Eigen::Index i = 0; i < rewards.size(); ++i) {
    const double q = std::min(q1(0, i), q2(0, i));
    y(i) = rewards(i) + discount * (1.0 - terminal(i)) * q;
  }
  return y;
}

struct Td3Losses {
  double critic1 = 0.0;
  double critic2 = 0.0;
  std::optional<double> actor;  // set on delayed actor-update calls
  bool rejected = false;
};

class Td3Agent {
 public:
  Td3Agent() = default;
  Td3Agent(const Td3Config& cfg, std::uint64_t seed, int state_dim = kPowerStateDim)
      : cfg_(cfg),
        state_dim_(state_dim),
        rng_(make_rng({seed, tag(Stream::PowerAgent)})),
        replay_(cfg.buffer, cfg.gamma_fail, cfg.replay_mode) {
    auto sizes = [&](int in, int out) {
      std::vector<int> s{in};
      s.insert(s.end(), cfg.hidden.begin(), cfg.hidden.end());
      s.push_back(out);
      return s;
    };
    actor_ = Mlp(sizes(state_dim_, kPowerActionDim), OutputActivation::Tanh, rng_);
    q1_ = Mlp(sizes(state_dim_ + kPowerActionDim, 1), OutputActivation::Identity, rng_);
    q2_ = Mlp(sizes(state_dim_ + kPowerActionDim, 1), OutputActivation::Identity, rng_);
    actor_t_ = actor_;
    q1_t_ = q1_;
    q2_t_ = q2_;
    actor_opt_ = Adam(actor_, {cfg.actor_lr});
    q1_opt_ = Adam(q1_, {cfg.critic_lr});
    q2_opt_ = Adam(q2_, {cfg.critic_lr});
  }

  // Deterministic actor output plus, when exploring, Gaussian noise with
  // sigma_base*(1 + alpha*load) in normalized units, then clipped to caps.
  PowerAction act(const Vec& state, double load, bool explore, double f_max, double p_max) {
    Vec u = actor_.forward(state);
    if (explore) {
      std::normal_distribution<double> n(0.0, exploration_sigma(cfg_.sigma_base, cfg_.noise_alpha, load));
      for (Eigen::Index i = 0; i < u.size(); ++i) u(i) += n(rng_);
    }
    u = u.cwiseMax(-1.0).cwiseMin(1.0);
    return {scale_action(u(0), f_max), scale_action(u(1), p_max), u};
  }

  // Stores with |TD| from critic 1 against the current target.
  void remember(Experience e) {
    const double td = td_error(e);
    replay_.push(std::move(e), std::isfinite(td) ? td : -1.0);
  }

  [[nodiscard]] bool ready() const noexcept { return replay_.size() >= cfg_.batch; }

  Td3Losses train_step(Diagnostics* diag = nullptr) {
    Td3Losses out;
    const auto idx = replay_.sample(cfg_.batch, rng_);
    const auto n = static_cast<Eigen::Index>(idx.size());
    Mat s(state_dim_, n), a(kPowerActionDim, n), s2(state_dim_, n);
    Vec r(n), term(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& e = replay_.at(idx[static_cast<std::size_t>(j)]);
      s.col(j) = e.state;
      a.col(j) = e.action;
      s2.col(j) = e.next_state;
      r(j) = e.reward;
      term(j) = e.terminal ? 1.0 : 0.0;
    }
    Mat noise(kPowerActionDim, n);
    std::normal_distribution<double> nd(0.0, cfg_.smoothing_sigma);
    for (Eigen::Index j = 0; j < n; ++j)
      for (int i = 0; i < kPowerActionDim; ++i) noise(i, j) = cfg_.smoothing_sigma > 0 ? nd(rng_) : 0.0;
    const Vec y = td3_targets(actor_t_, q1_t_, q2_t_, s2, r, term, cfg_.discount, noise, cfg_.smoothing_clip);

    Mat sa(state_dim_ + kPowerActionDim, n);
    sa << s, a;
    const auto c1 = q1_.forward_cached(sa);
    const auto c2 = q2_.forward_cached(sa);
    const Vec e1 = c1.output.row(0).transpose() - y;
    const Vec e2 = c2.output.row(0).transpose() - y;
    out.critic1 = e1.squaredNorm() / static_cast<double>(n);
    out.critic2 = e2.squaredNorm() / static_cast<double>(n);
    if (!std::isfinite(out.critic1) || !std::isfinite(out.critic2)) {
      note(diag, "td3: non-finite critic loss, step rejected");
      out.rejected = true;
      return out;
    }
    const Mat up1 = (2.0 / static_cast<double>(n)) * e1.transpose();
    const Mat up2 = (2.0 / static_cast<double>(n)) * e2.transpose();
    bool ok = q1_opt_.step(q1_, q1_.backward(c1, up1));
    ok = q2_opt_.step(q2_, q2_.backward(c2, up2)) && ok;
    if (!ok) note(diag, "td3: non-finite critic gradient, step rejected");
    for (Eigen::Index j = 0; j < n; ++j) replay_.update_priority(idx[static_cast<std::size_t>(j)], std::abs(e1(j)));

    ++critic_steps_;
    if (critic_steps_ % static_cast<std::uint64_t>(cfg_.policy_delay) == 0) {
      const auto ca = actor_.forward_cached(s);
      Mat su(state_dim_ + kPowerActionDim, n);
      su << s, ca.output;
      const auto cq = q1_.forward_cached(su);
      out.actor = -cq.output.mean();
      const Mat upq = Mat::Constant(1, n, -1.0 / static_cast<double>(n));
      const auto gq = q1_.backward(cq, upq);
      const Mat da = gq.dinput.bottomRows(kPowerActionDim);
      if (actor_opt_.step(actor_, actor_.backward(ca, da))) {
        ++actor_updates_;
      } else {
        note(diag, "td3: non-finite actor gradient, step rejected");
      }
      polyak(actor_t_, actor_, cfg_.tau);
      polyak(q1_t_, q1_, cfg_.tau);
      polyak(q2_t_, q2_, cfg_.tau);
    }
    return out;
  }

  [[nodiscard]] const Td3Config& config() const noexcept { return cfg_; }
  [[nodiscard]] const Mlp& actor() const noexcept { return actor_; }
  [[nodiscard]] const Mlp& critic1() const noexcept { return q1_; }
  [[nodiscard]] const Mlp& critic2() const noexcept { return q2_; }
  [[nodiscard]] Mlp& actor() noexcept { return actor_; }
  [[nodiscard]] Mlp& critic1() noexcept { return q1_; }
  [[nodiscard]] Mlp& critic2() noexcept { return q2_; }
  [[nodiscard]] const ReplayBuffer& replay() const noexcept { return replay_; }
  [[nodiscard]] ReplayBuffer& replay() noexcept { return replay_; }
  [[nodiscard]] std::uint64_t critic_steps() const noexcept { return critic_steps_; }
  [[nodiscard]] std::uint64_t actor_updates() const noexcept { return actor_updates_; }

 private:
  double td_error(const Experience& e) const {
    Mat s2 = e.next_state;
    Vec r(1), t(1);
    r << e.reward;
    t << (e.terminal ? 1.0 : 0.0);
    const Vec y = td3_targets(actor_t_, q1_t_, q2_t_, s2, r, t, cfg_.discount,
                              Mat::Zero(kPowerActionDim, 1), cfg_.smoothing_clip);
    Vec sa(state_dim_ + kPowerActionDim);
    sa << e.state, e.action;
    return std::abs(q1_.forward(sa)(0) - y(0));
  }

  Td3Config cfg_;
  int state_dim_ = kPowerStateDim;
  Rng rng_;
  ReplayBuffer replay_;
  Mlp actor_, q1_, q2_, actor_t_, q1_t_, q2_t_;
  Adam actor_opt_, q1_opt_, q2_opt_;
  std::uint64_t critic_steps_ = 0;
  std::uint64_t actor_updates_ = 0;
};

}  // namespace hirl

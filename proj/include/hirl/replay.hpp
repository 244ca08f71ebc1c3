#pragma once

// Failure-prioritized experience replay.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "hirl/common.hpp"
#include "hirl/nn.hpp"

namespace hirl {

struct Experience {
  Vec state;
  Vec action;        // continuous actions (power tier)
  int action_index = 0;  // discrete actions (allocation tier)
  double reward = 0.0;
  Vec next_state;
  bool terminal = false;
  int fail_flag = 0;
  double priority = 0.0;
  std::uint64_t seq = 0;  // insertion counter, for eviction checks
};

// |TD| * (1 + gamma_fail * I_fail)
inline double priority_weight(double td_abs, int fail_flag, double gamma_fail) {
  return td_abs * (1.0 + gamma_fail * (fail_flag != 0 ? 1.0 : 0.0));
}

enum class ReplayMode { Prioritized, Uniform };

class ReplayBuffer {
 public:
  static constexpr double kDefaultFloor = 1e-3;

  ReplayBuffer() = default;
  ReplayBuffer(std::size_t capacity, double gamma_fail, ReplayMode mode = ReplayMode::Prioritized,
               double floor = kDefaultFloor)
      : capacity_(capacity), gamma_fail_(gamma_fail), mode_(mode), floor_(floor) {
    if (capacity_ == 0) throw std::invalid_argument("replay capacity must be positive");
  }

  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
  [[nodiscard]] ReplayMode mode() const noexcept { return mode_; }
  [[nodiscard]] double floor() const noexcept { return floor_; }
  [[nodiscard]] double effective_gamma_fail() const noexcept {
    return mode_ == ReplayMode::Uniform ? 0.0 : gamma_fail_;
  }

  [[nodiscard]] const Experience& at(std::size_t i) const { return data_.at(i); }

  // Stores with the floor priority until a TD error is known. At capacity the
  // oldest entry is overwritten.
  std::size_t push(Experience e, double td_abs = -1.0) {
    e.priority = td_abs >= 0.0 ? priority_weight(td_abs, e.fail_flag, effective_gamma_fail()) : floor_;
    e.seq = next_seq_++;
    std::size_t slot;
    if (data_.size() < capacity_) {
      slot = data_.size();
      data_.push_back(std::move(e));
    } else {
      slot = head_;
      data_[slot] = std::move(e);
      head_ = (head_ + 1) % capacity_;
    }
    dirty_ = true;
    return slot;
  }

  void update_priority(std::size_t i, double td_abs) {
    auto& e = data_.at(i);
    e.priority = priority_weight(td_abs, e.fail_flag, effective_gamma_fail());
    dirty_ = true;
  }

  // Sampling weight of entry i: max(priority, floor).
  [[nodiscard]] double weight(std::size_t i) const { return std::max(data_.at(i).priority, floor_); }

  // Indices drawn with replacement, proportional to weight() in prioritized
  // mode and uniformly otherwise.
  std::vector<std::size_t> sample(std::size_t n, Rng& rng) {
    if (data_.empty()) throw std::invalid_argument("replay sample of " + std::to_string(n) + " from an empty buffer");
    std::vector<std::size_t> out(n);
    if (mode_ == ReplayMode::Uniform) {
      std::uniform_int_distribution<std::size_t> u(0, data_.size() - 1);
      for (auto& i : out) i = u(rng);
      return out;
    }
    rebuild();
    const double total = prefix_.back();
    std::uniform_real_distribution<double> u(0.0, total);
    for (auto& i : out) {
      const double x = u(rng);
      auto it = std::upper_bound(prefix_.begin(), prefix_.end(), x);
      i = std::min(static_cast<std::size_t>(it - prefix_.begin()), data_.size() - 1);
    }
    return out;
  }

 private:
  // Prefix sums are rebuilt in O(n) when priorities changed; buffers at the
  // sizes used here make a sum-tree unnecessary.
  void rebuild() {
    if (!dirty_ && prefix_.size() == data_.size()) return;
    prefix_.resize(data_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      acc += weight(i);
      prefix_[i] = acc;
    }
    dirty_ = false;
  }

  std::size_t capacity_ = 1;
  double gamma_fail_ = 1.5;
  ReplayMode mode_ = ReplayMode::Prioritized;
  double floor_ = kDefaultFloor;
  std::vector<Experience> data_;
  std::vector<double> prefix_;
  std::size_t head_ = 0;
  std::uint64_t next_seq_ = 0;
  bool dirty_ = true;
};

}  // namespace hirl

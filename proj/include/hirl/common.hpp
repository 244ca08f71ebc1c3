#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace hirl {

using Rng = std::mt19937_64;

// Collects non-fatal conditions (clamped inputs, saturated divisions) so
// callers can surface them without aborting a simulation.
class Diagnostics {
 public:
  void note(std::string message) { messages_.push_back(std::move(message)); }
  [[nodiscard]] bool empty() const noexcept { return messages_.empty(); }
  [[nodiscard]] std::size_t size() const noexcept { return messages_.size(); }
  [[nodiscard]] const std::vector<std::string>& messages() const noexcept { return messages_; }
  void clear() noexcept { messages_.clear(); }

 private:
  std::vector<std::string> messages_;
};

inline void note(Diagnostics* diag, std::string message) {
  if (diag != nullptr) diag->note(std::move(message));
}

// Deterministic generator for a named stream. Every simulation input that
// must be shared across policies (topology, arrivals, mobility) derives its
// generator from the same key, independent of any decision made.
inline Rng make_rng(std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words;
  words.reserve(key.size() * 2);
  for (std::uint64_t k : key) {
    words.push_back(static_cast<std::uint32_t>(k & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Stream tags for make_rng.
enum class Stream : std::uint64_t {
  Topology = 1,
  Episode = 2,
  Arrivals = 3,
  Mobility = 4,
  PowerAgent = 5,
  AllocAgent = 6,
  Baseline = 7,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

inline double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline long uniform_int(Rng& rng, long lo, long hi) {
  return std::uniform_int_distribution<long>(lo, hi)(rng);
}

}  // namespace hirl

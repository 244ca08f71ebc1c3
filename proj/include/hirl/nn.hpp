#pragma once

// Dense feed-forward networks with hand-written backpropagation, an Adam
// optimizer and target-network synchronization. Batches are column-major:
// one sample per column.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hirl/common.hpp"

namespace hirl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class OutputActivation { Identity, Tanh };

struct Layer {
  Mat w;  // out x in
  Vec b;
};

// Intermediate values of a batched forward pass, consumed by backward().
struct ForwardCache {
  std::vector<Mat> inputs;  // input to each layer
  std::vector<Mat> pre;     // pre-activation of each layer
  Mat output;
};

struct Gradients {
  std::vector<Mat> dw;
  std::vector<Vec> db;
  Mat dinput;

  [[nodiscard]] bool finite() const {
    for (const auto& m : dw)
      if (!m.allFinite()) return false;
    for (const auto& v : db)
      if (!v.allFinite()) return false;
    return true;
  }
};

class Mlp {
 public:
  Mlp() = default;

  // Hidden layers use ReLU. Weights and biases are drawn from
  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(std::vector<int> sizes, OutputActivation out, Rng& rng) : sizes_(std::move(sizes)), out_(out) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
    for (int s : sizes_)
      if (s <= 0) throw std::invalid_argument("Mlp layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const int in = sizes_[l];
      const int outn = sizes_[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      Layer layer{Mat(outn, in), Vec(outn)};
      for (int c = 0; c < in; ++c)
        for (int r = 0; r < outn; ++r) layer.w(r, c) = u(rng);
      for (int r = 0; r < outn; ++r) layer.b(r) = u(rng);
      layers_.push_back(std::move(layer));
    }
  }

  [[nodiscard]] const std::vector<int>& sizes() const noexcept { return sizes_; }
  [[nodiscard]] OutputActivation output_activation() const noexcept { return out_; }
  [[nodiscard]] int input_size() const { return sizes_.front(); }
  [[nodiscard]] int output_size() const { return sizes_.back(); }
  [[nodiscard]] std::vector<Layer>& layers() noexcept { return layers_; }
  [[nodiscard]] const std::vector<Layer>& layers() const noexcept { return layers_; }

  [[nodiscard]] bool same_shape(const Mlp& other) const noexcept {
    return sizes_ == other.sizes_ && out_ == other.out_;
  }

  [[nodiscard]] Mat forward(const Mat& x) const {
    check_input(x);
    Mat a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Mat z = (layers_[l].w * a).colwise() + layers_[l].b;
      a = activate(z, l);
    }
    return a;
  }

  [[nodiscard]] Vec forward(const Vec& x) const { return forward(Mat(x)).col(0); }

  [[nodiscard]] ForwardCache forward_cached(const Mat& x) const {
    check_input(x);
    ForwardCache cache;
    cache.inputs.reserve(layers_.size());
    cache.pre.reserve(layers_.size());
    Mat a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      cache.inputs.push_back(a);
      Mat z = (layers_[l].w * a).colwise() + layers_[l].b;
      a = activate(z, l);
      cache.pre.push_back(std::move(z));
    }
    cache.output = std::move(a);
    return cache;
  }

  // Gradients of sum_ij upstream(i,j) * output(i,j) with respect to the
  // parameters and the input batch.
  [[nodiscard]] Gradients backward(const ForwardCache& cache, const Mat& upstream) const {
    if (upstream.rows() != cache.output.rows() || upstream.cols() != cache.output.cols())
      throw std::invalid_argument("backward: upstream gradient shape mismatch");
    const std::size_t n = layers_.size();
    Gradients g;
    g.dw.resize(n);
    g.db.resize(n);
    Mat delta = upstream;
    if (out_ == OutputActivation::Tanh) {
      delta.array() *= 1.0 - cache.output.array().square();
    }
    for (std::size_t i = n; i-- > 0;) {
      g.dw[i].noalias() = delta * cache.inputs[i].transpose();
      g.db[i] = delta.rowwise().sum();
      Mat da = layers_[i].w.transpose() * delta;
      if (i > 0) {
        delta = (cache.pre[i - 1].array() > 0.0).select(da.array(), 0.0).matrix();
      } else {
        g.dinput = std::move(da);
      }
    }
    return g;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
  }

  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers_) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c)
        for (Eigen::Index r = 0; r < l.w.rows(); ++r) out.push_back(l.w(r, c));
      for (Eigen::Index r = 0; r < l.b.size(); ++r) out.push_back(l.b(r));
    }
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (flat.size() != parameter_count()) throw std::invalid_argument("unflatten: size mismatch");
    std::size_t k = 0;
    for (auto& l : layers_) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c)
        for (Eigen::Index r = 0; r < l.w.rows(); ++r) l.w(r, c) = flat[k++];
      for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b(r) = flat[k++];
    }
  }

  [[nodiscard]] bool finite() const {
    for (const auto& l : layers_)
      if (!l.w.allFinite() || !l.b.allFinite()) return false;
    return true;
  }

 private:
  void check_input(const Mat& x) const {
    if (layers_.empty()) throw std::logic_error("Mlp is not initialized");
    if (x.rows() != sizes_.front())
      throw std::invalid_argument("Mlp input has " + std::to_string(x.rows()) + " rows, expected " +
                                  std::to_string(sizes_.front()));
  }

  [[nodiscard]] Mat activate(const Mat& z, std::size_t layer) const {
    if (layer + 1 < layers_.size()) return z.cwiseMax(0.0);
    if (out_ == OutputActivation::Tanh) return z.array().tanh().matrix();
    return z;
  }

  std::vector<int> sizes_;
  OutputActivation out_ = OutputActivation::Identity;
  std::vector<Layer> layers_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& l : net.layers()) {
      mw_.push_back(Mat::Zero(l.w.rows(), l.w.cols()));
      vw_.push_back(Mat::Zero(l.w.rows(), l.w.cols()));
      mb_.push_back(Vec::Zero(l.b.size()));
      vb_.push_back(Vec::Zero(l.b.size()));
    }
  }

  void set_lr(double lr) noexcept { cfg_.lr = lr; }
  [[nodiscard]] double lr() const noexcept { return cfg_.lr; }
  [[nodiscard]] std::uint64_t steps() const noexcept { return t_; }

  // Bias-corrected adaptive-moment update. A non-finite gradient leaves the
  // network and the moments untouched and returns false.
  [[nodiscard]] bool step(Mlp& net, const Gradients& g) {
    auto& layers = net.layers();
    if (g.dw.size() != layers.size() || mw_.size() != layers.size())
      throw std::invalid_argument("Adam::step: architecture mismatch");
    if (!g.finite()) return false;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l].w, mw_[l], vw_[l], g.dw[l], c1, c2);
      update(layers[l].b, mb_[l], vb_[l], g.db[l], c1, c2);
    }
    return true;
  }

 private:
  template <typename P, typename G>
  void update(P& param, P& m, P& v, const G& grad, double c1, double c2) const {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
    param.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  }

  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Mat> mw_, vw_;
  std::vector<Vec> mb_, vb_;
};

// target <- tau * online + (1 - tau) * target
inline void polyak(Mlp& target, const Mlp& online, double tau) {
  if (!target.same_shape(online)) throw std::invalid_argument("polyak: architecture mismatch");
  auto& tl = target.layers();
  const auto& ol = online.layers();
  for (std::size_t l = 0; l < tl.size(); ++l) {
    tl[l].w = tau * ol[l].w + (1.0 - tau) * tl[l].w;
    tl[l].b = tau * ol[l].b + (1.0 - tau) * tl[l].b;
  }
}

inline void hard_copy(Mlp& target, const Mlp& online) {
  if (!target.same_shape(online)) throw std::invalid_argument("hard_copy: architecture mismatch");
  target = online;
}

// On-disk format: one JSON header line, then the parameters from flatten()
// as little-endian IEEE-754 doubles.
inline constexpr int kMlpFormatVersion = 1;

inline void save_mlp(const Mlp& net, std::ostream& os) {
  nlohmann::json header{{"format", "hirl-mlp"},
                        {"version", kMlpFormatVersion},
                        {"sizes", net.sizes()},
                        {"output", net.output_activation() == OutputActivation::Tanh ? "tanh" : "identity"},
                        {"count", net.parameter_count()}};
  os << header.dump() << '\n';
  for (double v : net.flatten()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    os.write(bytes, 8);
  }
  if (!os) throw std::runtime_error("save_mlp: write failed");
}

inline Mlp load_mlp(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("load_mlp: missing header");
  const auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "hirl-mlp")
    throw std::runtime_error("load_mlp: not an hirl-mlp stream");
  if (header.value("version", 0) != kMlpFormatVersion)
    throw std::runtime_error("load_mlp: unsupported version");
  const auto sizes = header.at("sizes").get<std::vector<int>>();
  const auto out = header.at("output").get<std::string>() == "tanh" ? OutputActivation::Tanh
                                                                     : OutputActivation::Identity;
  Rng rng(0);
  Mlp net(sizes, out, rng);
  std::vector<double> flat(net.parameter_count());
  if (header.value("count", std::size_t{0}) != flat.size())
    throw std::runtime_error("load_mlp: parameter count does not match sizes");
  for (double& v : flat) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("load_mlp: truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  net.unflatten(flat);
  return net;
}

}  // namespace hirl

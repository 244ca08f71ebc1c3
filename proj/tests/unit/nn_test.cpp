#include <gtest/gtest.h>

#include <sstream>

#include "hirl/nn.hpp"
#include "support/oracles.hpp"

using namespace hirl;

namespace {

// Layer-by-layer evaluation written without Eigen expressions.
std::vector<double> manual_forward(const Mlp& net, const std::vector<double>& x) {
  std::vector<double> a = x;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    std::vector<double> z(static_cast<std::size_t>(L.w.rows()));
    for (Eigen::Index r = 0; r < L.w.rows(); ++r) {
      double s = L.b(r);
      for (Eigen::Index c = 0; c < L.w.cols(); ++c) s += L.w(r, c) * a[static_cast<std::size_t>(c)];
      if (l + 1 < layers.size()) {
        s = s > 0 ? s : 0.0;
      } else if (net.output_activation() == OutputActivation::Tanh) {
        s = std::tanh(s);
      }
      z[static_cast<std::size_t>(r)] = s;
    }
    a = z;
  }
  return a;
}

}  // namespace

TEST(Mlp, ZeroNetGivesZero) {
  Rng rng(1);
  Mlp net({4, 8, 3}, OutputActivation::Identity, rng);
  std::vector<double> flat(net.parameter_count(), 0.0);
  net.unflatten(flat);
  EXPECT_TRUE(net.forward(Vec(Vec::Random(4))).isZero(0.0));
}

TEST(Mlp, MatchesManualOracle) {
  Rng rng(2);
  for (auto out : {OutputActivation::Identity, OutputActivation::Tanh}) {
    Mlp net({5, 7, 6, 3}, out, rng);
    Vec x = Vec::LinSpaced(5, -1.0, 2.0);
    const Vec y = net.forward(x);
    const auto ref = manual_forward(net, std::vector<double>(x.data(), x.data() + x.size()));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(y(i), ref[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(Mlp, ShapeMismatchThrows) {
  Rng rng(2);
  Mlp net({3, 4, 1}, OutputActivation::Identity, rng);
  EXPECT_THROW((void)net.forward(Vec(Vec::Zero(2))), std::invalid_argument);
  const auto c = net.forward_cached(Mat::Zero(3, 2));
  EXPECT_THROW((void)net.backward(c, Mat::Zero(2, 2)), std::invalid_argument);
}

TEST(Mlp, TanhOutputStrictlyInside) {
  Rng rng(3);
  Mlp net({2, 16, 2}, OutputActivation::Tanh, rng);
  for (int i = 0; i < 1000; ++i) {
    const Vec y = net.forward(Vec(Vec::Random(2) * 5.0));
    EXPECT_TRUE((y.array().abs() < 1.0).all());
  }
}

TEST(Backward, LinearWeightGradientIsInput) {
  Rng rng(4);
  Mlp net({3, 1}, OutputActivation::Identity, rng);
  Mat x(3, 1);
  x << 0.5, -2.0, 3.0;
  const auto g = net.backward(net.forward_cached(x), Mat::Ones(1, 1));
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g.dw[0](0, i), x(i, 0));
  EXPECT_DOUBLE_EQ(g.db[0](0), 1.0);
}

TEST(Backward, ZeroUpstreamGivesZero) {
  Rng rng(5);
  Mlp net({4, 6, 2}, OutputActivation::Tanh, rng);
  const Mat x = Mat::Random(4, 3);
  const auto g = net.backward(net.forward_cached(x), Mat::Zero(2, 3));
  for (const auto& m : g.dw) EXPECT_TRUE(m.isZero(0.0));
  for (const auto& v : g.db) EXPECT_TRUE(v.isZero(0.0));
  EXPECT_TRUE(g.dinput.isZero(0.0));
}

TEST(Backward, FiniteDifferenceOracle) {
  const auto rep = hirl::testing::gradient_oracle(20, 6);
  EXPECT_GT(rep.checked, 200u);
  EXPECT_LT(rep.max_rel_err, 1e-4);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(7);
  Mlp net({3, 4, 2}, OutputActivation::Identity, rng);
  const auto before = net.flatten();
  Adam opt(net, {1e-3});
  const auto g = net.backward(net.forward_cached(Mat::Random(3, 2)), Mat::Zero(2, 2));
  ASSERT_TRUE(opt.step(net, g));
  EXPECT_EQ(net.flatten(), before);
}

TEST(Adam, RejectsNonFiniteGradient) {
  Rng rng(7);
  Mlp net({2, 2}, OutputActivation::Identity, rng);
  const auto before = net.flatten();
  Adam opt(net, {1e-3});
  auto g = net.backward(net.forward_cached(Mat::Random(2, 1)), Mat::Ones(2, 1));
  g.dw[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(opt.step(net, g));
  EXPECT_EQ(net.flatten(), before);
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(Adam, IdenticalNetsStayIdentical) {
  Rng a(9), b(9);
  Mlp n1({3, 5, 2}, OutputActivation::Tanh, a), n2({3, 5, 2}, OutputActivation::Tanh, b);
  EXPECT_EQ(n1.flatten(), n2.flatten());
  Adam o1(n1, {1e-2}), o2(n2, {1e-2});
  const Mat x = Mat::Random(3, 4);
  for (int i = 0; i < 10; ++i) {
    ASSERT_TRUE(o1.step(n1, n1.backward(n1.forward_cached(x), Mat::Ones(2, 4))));
    ASSERT_TRUE(o2.step(n2, n2.backward(n2.forward_cached(x), Mat::Ones(2, 4))));
  }
  EXPECT_EQ(n1.flatten(), n2.flatten());
}

TEST(Sync, PolyakBoundaries) {
  Rng rng(10);
  Mlp online({3, 4, 2}, OutputActivation::Identity, rng), target({3, 4, 2}, OutputActivation::Identity, rng);
  const auto t0 = target.flatten();
  polyak(target, online, 0.0);
  EXPECT_EQ(target.flatten(), t0);
  polyak(target, online, 1.0);
  EXPECT_EQ(target.flatten(), online.flatten());
  Mlp other({3, 5, 2}, OutputActivation::Identity, rng);
  EXPECT_THROW(polyak(other, online, 0.5), std::invalid_argument);
}

TEST(Sync, HardCopy) {
  Rng rng(11);
  Mlp online({3, 4, 2}, OutputActivation::Identity, rng), target({3, 4, 2}, OutputActivation::Identity, rng);
  const Vec probe = Vec::LinSpaced(3, -0.5, 0.7);
  EXPECT_FALSE(online.forward(probe).isApprox(target.forward(probe)));
  hard_copy(target, online);
  EXPECT_EQ(online.forward(probe), target.forward(probe));
  const auto once = target.flatten();
  hard_copy(target, online);
  EXPECT_EQ(target.flatten(), once);
  Mlp other({3, 2}, OutputActivation::Identity, rng);
  EXPECT_THROW(hard_copy(other, online), std::invalid_argument);
}

TEST(Io, SaveLoadRoundTrip) {
  Rng rng(12);
  Mlp net({4, 6, 2}, OutputActivation::Tanh, rng);
  std::stringstream ss;
  save_mlp(net, ss);
  const Mlp back = load_mlp(ss);
  EXPECT_TRUE(back.same_shape(net));
  EXPECT_EQ(back.flatten(), net.flatten());
}

TEST(Io, RejectsWrongHeader) {
  std::stringstream ss("{\"format\":\"other\"}\n");
  EXPECT_THROW(load_mlp(ss), std::runtime_error);
}

TEST(Init, SeededIsBitIdentical) {
  Rng a = make_rng({42}), b = make_rng({42});
  Mlp n1({8, 64, 64, 2}, OutputActivation::Tanh, a), n2({8, 64, 64, 2}, OutputActivation::Tanh, b);
  EXPECT_EQ(n1.flatten(), n2.flatten());
}

#pragma once

// Sample statistics, Student-t intervals and paired t-tests.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace hirl::stats {

inline double mean(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("mean of empty sample");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// Sample standard deviation (n - 1 denominator).
inline double stddev(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (a <= 0 || b <= 0) throw std::invalid_argument("incomplete_beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// P(|T| >= |t|) for Student's t with nu degrees of freedom.
inline double t_two_sided_p(double t, double nu) {
  if (!(nu > 0)) throw std::invalid_argument("degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * nu, 0.5, nu / (nu + t * t));
}

inline double t_cdf(double t, double nu) {
  const double tail = 0.5 * t_two_sided_p(t, nu);
  return t >= 0 ? 1.0 - tail : tail;
}

// Quantile of Student's t for p in (0, 1), by bisection on the CDF.
inline double t_quantile(double p, double nu) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("t_quantile needs p in (0, 1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -t_quantile(1.0 - p, nu);
  double lo = 0.0, hi = 1.0;
  while (t_cdf(hi, nu) < p) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    (t_cdf(mid, nu) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
};

// mean +- t_{0.975, n-1} * s / sqrt(n)
inline Interval ci95(const std::vector<double>& x) {
  if (x.size() < 2) throw std::invalid_argument("ci95 needs at least two samples");
  const double n = static_cast<double>(x.size());
  return {mean(x), t_quantile(0.975, n - 1.0) * stddev(x) / std::sqrt(n)};
}

struct PairedT {
  double t = 0.0;
  double p = 1.0;
  double mean_diff = 0.0;
  bool degenerate = false;  // constant nonzero differences
};

// Paired t-test on a - b, two-sided.
inline PairedT paired_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t needs equal-length samples");
  if (a.size() < 2) throw std::invalid_argument("paired_t needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  PairedT r;
  r.mean_diff = mean(d);
  const double s = stddev(d);
  const double n = static_cast<double>(d.size());
  if (s == 0.0) {
    if (r.mean_diff == 0.0) return r;
    r.degenerate = true;
    r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
    r.p = 0.0;
    return r;
  }
  r.t = r.mean_diff / (s / std::sqrt(n));
  r.p = t_two_sided_p(r.t, n - 1.0);
  return r;
}

}  // namespace hirl::stats

#include "pkode/evalbench/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "pkode/numcore/errors.hpp"

namespace pkode::evalbench {

namespace {

void check_inputs(std::span<const double> pred, std::span<const double> ref) {
  require(pred.size() == ref.size(), "metrics: prediction and reference lengths differ");
  require(!ref.empty(), "metrics: empty input");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    require(ref[i] > 0.0, "metrics: reference value " + std::to_string(i) + " is not > 0");
    require(std::isfinite(pred[i]), "metrics: prediction " + std::to_string(i) + " is not finite");
  }
}

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
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
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("incomplete beta: continued fraction did not converge");
}

}  // namespace

double rmspe(std::span<const double> pred, std::span<const double> ref) {
  check_inputs(pred, ref);
  double s = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double e = (pred[i] - ref[i]) / ref[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(ref.size())) * 100.0;
}

double mpe(std::span<const double> pred, std::span<const double> ref) {
  check_inputs(pred, ref);
  double s = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) s += (pred[i] - ref[i]) / ref[i];
  return s / static_cast<double>(ref.size()) * 100.0;
}

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> ref) {
  MetricsReport r;
  r.n = ref.size();
  r.rmspe = rmspe(pred, ref);
  r.mpe = mpe(pred, ref);
  r.per_patient_errors.reserve(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) r.per_patient_errors.push_back((pred[i] - ref[i]) / ref[i] * 100.0);
  // Jensen: mean of squares >= square of mean, up to rounding.
  require(r.rmspe * r.rmspe >= r.mpe * r.mpe * (1.0 - 1e-12), "metrics: rmspe^2 < mpe^2");
  return r;
}

MeanSd mean_sd(std::span<const double> values) {
  require(!values.empty(), "mean_sd: empty input");
  MeanSd m;
  m.n = values.size();
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(m.n);
  if (m.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(m.n - 1));
  }
  return m;
}

double regularized_incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, "regularized_incomplete_beta: a and b must be > 0");
  require(x >= 0.0 && x <= 1.0, "regularized_incomplete_beta: x must be in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fastest for x < (a + 1) / (a + b + 2); use symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  require(df > 0.0, "student_t_two_sided_p: df must be > 0");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "paired_t_test: lengths differ");
  require(a.size() >= 2, "paired_t_test: need at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const MeanSd s = mean_sd(d);
  TTestResult r;
  r.df = static_cast<int>(a.size()) - 1;
  if (s.sd == 0.0) {
    if (s.mean == 0.0) return r;
    r.t = s.mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = s.mean / (s.sd / std::sqrt(static_cast<double>(a.size())));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

}  // namespace pkode::evalbench

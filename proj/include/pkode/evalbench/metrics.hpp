#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pkode::evalbench {

/// Root-mean-square relative error, in percent. Reference values must be > 0.
double rmspe(std::span<const double> pred, std::span<const double> ref);
/// Mean relative error, in percent.
double mpe(std::span<const double> pred, std::span<const double> ref);

struct MetricsReport {
  std::size_t n = 0;
  double rmspe = 0.0;  // percent
  double mpe = 0.0;    // percent
  std::vector<double> per_patient_errors;  // percent, (pred - ref) / ref * 100
};

/// Both metrics plus per-patient errors. Asserts rmspe^2 >= mpe^2.
MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> ref);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n - 1); 0 for a single value
  std::size_t n = 0;
};

MeanSd mean_sd(std::span<const double> values);

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;  // two-sided
};

/// Paired t-test on d = a - b. All-zero differences give t = 0, p = 1.
/// Constant non-zero differences give t = +-inf, p = 0.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

}  // namespace pkode::evalbench

#pragma once

// Built-in numerical self-checks, run by `ibpdgm selftest`.
//
//  gradients      analytic score / backprop gradients vs central differences
//                 (max_error: relative error)
//  normalization  enumeration sums, Beta integral, Gaussian KL vs Monte Carlo
//                 (max_error: absolute deviation, or SEM multiples for MC)
//  unbiasedness   MC ELBO / gradient means vs exact values on an enumerable toy
//                 (max_error: SEM multiples)
//  variance       control variates vs plain score estimator
//                 (max_error: worst variance ratio with / without)
//  sticks         Monte Carlo moments of stick-breaking weights
//                 (max_error: SEM multiples)

#include <cstdint>
#include <string>
#include <vector>

namespace ibpdgm::selftest {

struct Options {
  std::uint64_t seed = 12345;
  /// Test-harness mutation: negate the Beta score gradient inside the
  /// gradient suite (negative control).
  bool flip_beta_score = false;
  /// Estimates averaged in the unbiasedness suite.
  int unbiasedness_reps = 200;
};

struct SuiteResult {
  std::string name;
  bool pass = true;
  double max_error = 0.0;
  int checks = 0;
  std::vector<std::string> failures;
  double seconds = 0.0;
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-4;
/// Denominator floor of the relative FD error.
inline constexpr double kFdFloor = 1e-4;

/// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor = kFdFloor);

SuiteResult gradient_suite(const Options& opts = {});
SuiteResult normalization_suite(const Options& opts = {});
SuiteResult unbiasedness_suite(const Options& opts = {});
SuiteResult variance_suite(const Options& opts = {});
SuiteResult stick_moments_suite(const Options& opts = {});

std::vector<SuiteResult> run_all(const Options& opts = {});
std::string format(const std::vector<SuiteResult>& results);
bool all_pass(const std::vector<SuiteResult>& results);

}  // namespace ibpdgm::selftest

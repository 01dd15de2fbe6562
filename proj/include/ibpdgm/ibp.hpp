#pragma once

// Truncated stick-breaking Indian Buffet Process.

#include <vector>

#include <Eigen/Core>

#include "ibpdgm/distributions.hpp"

namespace ibpdgm::ibp {

/// Replaces log(0) events in log-probabilities.
inline constexpr double kLogZeroSentinel = -1e10;

/// Global Beta variational parameters q(v_k) = Beta(a_k, b_k), stored in log
/// space, plus the IBP concentration. Truncated at K sticks.
struct GlobalSticks {
  int K = 0;
  double alpha = 2.0;
  Eigen::VectorXd log_a;
  Eigen::VectorXd log_b;

  /// q(v_k) initialised to the prior Beta(alpha, 1).
  static GlobalSticks from_prior(int K, double alpha);

  dist::BetaParams beta(int k) const { return {std::exp(log_a[k]), std::exp(log_b[k])}; }
  void validate() const;
};

/// pi_k = prod_{j<=k} v_j. Every v_j must lie in (0, 1].
Eigen::VectorXd stick_breaking(const Eigen::VectorXd& v);

/// sum_k [zhat_k ln pi_k + (1 - zhat_k) ln(1 - pi_k)]; a zhat_k = 0 with
/// pi_k = 1 contributes kLogZeroSentinel.
double ibp_prior_log_prob(const Eigen::VectorXd& zhat, const Eigen::VectorXd& pi);

/// Per-component terms of ibp_prior_log_prob computed from the sticks in log
/// space, so tiny products of v do not underflow.
Eigen::VectorXd ibp_prior_terms_from_sticks(const Eigen::VectorXd& zhat, const Eigen::VectorXd& v);

/// sum_k [ln alpha + (alpha - 1) ln v_k], the Beta(alpha, 1) prior on sticks.
double sticks_prior_log_prob(const Eigen::VectorXd& v, double alpha);

struct ActiveComponents {
  std::vector<int> indices;
  int count = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
};

/// `pi_hat` is K x N: q(zhat_ik = 1) for every data point. Component k is
/// active when its dataset mean exceeds tau.
ActiveComponents active_components(const Eigen::MatrixXd& pi_hat, double tau = 0.01);

}  // namespace ibpdgm::ibp

#pragma once

// Sampling, log-densities, KL terms and score functions for the four
// families the model uses: diagonal Gaussian, Bernoulli (logit storage),
// Beta and Categorical.

#include <utility>

#include <Eigen/Core>

#include "ibpdgm/rng.hpp"

namespace ibpdgm::dist {

struct DiagGaussianParams {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  ///< strictly positive

  Eigen::VectorXd stddev() const { return var.cwiseSqrt(); }
  void validate() const;
};

/// Probabilities are stored as logits; probs() squashes them.
struct BernoulliParams {
  Eigen::VectorXd logits;

  Eigen::VectorXd probs() const;
  static BernoulliParams from_probs(const Eigen::VectorXd& p);
};

struct BetaParams {
  double a = 1.0;
  double b = 1.0;
};

/// Simplex-valued class probabilities.
class CategoricalParams {
 public:
  CategoricalParams() = default;
  /// Throws unless `probs` is non-negative and sums to 1 within 1e-9.
  explicit CategoricalParams(Eigen::VectorXd probs);
  static CategoricalParams from_logits(const Eigen::VectorXd& logits);

  const Eigen::VectorXd& probs() const { return probs_; }
  int num_classes() const { return static_cast<int>(probs_.size()); }

 private:
  Eigen::VectorXd probs_;
};

// -- Gaussian ---------------------------------------------------------------

/// mean + sqrt(var) * eps
Eigen::VectorXd gaussian_reparam_sample(const DiagGaussianParams& p, const Eigen::VectorXd& eps);

/// KL(N(mean, diag var) || N(0, I)) = sum 0.5 (mean^2 + var - 1 - ln var)
double gaussian_kl_to_standard(const DiagGaussianParams& p);

double gaussian_log_prob(const Eigen::VectorXd& z, const DiagGaussianParams& p);

/// d log N(z | mean, var) / d mean and / d var.
std::pair<Eigen::VectorXd, Eigen::VectorXd> gaussian_score_grad(const Eigen::VectorXd& z,
                                                                const DiagGaussianParams& p);

// -- Bernoulli --------------------------------------------------------------

/// z holds 0/1 entries.
double bernoulli_log_prob(const Eigen::VectorXd& z, const BernoulliParams& p);

/// d log q(z) / d logit_k = z_k - sigmoid(logit_k)
Eigen::VectorXd bernoulli_score_grad(const Eigen::VectorXd& z, const BernoulliParams& p);

// -- Gamma / Beta -------------------------------------------------------------

/// Marsaglia-Tsang; shapes below 1 use the U^(1/shape) boost.
double gamma_sample(double shape, Rng& rng);

inline constexpr double kBetaClamp = 1e-7;

/// Beta(a, b) via two Gamma draws, clamped to [1e-7, 1 - 1e-7].
double beta_sample(const BetaParams& p, Rng& rng);

double beta_log_prob(double v, const BetaParams& p);

/// (d/da, d/db) of beta_log_prob.
std::pair<double, double> beta_score_grad(double v, const BetaParams& p);

double digamma(double x);

// -- Categorical --------------------------------------------------------------

double categorical_log_prob(int y, const CategoricalParams& p);

/// Inverse-CDF draw.
int categorical_sample(const CategoricalParams& p, Rng& rng);

/// KL(p || Uniform(C)) = sum_c p_c ln(C p_c)
double categorical_kl_to_uniform(const CategoricalParams& p);

/// d log softmax(logits)_y / d logits = onehot(y) - softmax(logits)
Eigen::VectorXd categorical_score_grad(int y, const Eigen::VectorXd& logits);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

}  // namespace ibpdgm::dist

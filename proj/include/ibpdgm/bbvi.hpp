#pragma once

// Monte Carlo ELBO and gradient estimation.
//
// Gaussian latents use pathwise gradients; zhat logits and the stick Beta
// parameters use score-function gradients with weighted-score control
// variates. Each variable's learning signal keeps only the ELBO terms in its
// Markov blanket.
//
// Two implementations share one contract:
//  - estimate_elbo_and_grads: points are grouped in fixed-size chunks, each
//    chunk is evaluated with matrix products and chunks run under OpenMP.
//    Chunk results are reduced in chunk order, so the output does not depend
//    on the thread count.
//  - reference::estimate_elbo_and_grads: serial, one point / sample / class
//    at a time. Kept for tests and benchmarks.
// Both consume identical per-point random streams, so they agree up to
// floating-point summation order.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ibpdgm/model.hpp"

namespace ibpdgm::bbvi {

enum class CvMode { none, same_sample, leave_one_out };

CvMode parse_cv_mode(const std::string& s);
std::string to_string(CvMode m);

struct McConfig {
  int samples = 8;
  double cv_eps = 1e-10;
  CvMode cv = CvMode::leave_one_out;

  void validate() const;
};

/// Per-sample learning signals f (S x P) and scores h_n = d log q / d param_n
/// (S x P). A shared scalar signal is broadcast across columns.
struct ScoreSampleSet {
  Eigen::MatrixXd signal;
  Eigen::MatrixXd score;

  static ScoreSampleSet with_shared_signal(const Eigen::VectorXd& f, const Eigen::MatrixXd& h);
  Eigen::Index num_samples() const { return score.rows(); }
};

/// a_n = Cov(f h_n, h_n) / Var(h_n); 0 where Var(h_n) < cv_eps. Needs S >= 2.
Eigen::VectorXd control_variate_coeffs(const ScoreSampleSet& samples, double cv_eps);

/// (1/S) sum_s h_s * (f_s - a)
Eigen::VectorXd score_function_grad(const ScoreSampleSet& samples, const Eigen::VectorXd& a);

/// Like score_function_grad, but sample s uses coefficients estimated from the
/// other S - 1 samples. Needs S >= 3.
Eigen::VectorXd score_function_grad_loo(const ScoreSampleSet& samples, double cv_eps);

/// Dispatches on cfg.cv.
Eigen::VectorXd score_function_grad(const ScoreSampleSet& samples, const McConfig& cfg);

/// Gradient blocks laid out like the model parameters.
struct ModelGrads {
  Eigen::VectorXd encoder;
  Eigen::VectorXd classifier;
  Eigen::VectorXd decoder;
  Eigen::VectorXd log_a;
  Eigen::VectorXd log_b;

  static ModelGrads zeros_like(const IbpDgm& m);
  ModelGrads& operator+=(const ModelGrads& o);
  void scale(double s);
  double squared_norm() const;
  bool all_finite() const;
};

/// Stochastic ELBO, split by term. kl_gauss is stored as the (positive) KL.
struct ElboBreakdown {
  double total = 0.0;
  double recon = 0.0;
  double kl_gauss = 0.0;
  double term_zhat = 0.0;
  double term_v = 0.0;
  double term_y = 0.0;
  double term_sup = 0.0;
  double log_prior_theta = 0.0;
  ModelGrads grads;  ///< gradient of `total` (ascent direction)

  double sum_of_terms() const {
    return recon - kl_gauss + term_zhat + term_v + term_y + term_sup + log_prior_theta;
  }
};

/// A non-finite value appeared while estimating; `term` names it.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

struct Batch {
  Eigen::MatrixXd features;          ///< D x B
  std::vector<int> labels;           ///< -1 = unlabeled
  std::vector<std::uint64_t> ids;    ///< keys the per-point random streams
  /// Per-point scale of the local terms. Empty means N / B for every point.
  std::vector<double> weights;

  Eigen::Index size() const { return features.cols(); }
};

struct EstimateOptions {
  McConfig mc;
  UnlabeledMode mode = UnlabeledMode::marginalize;
  double alpha_sup = 0.0;
  /// N of the full dataset; per-point terms are scaled by N / B. 0 means B.
  double dataset_size = 0.0;
  /// Replace q(v) by point masses at these values (no stick gradients, term_v = 0).
  std::optional<Eigen::VectorXd> frozen_v;
  bool include_theta_prior = true;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  /// Fixed chunking + ordered reduction; otherwise per-thread accumulation.
  bool deterministic = true;
  int chunk_size = 16;
  /// OpenMP threads; 0 keeps the runtime default.
  int threads = 0;
};

ElboBreakdown estimate_elbo_and_grads(const IbpDgm& m, const Batch& batch, const EstimateOptions& opts);

namespace reference {

ElboBreakdown estimate_elbo_and_grads(const IbpDgm& m, const Batch& batch, const EstimateOptions& opts);

}  // namespace reference

// Shared by both implementations.
namespace detail {

void validate(const IbpDgm& m, const Batch& batch, const EstimateOptions& opts);

/// Score-function parts of one data point given its S draws and per-sample
/// reconstruction values.
struct ScoreParts {
  Eigen::VectorXd grad_zhat_logits;  ///< K
  Eigen::VectorXd grad_log_a;        ///< K
  Eigen::VectorXd grad_log_b;        ///< K
};

ScoreParts score_parts(const IbpDgm& m, const Encoded& enc, const std::vector<LatentDraw>& draws,
                       const Eigen::VectorXd& recon_per_sample, double local_scale,
                       double global_share, bool sticks_frozen, const McConfig& mc);

void check_finite(double value, const char* term);
void finalize(ElboBreakdown& e, const IbpDgm& m, const EstimateOptions& opts);

}  // namespace detail

}  // namespace ibpdgm::bbvi

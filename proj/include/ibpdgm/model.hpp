#pragma once

// The IBP deep generative model: amortised encoder for (mu, sigma^2, zhat
// logits), classifier for q(y | x), class-conditional decoder over
// z = ztilde * zhat, global stick posteriors, and the spherical prior on the
// decoder weights.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ibpdgm/distributions.hpp"
#include "ibpdgm/ibp.hpp"
#include "ibpdgm/nn.hpp"
#include "ibpdgm/rng.hpp"

namespace ibpdgm {

enum class LikelihoodKind { bernoulli, gaussian };

/// How unlabeled points enter the reconstruction term.
///  - marginalize: sum_c q(y=c|x) log p(x | z, c)
///  - unconditional: log p(x | z, 0-vector)
enum class UnlabeledMode { marginalize, unconditional };

LikelihoodKind parse_likelihood_kind(const std::string& s);
UnlabeledMode parse_unlabeled_mode(const std::string& s);
std::string to_string(LikelihoodKind k);
std::string to_string(UnlabeledMode m);

/// Floor added to every softplus-produced variance.
inline constexpr double kVarianceFloor = 1e-6;

struct ModelConfig {
  int input_dim = 0;
  int K = 50;
  int num_classes = 1;
  int hidden = 500;  ///< width of the single hidden layer; 0 means none
  double alpha = 2.0;
  double sigma_theta_sq = 1e-2;
  LikelihoodKind kind = LikelihoodKind::bernoulli;

  void validate() const;
  std::vector<int> hidden_dims() const;
  int decoder_output_dim() const;
};

struct IbpDgm {
  ModelConfig config;
  nn::DenseNet encoder;     ///< D -> [mu (K), raw variance (K), zhat logits (K)]
  nn::DenseNet classifier;  ///< D -> C logits
  nn::DenseNet decoder;     ///< [z (K); label embedding (C)] -> likelihood parameters
  ibp::GlobalSticks sticks;

  /// Glorot-initialised networks, sticks at the prior.
  static IbpDgm create(const ModelConfig& cfg, Rng& rng);
  /// All network parameters zero.
  static IbpDgm zeros(const ModelConfig& cfg);

  int D() const { return config.input_dim; }
  int K() const { return config.K; }
  int C() const { return config.num_classes; }

  void validate() const;
};

struct Encoded {
  dist::DiagGaussianParams gauss;
  dist::BernoulliParams zhat;
  Eigen::VectorXd raw_var;
};

/// Splits one encoder output column (3K) into posterior parameters.
Encoded encoded_from_output(const Eigen::Ref<const Eigen::VectorXd>& out, int K);

struct EncodeResult {
  Encoded encoded;
  nn::Tape tape;
};

EncodeResult encode(const IbpDgm& m, const Eigen::VectorXd& x);

/// z = ztilde * zhat elementwise.
Eigen::VectorXd compose_latent(const Eigen::VectorXd& ztilde, const Eigen::VectorXd& zhat);

/// Bernoulli probabilities are kept in [kProbClip, 1 - kProbClip].
inline constexpr double kProbClip = 1e-6;

/// Bernoulli kind: `mean` holds pixel probabilities. Gaussian kind: `mean`
/// and `var` hold the per-dimension moments.
struct LikelihoodParams {
  LikelihoodKind kind = LikelihoodKind::bernoulli;
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

LikelihoodParams likelihood_params_from_output(LikelihoodKind kind,
                                               const Eigen::Ref<const Eigen::VectorXd>& out);

LikelihoodParams decode(const IbpDgm& m, const Eigen::VectorXd& z, const Eigen::VectorXd& y_embed);

/// log p(x | params). Bernoulli probabilities are clipped to [kProbClip, 1 - kProbClip].
double likelihood_log_prob(const Eigen::VectorXd& x, const LikelihoodParams& params);

/// log p(x | decoder output) evaluated on the raw decoder output (logits for
/// Bernoulli, [mean; raw variance] for Gaussian). When `grad` is non-null it
/// receives d/d output.
double recon_from_output(LikelihoodKind kind, const double* x, const double* out, int D,
                         double* grad);

/// sum_j ln N(theta_j | 0, sigma_theta^2) over every decoder parameter, and its gradient.
std::pair<double, Eigen::VectorXd> theta_log_prior(const IbpDgm& m);

dist::CategoricalParams classify(const IbpDgm& m, const Eigen::VectorXd& x);
/// argmax_c q(y = c | x), lowest index on ties.
int predict(const IbpDgm& m, const Eigen::VectorXd& x);
std::vector<int> predict_batch(const IbpDgm& m, const Eigen::MatrixXd& x);

int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v);

/// q(zhat_ik = 1) for every column of `x` (K x N).
Eigen::MatrixXd posterior_inclusion(const IbpDgm& m, const Eigen::MatrixXd& x);

/// One joint Monte Carlo sample of the latent variables of a data point.
struct LatentDraw {
  Eigen::VectorXd eps;     ///< standard normal noise behind ztilde
  Eigen::VectorXd ztilde;
  Eigen::VectorXd zhat;    ///< 0/1
  Eigen::VectorXd v;       ///< stick draws
  std::optional<int> y;
  double log_q_ztilde = 0.0;
  double log_p_ztilde = 0.0;
  double log_q_zhat = 0.0;
  double log_p_zhat = 0.0;
  double log_q_v = 0.0;  ///< 0 when the sticks are frozen point masses
  double log_p_v = 0.0;

  Eigen::VectorXd z() const { return compose_latent(ztilde, zhat); }
};

/// Draws eps (K normals), the zhat uniforms (K) and then the K sticks, in that
/// order, from `rng`. With `frozen_v` the sticks are fixed and no Beta draw is made.
LatentDraw draw_latents(const Encoded& enc, const ibp::GlobalSticks& sticks,
                        const Eigen::VectorXd* frozen_v, Rng& rng);

struct TermOptions {
  UnlabeledMode mode = UnlabeledMode::marginalize;
  double alpha_sup = 0.0;
};

/// Single-draw ELBO terms of one data point plus the pathwise gradients of
/// recon - kl_gauss + term_y + term_sup. Score-function parts (zhat logits,
/// sticks) are not included here.
struct PointTerms {
  double recon = 0.0;
  double kl_gauss = 0.0;
  double term_zhat = 0.0;  ///< log p(zhat | pi) - log q(zhat)
  double term_v = 0.0;     ///< log p(v) - log q(v) (global term, unscaled)
  double term_y = 0.0;     ///< -KL(q(y) || Uniform), unlabeled only
  double term_sup = 0.0;   ///< alpha_sup * log q(y_i | x_i), labeled only
  Eigen::VectorXd recon_per_slot;  ///< per class in marginalize mode, else one entry

  Eigen::VectorXd grad_encoder_out;  ///< 3K, zhat-logit block left at zero
  Eigen::VectorXd grad_class_logits; ///< C
  Eigen::VectorXd grad_decoder;      ///< decoder parameters

  double total() const { return recon - kl_gauss + term_zhat + term_v + term_y + term_sup; }
};

/// `label` < 0 marks an unlabeled point.
PointTerms per_point_elbo_terms(const IbpDgm& m, const Eigen::VectorXd& x, int label,
                                const Encoded& enc, const Eigen::VectorXd& class_logits,
                                const LatentDraw& draw, const TermOptions& opts);

struct Generated {
  Eigen::MatrixXd means;    ///< D x n likelihood means
  Eigen::MatrixXd samples;  ///< D x n sampled observations
  Eigen::MatrixXd zhat;     ///< K x n
  std::vector<int> labels;
};

/// Ancestral sampling from the prior: v ~ Beta(alpha, 1), pi by stick breaking,
/// zhat ~ Bernoulli(pi), ztilde ~ N(0, I), y given or uniform.
Generated generate(const IbpDgm& m, int n, Rng& rng, std::optional<int> y = std::nullopt);

}  // namespace ibpdgm

#include "ibpdgm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ibpdgm/numerics.hpp"

namespace ibpdgm {

LikelihoodKind parse_likelihood_kind(const std::string& s) {
  if (s == "bernoulli") return LikelihoodKind::bernoulli;
  if (s == "gaussian") return LikelihoodKind::gaussian;
  throw std::invalid_argument("unknown likelihood kind '" + s + "'");
}

UnlabeledMode parse_unlabeled_mode(const std::string& s) {
  if (s == "marginalize") return UnlabeledMode::marginalize;
  if (s == "unconditional") return UnlabeledMode::unconditional;
  throw std::invalid_argument("unknown unlabeled mode '" + s + "'");
}

std::string to_string(LikelihoodKind k) {
  return k == LikelihoodKind::bernoulli ? "bernoulli" : "gaussian";
}

std::string to_string(UnlabeledMode m) {
  return m == UnlabeledMode::marginalize ? "marginalize" : "unconditional";
}

void ModelConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("ModelConfig: input_dim must be >= 1");
  if (K < 1) throw std::invalid_argument("ModelConfig: K must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("ModelConfig: num_classes must be >= 1");
  if (hidden < 0) throw std::invalid_argument("ModelConfig: hidden must be >= 0");
  if (!(alpha > 0.0)) throw std::invalid_argument("ModelConfig: alpha must be positive");
  if (!(sigma_theta_sq > 0.0) || !std::isfinite(sigma_theta_sq)) {
    throw std::invalid_argument("ModelConfig: sigma_theta_sq must be positive and finite");
  }
}

std::vector<int> ModelConfig::hidden_dims() const {
  return hidden > 0 ? std::vector<int>{hidden} : std::vector<int>{};
}

int ModelConfig::decoder_output_dim() const {
  return kind == LikelihoodKind::bernoulli ? input_dim : 2 * input_dim;
}

IbpDgm IbpDgm::create(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  IbpDgm m;
  m.config = cfg;
  const auto hidden = cfg.hidden_dims();
  m.encoder = nn::glorot_init(cfg.input_dim, hidden, 3 * cfg.K, rng);
  m.classifier = nn::glorot_init(cfg.input_dim, hidden, cfg.num_classes, rng);
  m.decoder = nn::glorot_init(cfg.K + cfg.num_classes, hidden, cfg.decoder_output_dim(), rng);
  m.sticks = ibp::GlobalSticks::from_prior(cfg.K, cfg.alpha);
  return m;
}

IbpDgm IbpDgm::zeros(const ModelConfig& cfg) {
  cfg.validate();
  IbpDgm m;
  m.config = cfg;
  const auto hidden = cfg.hidden_dims();
  m.encoder = nn::DenseNet(cfg.input_dim, hidden, 3 * cfg.K);
  m.classifier = nn::DenseNet(cfg.input_dim, hidden, cfg.num_classes);
  m.decoder = nn::DenseNet(cfg.K + cfg.num_classes, hidden, cfg.decoder_output_dim());
  m.sticks = ibp::GlobalSticks::from_prior(cfg.K, cfg.alpha);
  return m;
}

void IbpDgm::validate() const {
  config.validate();
  if (encoder.input_dim() != D() || encoder.output_dim() != 3 * K()) {
    throw std::invalid_argument("IbpDgm: encoder shape inconsistent with config");
  }
  if (classifier.input_dim() != D() || classifier.output_dim() != C()) {
    throw std::invalid_argument("IbpDgm: classifier shape inconsistent with config");
  }
  if (decoder.input_dim() != K() + C() || decoder.output_dim() != config.decoder_output_dim()) {
    throw std::invalid_argument("IbpDgm: decoder shape inconsistent with config");
  }
  if (sticks.K != K()) throw std::invalid_argument("IbpDgm: sticks truncation differs from K");
  sticks.validate();
}

Encoded encoded_from_output(const Eigen::Ref<const Eigen::VectorXd>& out, int K) {
  if (out.size() != 3 * K) throw std::invalid_argument("encoded_from_output: expected 3K outputs");
  Encoded e;
  e.gauss.mean = out.segment(0, K);
  e.raw_var = out.segment(K, K);
  e.gauss.var = e.raw_var.unaryExpr([](double r) { return softplus(r) + kVarianceFloor; });
  e.zhat.logits = out.segment(2 * K, K);
  return e;
}

namespace {

void check_input(const IbpDgm& m, const Eigen::VectorXd& x, const char* who) {
  if (x.size() != m.D()) {
    throw std::invalid_argument(std::string(who) + ": input has " + std::to_string(x.size()) +
                                " entries, model expects " + std::to_string(m.D()));
  }
  if (m.config.kind == LikelihoodKind::bernoulli && ((x.array() < 0.0).any() || (x.array() > 1.0).any())) {
    throw std::invalid_argument(std::string(who) + ": Bernoulli-kind input outside [0,1]");
  }
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

}  // namespace

EncodeResult encode(const IbpDgm& m, const Eigen::VectorXd& x) {
  check_input(m, x, "encode");
  auto f = nn::forward(m.encoder, x);
  return {encoded_from_output(f.output.col(0), m.K()), std::move(f.tape)};
}

Eigen::VectorXd compose_latent(const Eigen::VectorXd& ztilde, const Eigen::VectorXd& zhat) {
  if (ztilde.size() != zhat.size()) throw std::invalid_argument("compose_latent: length mismatch");
  return ztilde.cwiseProduct(zhat);
}

LikelihoodParams likelihood_params_from_output(LikelihoodKind kind,
                                               const Eigen::Ref<const Eigen::VectorXd>& out) {
  LikelihoodParams p;
  p.kind = kind;
  if (kind == LikelihoodKind::bernoulli) {
    p.mean = out.unaryExpr([](double l) { return std::clamp(sigmoid(l), kProbClip, 1.0 - kProbClip); });
  } else {
    const Eigen::Index D = out.size() / 2;
    p.mean = out.head(D);
    p.var = out.tail(D).unaryExpr([](double r) { return softplus(r) + kVarianceFloor; });
  }
  return p;
}

LikelihoodParams decode(const IbpDgm& m, const Eigen::VectorXd& z, const Eigen::VectorXd& y_embed) {
  if (z.size() != m.K() || y_embed.size() != m.C()) throw std::invalid_argument("decode: dimension mismatch");
  Eigen::VectorXd in(m.K() + m.C());
  in << z, y_embed;
  const Eigen::MatrixXd out = nn::predict(m.decoder, in);
  return likelihood_params_from_output(m.config.kind, out.col(0));
}

double likelihood_log_prob(const Eigen::VectorXd& x, const LikelihoodParams& params) {
  if (x.size() != params.mean.size()) throw std::invalid_argument("likelihood_log_prob: dimension mismatch");
  double s = 0.0;
  if (params.kind == LikelihoodKind::bernoulli) {
    if (params.var.size() != 0) throw std::invalid_argument("likelihood_log_prob: kind mismatch");
    for (Eigen::Index d = 0; d < x.size(); ++d) {
      const double p = std::clamp(params.mean[d], kProbClip, 1.0 - kProbClip);
      s += x[d] * std::log(p) + (1.0 - x[d]) * std::log1p(-p);
    }
  } else {
    if (params.var.size() != x.size()) throw std::invalid_argument("likelihood_log_prob: kind mismatch");
    for (Eigen::Index d = 0; d < x.size(); ++d) {
      const double r = x[d] - params.mean[d];
      s += -0.5 * (kLog2Pi + std::log(params.var[d])) - 0.5 * r * r / params.var[d];
    }
  }
  return s;
}

double recon_from_output(LikelihoodKind kind, const double* x, const double* out, int D, double* grad) {
  double s = 0.0;
  if (kind == LikelihoodKind::bernoulli) {
    for (int d = 0; d < D; ++d) {
      const double l = out[d];
      s += x[d] * log_sigmoid(l) + (1.0 - x[d]) * log_sigmoid(-l);
      if (grad) grad[d] = x[d] - sigmoid(l);
    }
  } else {
    for (int d = 0; d < D; ++d) {
      const double mean = out[d];
      const double raw = out[D + d];
      const double var = softplus(raw) + kVarianceFloor;
      const double r = x[d] - mean;
      s += -0.5 * (kLog2Pi + std::log(var)) - 0.5 * r * r / var;
      if (grad) {
        grad[d] = r / var;
        grad[D + d] = (-0.5 / var + 0.5 * r * r / (var * var)) * sigmoid(raw);
      }
    }
  }
  return s;
}

std::pair<double, Eigen::VectorXd> theta_log_prior(const IbpDgm& m) {
  const auto& theta = m.decoder.params();
  const double s2 = m.config.sigma_theta_sq;
  const double n = static_cast<double>(theta.size());
  const double value = -0.5 * n * (kLog2Pi + std::log(s2)) - 0.5 * theta.squaredNorm() / s2;
  return {value, -theta / s2};
}

int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

dist::CategoricalParams classify(const IbpDgm& m, const Eigen::VectorXd& x) {
  check_input(m, x, "classify");
  const Eigen::MatrixXd logits = nn::predict(m.classifier, x);
  return dist::CategoricalParams::from_logits(logits.col(0));
}

int predict(const IbpDgm& m, const Eigen::VectorXd& x) {
  check_input(m, x, "predict");
  const Eigen::MatrixXd logits = nn::predict(m.classifier, x);
  return argmax_lowest(logits.col(0));
}

namespace {

constexpr Eigen::Index kEvalChunk = 1024;

}  // namespace

std::vector<int> predict_batch(const IbpDgm& m, const Eigen::MatrixXd& x) {
  if (x.rows() != m.D()) throw std::invalid_argument("predict_batch: dimension mismatch");
  std::vector<int> out(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index c0 = 0; c0 < x.cols(); c0 += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, x.cols() - c0);
    const Eigen::MatrixXd logits = nn::predict(m.classifier, x.middleCols(c0, n));
    for (Eigen::Index j = 0; j < n; ++j) out[static_cast<std::size_t>(c0 + j)] = argmax_lowest(logits.col(j));
  }
  return out;
}

Eigen::MatrixXd posterior_inclusion(const IbpDgm& m, const Eigen::MatrixXd& x) {
  if (x.rows() != m.D()) throw std::invalid_argument("posterior_inclusion: dimension mismatch");
  const int K = m.K();
  Eigen::MatrixXd pi(K, x.cols());
  for (Eigen::Index c0 = 0; c0 < x.cols(); c0 += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, x.cols() - c0);
    const Eigen::MatrixXd out = nn::predict(m.encoder, x.middleCols(c0, n));
    pi.middleCols(c0, n) = out.bottomRows(K).unaryExpr(&sigmoid);
  }
  return pi;
}

LatentDraw draw_latents(const Encoded& enc, const ibp::GlobalSticks& sticks,
                        const Eigen::VectorXd* frozen_v, Rng& rng) {
  const Eigen::Index K = enc.gauss.mean.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  LatentDraw d;
  d.eps.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) d.eps[k] = normal(rng);
  d.ztilde = dist::gaussian_reparam_sample(enc.gauss, d.eps);
  const Eigen::VectorXd pi_hat = enc.zhat.probs();
  d.zhat.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) d.zhat[k] = unif(rng) < pi_hat[k] ? 1.0 : 0.0;
  if (frozen_v) {
    if (frozen_v->size() != K) throw std::invalid_argument("draw_latents: frozen sticks have wrong length");
    d.v = *frozen_v;
  } else {
    d.v.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) d.v[k] = dist::beta_sample(sticks.beta(static_cast<int>(k)), rng);
    for (Eigen::Index k = 0; k < K; ++k) {
      d.log_q_v += dist::beta_log_prob(d.v[k], sticks.beta(static_cast<int>(k)));
    }
    d.log_p_v = ibp::sticks_prior_log_prob(d.v, sticks.alpha);
  }
  d.log_q_ztilde = dist::gaussian_log_prob(d.ztilde, enc.gauss);
  d.log_p_ztilde = -0.5 * (static_cast<double>(K) * kLog2Pi + d.ztilde.squaredNorm());
  d.log_q_zhat = dist::bernoulli_log_prob(d.zhat, enc.zhat);
  d.log_p_zhat = ibp::ibp_prior_terms_from_sticks(d.zhat, d.v).sum();
  return d;
}

PointTerms per_point_elbo_terms(const IbpDgm& m, const Eigen::VectorXd& x, int label,
                                const Encoded& enc, const Eigen::VectorXd& class_logits,
                                const LatentDraw& draw, const TermOptions& opts) {
  const int K = m.K();
  const int C = m.C();
  const int D = m.D();
  if (x.size() != D || class_logits.size() != C || draw.zhat.size() != K) {
    throw std::invalid_argument("per_point_elbo_terms: dimension mismatch");
  }
  if (label >= C) throw std::invalid_argument("per_point_elbo_terms: label out of range");
  if (opts.mode != UnlabeledMode::marginalize && opts.mode != UnlabeledMode::unconditional) {
    throw std::invalid_argument("per_point_elbo_terms: unknown unlabeled mode");
  }
  const bool labeled = label >= 0;
  const bool marginal = !labeled && opts.mode == UnlabeledMode::marginalize;
  const Eigen::VectorXd log_w = log_softmax(class_logits);
  const Eigen::VectorXd w = log_w.array().exp();

  const int slots = marginal ? C : 1;
  const Eigen::VectorXd z = draw.z();
  Eigen::MatrixXd zin = Eigen::MatrixXd::Zero(K + C, slots);
  Eigen::VectorXd slot_weight = Eigen::VectorXd::Ones(slots);
  for (int j = 0; j < slots; ++j) {
    zin.col(j).head(K) = z;
    if (labeled) {
      zin(K + label, j) = 1.0;
    } else if (marginal) {
      zin(K + j, j) = 1.0;
      slot_weight[j] = w[j];
    }
  }

  PointTerms t;
  auto fwd = nn::forward(m.decoder, zin);
  Eigen::MatrixXd gout(fwd.output.rows(), slots);
  t.recon_per_slot.resize(slots);
  for (int j = 0; j < slots; ++j) {
    t.recon_per_slot[j] = recon_from_output(m.config.kind, x.data(), fwd.output.col(j).data(), D,
                                            gout.col(j).data());
    gout.col(j) *= slot_weight[j];
  }
  t.recon = slot_weight.dot(t.recon_per_slot);
  t.grad_decoder = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.decoder.num_params()));
  const Eigen::MatrixXd gin = nn::backward_accumulate(m.decoder, fwd.tape, gout, t.grad_decoder);
  const Eigen::VectorXd dz = gin.topRows(K).rowwise().sum();

  const Eigen::ArrayXd dzt = (dz.array() * draw.zhat.array());
  const Eigen::ArrayXd var = enc.gauss.var.array();
  const Eigen::ArrayXd sd = var.sqrt();
  const Eigen::ArrayXd dsig2_draw = enc.raw_var.unaryExpr(&sigmoid).array();
  t.grad_encoder_out = Eigen::VectorXd::Zero(3 * K);
  t.grad_encoder_out.segment(0, K) = (dzt - enc.gauss.mean.array()).matrix();
  t.grad_encoder_out.segment(K, K) =
      ((dzt * draw.eps.array() / (2.0 * sd) - 0.5 * (1.0 - 1.0 / var)) * dsig2_draw).matrix();

  t.kl_gauss = dist::gaussian_kl_to_standard(enc.gauss);
  t.term_zhat = draw.log_p_zhat - draw.log_q_zhat;
  t.term_v = draw.log_p_v - draw.log_q_v;

  t.grad_class_logits = Eigen::VectorXd::Zero(C);
  if (labeled) {
    t.term_sup = opts.alpha_sup * log_w[label];
    t.grad_class_logits = -opts.alpha_sup * w;
    t.grad_class_logits[label] += opts.alpha_sup;
  } else {
    const double logC = std::log(static_cast<double>(C));
    Eigen::VectorXd g = Eigen::VectorXd::Zero(C);
    double kl = 0.0;
    for (int c = 0; c < C; ++c) {
      if (w[c] <= 0.0) continue;
      kl += w[c] * (log_w[c] + logC);
      g[c] = -(log_w[c] + logC + 1.0);
      if (marginal) g[c] += t.recon_per_slot[c];
    }
    t.term_y = -kl;
    t.grad_class_logits = w.cwiseProduct((g.array() - w.dot(g)).matrix());
  }
  return t;
}

Generated generate(const IbpDgm& m, int n, Rng& rng, std::optional<int> y) {
  if (n < 1) throw std::invalid_argument("generate: n must be >= 1");
  const int K = m.K();
  const int C = m.C();
  const int D = m.D();
  if (y && (*y < 0 || *y >= C)) throw std::invalid_argument("generate: class out of range");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, C - 1);

  Generated g;
  g.zhat.resize(K, n);
  g.labels.resize(static_cast<std::size_t>(n));
  Eigen::MatrixXd zin = Eigen::MatrixXd::Zero(K + C, n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v(K);
    for (int k = 0; k < K; ++k) v[k] = dist::beta_sample({m.sticks.alpha, 1.0}, rng);
    const Eigen::VectorXd pi = ibp::stick_breaking(v);
    for (int k = 0; k < K; ++k) {
      g.zhat(k, i) = unif(rng) < pi[k] ? 1.0 : 0.0;
      zin(k, i) = normal(rng) * g.zhat(k, i);
    }
    const int c = y ? *y : pick(rng);
    g.labels[static_cast<std::size_t>(i)] = c;
    zin(K + c, i) = 1.0;
  }
  const Eigen::MatrixXd out = nn::predict(m.decoder, zin);
  g.means.resize(D, n);
  g.samples.resize(D, n);
  for (int i = 0; i < n; ++i) {
    const auto p = likelihood_params_from_output(m.config.kind, out.col(i));
    g.means.col(i) = p.mean;
    for (int d = 0; d < D; ++d) {
      g.samples(d, i) = m.config.kind == LikelihoodKind::bernoulli
                            ? (unif(rng) < p.mean[d] ? 1.0 : 0.0)
                            : p.mean[d] + std::sqrt(p.var[d]) * normal(rng);
    }
  }
  return g;
}

}  // namespace ibpdgm

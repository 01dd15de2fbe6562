#include "ibpdgm/bbvi.hpp"

#include <cmath>
#include <exception>

#include <omp.h>

#include "ibpdgm/numerics.hpp"

namespace ibpdgm::bbvi {

CvMode parse_cv_mode(const std::string& s) {
  if (s == "none") return CvMode::none;
  if (s == "same_sample") return CvMode::same_sample;
  if (s == "leave_one_out") return CvMode::leave_one_out;
  throw std::invalid_argument("unknown control-variate mode '" + s + "'");
}

std::string to_string(CvMode m) {
  switch (m) {
    case CvMode::none: return "none";
    case CvMode::same_sample: return "same_sample";
    case CvMode::leave_one_out: return "leave_one_out";
  }
  return "?";
}

void McConfig::validate() const {
  if (samples < 1) throw std::invalid_argument("McConfig: samples must be >= 1");
  if (cv == CvMode::same_sample && samples < 2) {
    throw std::invalid_argument("McConfig: control variates need at least 2 samples");
  }
  if (cv == CvMode::leave_one_out && samples < 3) {
    throw std::invalid_argument("McConfig: leave-one-out control variates need at least 3 samples");
  }
  if (!(cv_eps > 0.0)) throw std::invalid_argument("McConfig: cv_eps must be positive");
}

ScoreSampleSet ScoreSampleSet::with_shared_signal(const Eigen::VectorXd& f, const Eigen::MatrixXd& h) {
  if (f.size() != h.rows()) throw std::invalid_argument("ScoreSampleSet: sample counts differ");
  ScoreSampleSet s;
  s.signal = f.replicate(1, h.cols());
  s.score = h;
  return s;
}

namespace {

void check_set(const ScoreSampleSet& s) {
  if (s.signal.rows() != s.score.rows() || s.signal.cols() != s.score.cols()) {
    throw std::invalid_argument("ScoreSampleSet: signal and score shapes differ");
  }
}

}  // namespace

Eigen::VectorXd control_variate_coeffs(const ScoreSampleSet& samples, double cv_eps) {
  check_set(samples);
  const Eigen::Index S = samples.num_samples();
  if (S < 2) throw std::invalid_argument("control_variate_coeffs: need at least 2 samples");
  const Eigen::MatrixXd g = samples.signal.cwiseProduct(samples.score);
  const Eigen::MatrixXd& h = samples.score;
  const Eigen::RowVectorXd gm = g.colwise().mean();
  const Eigen::RowVectorXd hm = h.colwise().mean();
  Eigen::VectorXd a(h.cols());
  const double denom = static_cast<double>(S - 1);
  for (Eigen::Index n = 0; n < h.cols(); ++n) {
    const double var = (h.col(n).array() - hm[n]).square().sum() / denom;
    if (var < cv_eps) {
      a[n] = 0.0;
      continue;
    }
    const double cov = ((g.col(n).array() - gm[n]) * (h.col(n).array() - hm[n])).sum() / denom;
    a[n] = cov / var;
  }
  return a;
}

Eigen::VectorXd score_function_grad(const ScoreSampleSet& samples, const Eigen::VectorXd& a) {
  check_set(samples);
  if (a.size() != samples.score.cols()) throw std::invalid_argument("score_function_grad: coefficient size mismatch");
  const Eigen::Index S = samples.num_samples();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(samples.score.cols());
  for (Eigen::Index s = 0; s < S; ++s) {
    grad += (samples.score.row(s).array() * (samples.signal.row(s).array() - a.transpose().array()))
                .matrix()
                .transpose();
  }
  return grad / static_cast<double>(S);
}

Eigen::VectorXd score_function_grad_loo(const ScoreSampleSet& samples, double cv_eps) {
  check_set(samples);
  const Eigen::Index S = samples.num_samples();
  if (S < 3) throw std::invalid_argument("score_function_grad_loo: need at least 3 samples");
  const Eigen::MatrixXd g = samples.signal.cwiseProduct(samples.score);
  const Eigen::MatrixXd& h = samples.score;
  const Eigen::Index P = h.cols();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(P);
  const double m = static_cast<double>(S - 1);
  for (Eigen::Index n = 0; n < P; ++n) {
    const double sg = g.col(n).sum();
    const double sh = h.col(n).sum();
    const double sgh = g.col(n).dot(h.col(n));
    const double shh = h.col(n).squaredNorm();
    double acc = 0.0;
    for (Eigen::Index s = 0; s < S; ++s) {
      const double gs = g(s, n);
      const double hs = h(s, n);
      const double rg = sg - gs;
      const double rh = sh - hs;
      const double var = (shh - hs * hs - rh * rh / m) / (m - 1.0);
      double a = 0.0;
      if (var >= cv_eps) a = ((sgh - gs * hs - rg * rh / m) / (m - 1.0)) / var;
      acc += gs - a * hs;
    }
    grad[n] = acc / static_cast<double>(S);
  }
  return grad;
}

Eigen::VectorXd score_function_grad(const ScoreSampleSet& samples, const McConfig& cfg) {
  switch (cfg.cv) {
    case CvMode::none:
      return score_function_grad(samples, Eigen::VectorXd::Zero(samples.score.cols()));
    case CvMode::same_sample:
      return score_function_grad(samples, control_variate_coeffs(samples, cfg.cv_eps));
    case CvMode::leave_one_out:
      return score_function_grad_loo(samples, cfg.cv_eps);
  }
  throw std::invalid_argument("score_function_grad: unknown control-variate mode");
}

ModelGrads ModelGrads::zeros_like(const IbpDgm& m) {
  ModelGrads g;
  g.encoder = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.encoder.num_params()));
  g.classifier = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.classifier.num_params()));
  g.decoder = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.decoder.num_params()));
  g.log_a = Eigen::VectorXd::Zero(m.K());
  g.log_b = Eigen::VectorXd::Zero(m.K());
  return g;
}

ModelGrads& ModelGrads::operator+=(const ModelGrads& o) {
  encoder += o.encoder;
  classifier += o.classifier;
  decoder += o.decoder;
  log_a += o.log_a;
  log_b += o.log_b;
  return *this;
}

void ModelGrads::scale(double s) {
  encoder *= s;
  classifier *= s;
  decoder *= s;
  log_a *= s;
  log_b *= s;
}

double ModelGrads::squared_norm() const {
  return encoder.squaredNorm() + classifier.squaredNorm() + decoder.squaredNorm() +
         log_a.squaredNorm() + log_b.squaredNorm();
}

bool ModelGrads::all_finite() const {
  return encoder.allFinite() && classifier.allFinite() && decoder.allFinite() && log_a.allFinite() &&
         log_b.allFinite();
}

namespace detail {

void validate(const IbpDgm& m, const Batch& batch, const EstimateOptions& opts) {
  opts.mc.validate();
  const Eigen::Index B = batch.size();
  if (B < 1) throw std::invalid_argument("estimate_elbo_and_grads: empty batch");
  if (batch.features.rows() != m.D()) throw std::invalid_argument("estimate_elbo_and_grads: feature dimension mismatch");
  if (static_cast<Eigen::Index>(batch.labels.size()) != B || static_cast<Eigen::Index>(batch.ids.size()) != B) {
    throw std::invalid_argument("estimate_elbo_and_grads: labels/ids length mismatch");
  }
  if (!batch.weights.empty() && static_cast<Eigen::Index>(batch.weights.size()) != B) {
    throw std::invalid_argument("estimate_elbo_and_grads: weights length mismatch");
  }
  for (double w : batch.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("estimate_elbo_and_grads: bad point weight");
  }
  for (int y : batch.labels) {
    if (y < -1 || y >= m.C()) throw std::invalid_argument("estimate_elbo_and_grads: label out of range");
  }
  if (opts.mode != UnlabeledMode::marginalize && opts.mode != UnlabeledMode::unconditional) {
    throw std::invalid_argument("estimate_elbo_and_grads: unknown unlabeled mode");
  }
  if (m.config.kind == LikelihoodKind::bernoulli &&
      ((batch.features.array() < 0.0).any() || (batch.features.array() > 1.0).any())) {
    throw std::invalid_argument("estimate_elbo_and_grads: Bernoulli-kind features outside [0,1]");
  }
  if (!batch.features.allFinite()) throw std::invalid_argument("estimate_elbo_and_grads: non-finite features");
  if (opts.frozen_v) {
    const auto& v = *opts.frozen_v;
    if (v.size() != m.K() || (v.array() <= 0.0).any() || (v.array() > 1.0).any()) {
      throw std::invalid_argument("estimate_elbo_and_grads: frozen sticks must be K values in (0,1]");
    }
  }
  if (opts.dataset_size < 0.0) throw std::invalid_argument("estimate_elbo_and_grads: negative dataset size");
  if (opts.chunk_size < 1) throw std::invalid_argument("estimate_elbo_and_grads: chunk_size must be >= 1");
}

ScoreParts score_parts(const IbpDgm& m, const Encoded& enc, const std::vector<LatentDraw>& draws,
                       const Eigen::VectorXd& recon_per_sample, double local_scale,
                       double global_share, bool sticks_frozen, const McConfig& mc) {
  const int K = m.K();
  const auto S = static_cast<Eigen::Index>(draws.size());
  const Eigen::VectorXd pi_hat = enc.zhat.probs();
  ScoreSampleSet zs;
  zs.signal.resize(S, K);
  zs.score.resize(S, K);
  ScoreSampleSet as;
  ScoreSampleSet bs;
  if (!sticks_frozen) {
    as.signal.resize(S, K);
    as.score.resize(S, K);
    bs.score.resize(S, K);
  }
  const double log_alpha = std::log(m.sticks.alpha);
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto& d = draws[static_cast<std::size_t>(s)];
    const Eigen::VectorXd prior = ibp::ibp_prior_terms_from_sticks(d.zhat, d.v);
    for (int k = 0; k < K; ++k) {
      const double l = enc.zhat.logits[k];
      const double log_q = d.zhat[k] != 0.0 ? log_sigmoid(l) : log_sigmoid(-l);
      zs.signal(s, k) = recon_per_sample[s] + prior[k] - log_q;
      zs.score(s, k) = d.zhat[k] - pi_hat[k];
    }
    if (sticks_frozen) continue;
    double tail = 0.0;
    for (int k = K - 1; k >= 0; --k) {
      tail += prior[k];
      const auto bp = m.sticks.beta(k);
      const double v = d.v[k];
      const double log_p_v = log_alpha + (m.sticks.alpha - 1.0) * std::log(v);
      const double log_q_v = dist::beta_log_prob(v, bp);
      const auto [da, db] = dist::beta_score_grad(v, bp);
      as.signal(s, k) = local_scale * tail + global_share * (log_p_v - log_q_v);
      as.score(s, k) = da * bp.a;
      bs.score(s, k) = db * bp.b;
    }
  }
  ScoreParts out;
  out.grad_zhat_logits = local_scale * score_function_grad(zs, mc);
  if (sticks_frozen) {
    out.grad_log_a = Eigen::VectorXd::Zero(K);
    out.grad_log_b = Eigen::VectorXd::Zero(K);
  } else {
    bs.signal = as.signal;
    out.grad_log_a = score_function_grad(as, mc);
    out.grad_log_b = score_function_grad(bs, mc);
  }
  return out;
}

void check_finite(double value, const char* term) {
  if (!std::isfinite(value)) {
    throw NumericError(term, std::string("non-finite ELBO term '") + term + "'");
  }
}

void finalize(ElboBreakdown& e, const IbpDgm& m, const EstimateOptions& opts) {
  if (opts.include_theta_prior) {
    auto [lp, grad] = theta_log_prior(m);
    e.log_prior_theta = lp;
    e.grads.decoder += grad;
  }
  e.total = e.sum_of_terms();
  check_finite(e.recon, "recon");
  check_finite(e.kl_gauss, "kl_gauss");
  check_finite(e.term_zhat, "term_zhat");
  check_finite(e.term_v, "term_v");
  check_finite(e.term_y, "term_y");
  check_finite(e.term_sup, "term_sup");
  check_finite(e.log_prior_theta, "log_prior_theta");
  if (!e.grads.encoder.allFinite()) throw NumericError("grad.encoder", "non-finite encoder gradient");
  if (!e.grads.classifier.allFinite()) throw NumericError("grad.classifier", "non-finite classifier gradient");
  if (!e.grads.decoder.allFinite()) throw NumericError("grad.decoder", "non-finite decoder gradient");
  if (!e.grads.log_a.allFinite() || !e.grads.log_b.allFinite()) {
    throw NumericError("grad.sticks", "non-finite stick gradient");
  }
}

}  // namespace detail

namespace {

struct Partial {
  ModelGrads grads;
  double recon = 0.0;
  double kl_gauss = 0.0;
  double term_zhat = 0.0;
  double term_v = 0.0;
  double term_y = 0.0;
  double term_sup = 0.0;

  void add(const Partial& o) {
    grads += o.grads;
    recon += o.recon;
    kl_gauss += o.kl_gauss;
    term_zhat += o.term_zhat;
    term_v += o.term_v;
    term_y += o.term_y;
    term_sup += o.term_sup;
  }
};

double point_scale(const Batch& batch, Eigen::Index i, double fallback) {
  return batch.weights.empty() ? fallback : batch.weights[static_cast<std::size_t>(i)];
}

// Evaluates points [p0, p0 + P) of the batch and adds into `acc`.
void process_chunk(const IbpDgm& m, const Batch& batch, Eigen::Index p0, Eigen::Index P,
                   const EstimateOptions& opts, double local_scale, double global_share, Partial& acc) {
  const int K = m.K();
  const int C = m.C();
  const int D = m.D();
  const int S = opts.mc.samples;
  const bool frozen = opts.frozen_v.has_value();
  const Eigen::VectorXd* frozen_v = frozen ? &*opts.frozen_v : nullptr;
  const double logC = std::log(static_cast<double>(C));

  const Eigen::MatrixXd xc = batch.features.middleCols(p0, P);
  auto enc_f = nn::forward(m.encoder, xc);
  auto cls_f = nn::forward(m.classifier, xc);

  std::vector<Encoded> encs(static_cast<std::size_t>(P));
  std::vector<std::vector<LatentDraw>> draws(static_cast<std::size_t>(P));
  std::vector<int> slots(static_cast<std::size_t>(P));
  std::vector<Eigen::Index> col0(static_cast<std::size_t>(P));
  Eigen::MatrixXd log_w(C, P);
  Eigen::Index M = 0;
  for (Eigen::Index i = 0; i < P; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    encs[ui] = encoded_from_output(enc_f.output.col(i), K);
    Rng rng = derive_stream(opts.seed, opts.step, batch.ids[static_cast<std::size_t>(p0 + i)]);
    draws[ui].reserve(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) draws[ui].push_back(draw_latents(encs[ui], m.sticks, frozen_v, rng));
    const auto lg = cls_f.output.col(i);
    const double mx = lg.maxCoeff();
    log_w.col(i) = lg.array() - (mx + std::log((lg.array() - mx).exp().sum()));
    const int y = batch.labels[static_cast<std::size_t>(p0 + i)];
    slots[ui] = (y < 0 && opts.mode == UnlabeledMode::marginalize) ? C : 1;
    col0[ui] = M;
    M += static_cast<Eigen::Index>(S) * slots[ui];
  }
  const Eigen::MatrixXd w = log_w.array().exp();

  Eigen::MatrixXd zin = Eigen::MatrixXd::Zero(K + C, M);
  for (Eigen::Index i = 0; i < P; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const int y = batch.labels[static_cast<std::size_t>(p0 + i)];
    for (int s = 0; s < S; ++s) {
      const Eigen::VectorXd z = draws[ui][static_cast<std::size_t>(s)].z();
      for (int j = 0; j < slots[ui]; ++j) {
        const Eigen::Index col = col0[ui] + static_cast<Eigen::Index>(s) * slots[ui] + j;
        zin.col(col).head(K) = z;
        if (y >= 0) {
          zin(K + y, col) = 1.0;
        } else if (slots[ui] == C && opts.mode == UnlabeledMode::marginalize) {
          zin(K + j, col) = 1.0;
        }
      }
    }
  }

  auto dec_f = nn::forward(m.decoder, zin);
  Eigen::MatrixXd gout(dec_f.output.rows(), M);
  Eigen::VectorXd recon_col(M);
  for (Eigen::Index i = 0; i < P; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const double* x = batch.features.col(p0 + i).data();
    for (Eigen::Index col = col0[ui]; col < col0[ui] + static_cast<Eigen::Index>(S) * slots[ui]; ++col) {
      recon_col[col] = recon_from_output(m.config.kind, x, dec_f.output.col(col).data(), D, gout.col(col).data());
    }
  }

  std::vector<Eigen::VectorXd> recon_s(static_cast<std::size_t>(P));
  for (Eigen::Index i = 0; i < P; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const bool marginal = slots[ui] == C && batch.labels[static_cast<std::size_t>(p0 + i)] < 0 &&
                          opts.mode == UnlabeledMode::marginalize;
    recon_s[ui] = Eigen::VectorXd::Zero(S);
    for (int s = 0; s < S; ++s) {
      for (int j = 0; j < slots[ui]; ++j) {
        const Eigen::Index col = col0[ui] + static_cast<Eigen::Index>(s) * slots[ui] + j;
        const double wj = marginal ? w(j, i) : 1.0;
        recon_s[ui][s] += wj * recon_col[col];
        gout.col(col) *= point_scale(batch, p0 + i, local_scale) * wj / static_cast<double>(S);
      }
    }
  }

  const Eigen::MatrixXd dzin = nn::backward_accumulate(m.decoder, dec_f.tape, gout, acc.grads.decoder);

  Eigen::MatrixXd genc = Eigen::MatrixXd::Zero(3 * K, P);
  Eigen::MatrixXd gcls = Eigen::MatrixXd::Zero(C, P);
  for (Eigen::Index i = 0; i < P; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto& enc = encs[ui];
    const int y = batch.labels[static_cast<std::size_t>(p0 + i)];
    const bool marginal = y < 0 && opts.mode == UnlabeledMode::marginalize;
    const double ls = point_scale(batch, p0 + i, local_scale);

    Eigen::ArrayXd dmu = Eigen::ArrayXd::Zero(K);
    Eigen::ArrayXd dsd = Eigen::ArrayXd::Zero(K);
    Eigen::VectorXd recon_class = Eigen::VectorXd::Zero(slots[ui]);
    double zhat_term = 0.0;
    double v_term = 0.0;
    for (int s = 0; s < S; ++s) {
      const auto& d = draws[ui][static_cast<std::size_t>(s)];
      Eigen::ArrayXd dz = Eigen::ArrayXd::Zero(K);
      for (int j = 0; j < slots[ui]; ++j) {
        const Eigen::Index col = col0[ui] + static_cast<Eigen::Index>(s) * slots[ui] + j;
        dz += dzin.col(col).head(K).array();
        recon_class[j] += recon_col[col];
      }
      const Eigen::ArrayXd dzt = dz * d.zhat.array();
      dmu += dzt;
      dsd += dzt * d.eps.array();
      zhat_term += d.log_p_zhat - d.log_q_zhat;
      v_term += d.log_p_v - d.log_q_v;
    }
    recon_class /= static_cast<double>(S);
    const Eigen::ArrayXd var = enc.gauss.var.array();
    const Eigen::ArrayXd sd = var.sqrt();
    const Eigen::ArrayXd dvar_draw = enc.raw_var.unaryExpr(&sigmoid).array();
    genc.col(i).segment(0, K) = (dmu - ls * enc.gauss.mean.array()).matrix();
    genc.col(i).segment(K, K) =
        ((dsd / (2.0 * sd) - ls * 0.5 * (1.0 - 1.0 / var)) * dvar_draw).matrix();

    const auto sp = detail::score_parts(m, enc, draws[ui], recon_s[ui], ls, global_share, frozen, opts.mc);
    genc.col(i).segment(2 * K, K) = sp.grad_zhat_logits;
    acc.grads.log_a += sp.grad_log_a;
    acc.grads.log_b += sp.grad_log_b;

    if (y >= 0) {
      acc.term_sup += ls * opts.alpha_sup * log_w(y, i);
      gcls.col(i) = -ls * opts.alpha_sup * w.col(i);
      gcls(y, i) += ls * opts.alpha_sup;
    } else {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(C);
      double kl = 0.0;
      for (int c = 0; c < C; ++c) {
        if (w(c, i) <= 0.0) continue;
        kl += w(c, i) * (log_w(c, i) + logC);
        g[c] = -(log_w(c, i) + logC + 1.0);
        if (marginal) g[c] += recon_class[c];
      }
      acc.term_y -= ls * kl;
      gcls.col(i) = ls * w.col(i).cwiseProduct((g.array() - w.col(i).dot(g)).matrix());
    }

    acc.recon += ls * recon_s[ui].mean();
    acc.kl_gauss += ls * dist::gaussian_kl_to_standard(enc.gauss);
    acc.term_zhat += ls * zhat_term / static_cast<double>(S);
    acc.term_v += global_share * v_term / static_cast<double>(S);
  }

  nn::backward_accumulate(m.encoder, enc_f.tape, genc, acc.grads.encoder);
  nn::backward_accumulate(m.classifier, cls_f.tape, gcls, acc.grads.classifier);
}

Partial zero_partial(const IbpDgm& m) {
  Partial p;
  p.grads = ModelGrads::zeros_like(m);
  return p;
}

}  // namespace

ElboBreakdown estimate_elbo_and_grads(const IbpDgm& m, const Batch& batch, const EstimateOptions& opts) {
  detail::validate(m, batch, opts);
  const Eigen::Index B = batch.size();
  const double N = opts.dataset_size > 0.0 ? opts.dataset_size : static_cast<double>(B);
  const double local_scale = N / static_cast<double>(B);
  const double global_share = 1.0 / static_cast<double>(B);
  const Eigen::Index chunk = opts.chunk_size;
  const Eigen::Index n_chunks = (B + chunk - 1) / chunk;
  const int threads = opts.threads > 0 ? opts.threads : omp_get_max_threads();

  Partial total = zero_partial(m);
  std::exception_ptr error;

  if (opts.deterministic) {
    std::vector<Partial> parts(static_cast<std::size_t>(n_chunks));
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (Eigen::Index c = 0; c < n_chunks; ++c) {
      try {
        auto& part = parts[static_cast<std::size_t>(c)];
        part = zero_partial(m);
        const Eigen::Index p0 = c * chunk;
        process_chunk(m, batch, p0, std::min(chunk, B - p0), opts, local_scale, global_share, part);
      } catch (...) {
#pragma omp critical(ibpdgm_bbvi_error)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    for (const auto& p : parts) total.add(p);
  } else {
#pragma omp parallel num_threads(threads)
    {
      Partial local = zero_partial(m);
#pragma omp for schedule(dynamic, 1) nowait
      for (Eigen::Index c = 0; c < n_chunks; ++c) {
        try {
          const Eigen::Index p0 = c * chunk;
          process_chunk(m, batch, p0, std::min(chunk, B - p0), opts, local_scale, global_share, local);
        } catch (...) {
#pragma omp critical(ibpdgm_bbvi_error)
          if (!error) error = std::current_exception();
        }
      }
#pragma omp critical(ibpdgm_bbvi_reduce)
      total.add(local);
    }
    if (error) std::rethrow_exception(error);
  }

  ElboBreakdown e;
  e.grads = std::move(total.grads);
  e.recon = total.recon;
  e.kl_gauss = total.kl_gauss;
  e.term_zhat = total.term_zhat;
  e.term_v = total.term_v;
  e.term_y = total.term_y;
  e.term_sup = total.term_sup;
  detail::finalize(e, m, opts);
  return e;
}

}  // namespace ibpdgm::bbvi

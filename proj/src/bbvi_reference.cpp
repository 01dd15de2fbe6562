// Serial reference for the batch estimator: one point, one draw, one class
// slot at a time, built directly on per_point_elbo_terms.

#include "ibpdgm/bbvi.hpp"

namespace ibpdgm::bbvi::reference {

ElboBreakdown estimate_elbo_and_grads(const IbpDgm& m, const Batch& batch, const EstimateOptions& opts) {
  detail::validate(m, batch, opts);
  const Eigen::Index B = batch.size();
  const double N = opts.dataset_size > 0.0 ? opts.dataset_size : static_cast<double>(B);
  const double local_scale = N / static_cast<double>(B);
  const double global_share = 1.0 / static_cast<double>(B);
  const int S = opts.mc.samples;
  const int K = m.K();
  const Eigen::VectorXd* frozen_v = opts.frozen_v ? &*opts.frozen_v : nullptr;
  const TermOptions topts{opts.mode, opts.alpha_sup};

  ElboBreakdown e;
  e.grads = ModelGrads::zeros_like(m);
  for (Eigen::Index i = 0; i < B; ++i) {
    const Eigen::VectorXd x = batch.features.col(i);
    const int y = batch.labels[static_cast<std::size_t>(i)];
    auto enc = encode(m, x);
    auto cls = nn::forward(m.classifier, x);
    const Eigen::VectorXd logits = cls.output.col(0);

    Rng rng = derive_stream(opts.seed, opts.step, batch.ids[static_cast<std::size_t>(i)]);
    std::vector<LatentDraw> draws;
    for (int s = 0; s < S; ++s) draws.push_back(draw_latents(enc.encoded, m.sticks, frozen_v, rng));

    Eigen::VectorXd genc = Eigen::VectorXd::Zero(3 * K);
    Eigen::VectorXd gcls = Eigen::VectorXd::Zero(m.C());
    Eigen::VectorXd recon_s(S);
    const double ls = batch.weights.empty() ? local_scale : batch.weights[static_cast<std::size_t>(i)];
    const double w = ls / static_cast<double>(S);
    for (int s = 0; s < S; ++s) {
      const auto t = per_point_elbo_terms(m, x, y, enc.encoded, logits, draws[static_cast<std::size_t>(s)], topts);
      recon_s[s] = t.recon;
      e.recon += w * t.recon;
      e.kl_gauss += w * t.kl_gauss;
      e.term_zhat += w * t.term_zhat;
      e.term_v += global_share * t.term_v / static_cast<double>(S);
      e.term_y += w * t.term_y;
      e.term_sup += w * t.term_sup;
      genc += w * t.grad_encoder_out;
      gcls += w * t.grad_class_logits;
      e.grads.decoder += w * t.grad_decoder;
    }
    const auto sp = detail::score_parts(m, enc.encoded, draws, recon_s, ls, global_share,
                                        frozen_v != nullptr, opts.mc);
    genc.segment(2 * K, K) += sp.grad_zhat_logits;
    e.grads.log_a += sp.grad_log_a;
    e.grads.log_b += sp.grad_log_b;
    nn::backward_accumulate(m.encoder, enc.tape, genc, e.grads.encoder);
    nn::backward_accumulate(m.classifier, cls.tape, gcls, e.grads.classifier);
  }
  detail::finalize(e, m, opts);
  return e;
}

}  // namespace ibpdgm::bbvi::reference

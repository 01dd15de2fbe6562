#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ibpdgm/model.hpp"
#include "oracles.hpp"

using namespace ibpdgm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ModelConfig small_config(LikelihoodKind kind = LikelihoodKind::bernoulli, int C = 3) {
  ModelConfig c;
  c.input_dim = 5;
  c.K = 3;
  c.num_classes = C;
  c.hidden = 8;
  c.kind = kind;
  return c;
}

LatentDraw fixed_draw(const Encoded& enc, const VectorXd& eps, const VectorXd& zhat) {
  LatentDraw d;
  d.eps = eps;
  d.zhat = zhat;
  d.ztilde = dist::gaussian_reparam_sample(enc.gauss, eps);
  d.v = VectorXd::Constant(zhat.size(), 0.5);
  return d;
}

}  // namespace

TEST_CASE("zero encoder") {
  const auto m = IbpDgm::zeros(small_config());
  const auto e = encode(m, VectorXd::Constant(5, 0.3)).encoded;
  CHECK(e.gauss.mean.isZero());
  for (int k = 0; k < 3; ++k) {
    CHECK(e.gauss.var[k] == doctest::Approx(std::log(2.0) + 1e-6).epsilon(1e-12));
    CHECK(e.zhat.probs()[k] == doctest::Approx(0.5));
  }
  CHECK(m.encoder.output_dim() == 9);
  CHECK_THROWS_AS(encode(m, VectorXd::Zero(4)), std::invalid_argument);
  CHECK_THROWS_AS(encode(m, VectorXd::Constant(5, 2.0)), std::invalid_argument);
}

TEST_CASE("compose latent") {
  const VectorXd zt = (VectorXd(2) << 2, -3).finished();
  CHECK(compose_latent(zt, VectorXd::Ones(2)) == zt);
  CHECK(compose_latent(zt, VectorXd::Zero(2)).isZero());
  CHECK(compose_latent(zt, (VectorXd(2) << 0, 1).finished()) == (VectorXd(2) << 0, -3).finished());
  CHECK_THROWS_AS(compose_latent(zt, VectorXd::Ones(3)), std::invalid_argument);
}

TEST_CASE("decode") {
  const auto z = IbpDgm::zeros(small_config());
  const auto p = decode(z, VectorXd::Zero(3), VectorXd::Zero(3));
  CHECK((p.mean.array() == 0.5).all());

  Rng rng(31);
  auto m = IbpDgm::create(small_config(), rng);
  const auto q = decode(m, VectorXd::Constant(3, 50.0), VectorXd::Unit(3, 0));
  CHECK((q.mean.array() > 0.0).all());
  CHECK((q.mean.array() < 1.0).all());

  // Make the class inputs of the first layer nonzero: outputs must differ by class.
  m.decoder.weight(0).rightCols(3).setConstant(0.0);
  m.decoder.weight(0).col(3).setConstant(1.0);
  m.decoder.weight(0).col(4).setConstant(-1.0);
  const VectorXd zr = VectorXd::Constant(3, 0.2);
  CHECK((decode(m, zr, VectorXd::Unit(3, 0)).mean - decode(m, zr, VectorXd::Unit(3, 1)).mean).norm() > 1e-6);
  CHECK_THROWS_AS(decode(m, VectorXd::Zero(2), VectorXd::Unit(3, 0)), std::invalid_argument);

  const auto g = IbpDgm::zeros(small_config(LikelihoodKind::gaussian));
  const auto gp = decode(g, VectorXd::Zero(3), VectorXd::Zero(3));
  CHECK(gp.mean.isZero());
  CHECK(gp.var[0] == doctest::Approx(std::log(2.0) + 1e-6));
}

TEST_CASE("likelihood log prob") {
  LikelihoodParams b{LikelihoodKind::bernoulli, (VectorXd(3) << 1, 0, 1).finished(), {}};
  CHECK(likelihood_log_prob((VectorXd(3) << 1, 0, 1).finished(), b) == doctest::Approx(0.0).epsilon(1e-5));
  LikelihoodParams g{LikelihoodKind::gaussian, VectorXd::Constant(1, 0.7), VectorXd::Ones(1)};
  CHECK(likelihood_log_prob(VectorXd::Constant(1, 0.7), g) == doctest::Approx(-0.918939).epsilon(1e-6));

  LikelihoodParams p{LikelihoodKind::bernoulli, (VectorXd(3) << 0.2, 0.7, 0.45).finished(), {}};
  double s = 0.0;
  for (int mask = 0; mask < 8; ++mask) {
    VectorXd x(3);
    for (int d = 0; d < 3; ++d) x[d] = (mask >> d) & 1;
    s += std::exp(likelihood_log_prob(x, p));
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("theta prior") {
  auto m = IbpDgm::zeros(small_config());
  CHECK(theta_log_prior(m).second.isZero());
  ModelConfig c;
  c.input_dim = 1;
  c.K = 1;
  c.hidden = 0;
  c.sigma_theta_sq = 1.0;
  auto one = IbpDgm::zeros(c);
  // decoder [z; y] (2 inputs) -> 1 output: 3 parameters; set one of them to 1.
  one.decoder.params()[0] = 1.0;
  const auto [lp, g] = theta_log_prior(one);
  const double n = static_cast<double>(one.decoder.num_params());
  CHECK(lp == doctest::Approx(-0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5));
  CHECK(g[0] == doctest::Approx(-1.0));
}

TEST_CASE("classify and predict") {
  const auto z = IbpDgm::zeros(small_config());
  const VectorXd x = VectorXd::Constant(5, 0.4);
  CHECK(classify(z, x).probs().isApprox(VectorXd::Constant(3, 1.0 / 3.0)));
  CHECK(predict(z, x) == 0);
  CHECK(argmax_lowest((VectorXd(4) << 1, 3, 3, 2).finished()) == 1);

  Rng rng(32);
  auto m = IbpDgm::create(small_config(), rng);
  const int before = predict(m, x);
  m.classifier.bias(m.classifier.num_layers() - 1).array() += 7.0;
  CHECK(predict(m, x) == before);
  CHECK(classify(m, x).probs().sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single class: labeled and marginalized routes coincide") {
  Rng rng(33);
  auto m = IbpDgm::create(small_config(LikelihoodKind::bernoulli, 1), rng);
  const VectorXd x = (VectorXd(5) << 1, 0, 0, 1, 1).finished();
  const auto enc = encode(m, x).encoded;
  const VectorXd logits = nn::predict(m.classifier, x).col(0);
  const auto d = fixed_draw(enc, VectorXd::Constant(3, 0.3), (VectorXd(3) << 1, 0, 1).finished());
  const auto a = per_point_elbo_terms(m, x, 0, enc, logits, d, {UnlabeledMode::marginalize, 0.0});
  const auto b = per_point_elbo_terms(m, x, -1, enc, logits, d, {UnlabeledMode::marginalize, 0.0});
  CHECK(a.recon == b.recon);
  CHECK(b.term_y == doctest::Approx(0.0));
  CHECK(a.total() == doctest::Approx(b.total()).epsilon(1e-12));
}

TEST_CASE("switched-off components give zero mean gradient through recon") {
  Rng rng(34);
  auto m = IbpDgm::create(small_config(), rng);
  const VectorXd x = (VectorXd(5) << 1, 0, 1, 1, 0).finished();
  const auto enc = encode(m, x).encoded;
  const VectorXd logits = nn::predict(m.classifier, x).col(0);
  const VectorXd zhat = (VectorXd(3) << 0, 1, 0).finished();
  const auto t = per_point_elbo_terms(m, x, 1, enc, logits, fixed_draw(enc, VectorXd::Constant(3, 0.8), zhat),
                                      {UnlabeledMode::marginalize, 0.0});
  // d/d mu_k of the full path objective is dRecon/dmu_k - mu_k; with zhat_k = 0 only -mu_k remains.
  CHECK(t.grad_encoder_out[0] == -enc.gauss.mean[0]);
  CHECK(t.grad_encoder_out[2] == -enc.gauss.mean[2]);
}

TEST_CASE("labeled terms ignore q(y) apart from the supervised term") {
  Rng rng(35);
  auto m = IbpDgm::create(small_config(), rng);
  const VectorXd x = (VectorXd(5) << 0, 1, 1, 0, 1).finished();
  const auto enc = encode(m, x).encoded;
  const VectorXd logits = nn::predict(m.classifier, x).col(0);
  const auto d = fixed_draw(enc, VectorXd::Constant(3, -0.2), VectorXd::Ones(3));
  const auto t0 = per_point_elbo_terms(m, x, 2, enc, logits, d, {UnlabeledMode::marginalize, 0.0});
  CHECK(t0.term_y == 0.0);
  CHECK(t0.grad_class_logits.isZero());
  const auto t1 = per_point_elbo_terms(m, x, 2, enc, logits, d, {UnlabeledMode::marginalize, 0.3});
  CHECK(t1.term_sup == doctest::Approx(0.3 * std::log(dist::softmax(logits)[2])));
  CHECK(t1.grad_class_logits.isApprox(0.3 * dist::categorical_score_grad(2, logits)));
  CHECK_THROWS_AS(per_point_elbo_terms(m, x, 3, enc, logits, d, {}), std::invalid_argument);
}

TEST_CASE("unlabeled routes use the uniform label prior") {
  Rng rng(36);
  auto m = IbpDgm::create(small_config(), rng);
  const VectorXd x = (VectorXd(5) << 0, 1, 1, 0, 1).finished();
  const auto enc = encode(m, x).encoded;
  const VectorXd logits = (VectorXd(3) << 0.5, -0.2, 1.0).finished();
  const auto d = fixed_draw(enc, VectorXd::Constant(3, 0.1), VectorXd::Ones(3));
  const VectorXd w = dist::softmax(logits);
  const double kl = (w.array() * (3.0 * w.array()).log()).sum();
  for (auto mode : {UnlabeledMode::marginalize, UnlabeledMode::unconditional}) {
    const auto t = per_point_elbo_terms(m, x, -1, enc, logits, d, {mode, 0.0});
    CHECK(t.term_y == doctest::Approx(-kl));
  }
  const auto mg = per_point_elbo_terms(m, x, -1, enc, logits, d, {UnlabeledMode::marginalize, 0.0});
  CHECK(mg.recon_per_slot.size() == 3);
  CHECK(mg.recon == doctest::Approx(w.dot(mg.recon_per_slot)));
  const auto un = per_point_elbo_terms(m, x, -1, enc, logits, d, {UnlabeledMode::unconditional, 0.0});
  CHECK(un.recon == doctest::Approx(likelihood_log_prob(x, decode(m, d.z(), VectorXd::Zero(3)))).epsilon(1e-12));
}

TEST_CASE("path gradients match finite differences") {
  Rng rng(37);
  for (auto kind : {LikelihoodKind::bernoulli, LikelihoodKind::gaussian}) {
    auto m = IbpDgm::create(small_config(kind), rng);
    m.encoder.params().array() += 0.05;
    VectorXd x = VectorXd::Random(5);
    if (kind == LikelihoodKind::bernoulli) x = (x.array() > 0).cast<double>();
    const VectorXd eps = VectorXd::Random(3);
    const VectorXd zhat = (VectorXd(3) << 1, 0, 1).finished();
    for (int label : {1, -1}) {
      const TermOptions to{UnlabeledMode::marginalize, 0.4};
      auto obj = [&] {
        const auto enc = encode(m, x).encoded;
        const auto t = per_point_elbo_terms(m, x, label, enc, nn::predict(m.classifier, x).col(0),
                                            fixed_draw(enc, eps, zhat), to);
        return t.recon - t.kl_gauss + t.term_y + t.term_sup;
      };
      auto enc = encode(m, x);
      auto cls = nn::forward(m.classifier, x);
      const auto t = per_point_elbo_terms(m, x, label, enc.encoded, cls.output.col(0),
                                          fixed_draw(enc.encoded, eps, zhat), to);
      const VectorXd ge = nn::backward(m.encoder, enc.tape, t.grad_encoder_out).param_grads;
      const VectorXd gc = nn::backward(m.classifier, cls.tape, t.grad_class_logits).param_grads;
      CHECK(oracle::max_rel_err(ge, oracle::fd_gradient(m.encoder.params(), obj), 1e-4) < 1e-4);
      CHECK(oracle::max_rel_err(gc, oracle::fd_gradient(m.classifier.params(), obj), 1e-4) < 1e-4);
      CHECK(oracle::max_rel_err(t.grad_decoder, oracle::fd_gradient(m.decoder.params(), obj), 1e-4) < 1e-4);
    }
  }
}

TEST_CASE("latent draws cache consistent log densities") {
  Rng rng(38);
  auto m = IbpDgm::create(small_config(), rng);
  const auto enc = encode(m, VectorXd::Constant(5, 1.0)).encoded;
  Rng s(39);
  const auto d = draw_latents(enc, m.sticks, nullptr, s);
  CHECK(d.log_q_ztilde == doctest::Approx(dist::gaussian_log_prob(d.ztilde, enc.gauss)).epsilon(1e-12));
  CHECK(d.log_q_zhat == doctest::Approx(dist::bernoulli_log_prob(d.zhat, enc.zhat)).epsilon(1e-12));
  CHECK(d.log_p_v == doctest::Approx(ibp::sticks_prior_log_prob(d.v, m.config.alpha)).epsilon(1e-12));
  CHECK(d.log_p_zhat ==
        doctest::Approx(ibp::ibp_prior_log_prob(d.zhat, ibp::stick_breaking(d.v))).epsilon(1e-12));
  double lqv = 0.0;
  for (int k = 0; k < 3; ++k) lqv += dist::beta_log_prob(d.v[k], m.sticks.beta(k));
  CHECK(d.log_q_v == doctest::Approx(lqv).epsilon(1e-12));
}

TEST_CASE("generate") {
  Rng a(40), b(40);
  ModelConfig c = small_config();
  Rng init(41);
  const auto m = IbpDgm::create(c, init);
  const auto g1 = generate(m, 20, a);
  const auto g2 = generate(m, 20, b);
  CHECK(g1.means == g2.means);
  CHECK(g1.labels == g2.labels);
  CHECK((g1.means.array() > 0.0).all());
  CHECK((g1.means.array() < 1.0).all());
  CHECK(generate(m, 5, a, 2).labels == std::vector<int>(5, 2));

  c.alpha = 1e-3;
  c.K = 10;
  Rng init2(42);
  const auto sparse = IbpDgm::create(c, init2);
  Rng r(43);
  const auto g = generate(sparse, 10000, r);
  CHECK(g.zhat.sum() / 10000.0 < 0.1 * 10);
}

#include "ibpdgm/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "ibpdgm/bbvi.hpp"
#include "ibpdgm/distributions.hpp"
#include "ibpdgm/ibp.hpp"
#include "ibpdgm/model.hpp"
#include "ibpdgm/nn.hpp"
#include "ibpdgm/numerics.hpp"

namespace ibpdgm::selftest {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

class Recorder {
 public:
  explicit Recorder(std::string name) : start_(Clock::now()) { r_.name = std::move(name); }

  void check(bool ok, double err, const std::string& what) {
    ++r_.checks;
    if (std::isfinite(err)) {
      r_.max_error = std::max(r_.max_error, err);
    } else {
      r_.max_error = err;
    }
    if (!ok) {
      r_.pass = false;
      r_.failures.push_back(what);
    }
  }

  SuiteResult finish() {
    r_.seconds = std::chrono::duration<double>(Clock::now() - start_).count();
    return r_;
  }

 private:
  SuiteResult r_;
  Clock::time_point start_;
};

template <class F>
VectorXd fd_gradient(Eigen::Ref<VectorXd> p, F&& f) {
  VectorXd g(p.size());
  for (Index i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + kFdStep;
    const double fp = f();
    p[i] = saved - kFdStep;
    const double fm = f();
    p[i] = saved;
    g[i] = (fp - fm) / (2.0 * kFdStep);
  }
  return g;
}

void compare(Recorder& rec, const std::string& term, const VectorXd& analytic, const VectorXd& numeric) {
  for (Index i = 0; i < analytic.size(); ++i) {
    const double e = relative_error(analytic[i], numeric[i]);
    rec.check(e < kFdTolerance, e,
              term + "[" + std::to_string(i) + "]: analytic " + num(analytic[i]) + ", numeric " + num(numeric[i]) +
                  ", rel " + num(e));
  }
}

VectorXd randn(Index n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

VectorXd rand_binary(Index n, Rng& rng) {
  std::bernoulli_distribution b(0.5);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = b(rng) ? 1.0 : 0.0;
  return v;
}

void jitter(IbpDgm& m, Rng& rng, double scale) {
  m.encoder.params() += randn(m.encoder.params().size(), rng, scale);
  m.classifier.params() += randn(m.classifier.params().size(), rng, scale);
  m.decoder.params() += randn(m.decoder.params().size(), rng, scale);
}

// --- gradient suite pieces --------------------------------------------------

void check_distribution_scores(Recorder& rec, const Options& opts, Rng& rng) {
  {
    VectorXd logits = randn(4, rng, 1.5);
    const VectorXd z = (VectorXd(4) << 1, 0, 1, 0).finished();
    const VectorXd a = dist::bernoulli_score_grad(z, dist::BernoulliParams{logits});
    const VectorXd n = fd_gradient(logits, [&] { return dist::bernoulli_log_prob(z, dist::BernoulliParams{logits}); });
    compare(rec, "bernoulli_score", a, n);
  }
  {
    const double cases[][3] = {{2.0, 3.0, 0.3}, {0.5, 0.7, 0.9}, {4.0, 1.0, 0.15}, {1.3, 6.0, 0.05}};
    for (const auto& c : cases) {
      VectorXd ab(2);
      ab << c[0], c[1];
      const double v = c[2];
      auto [da, db] = dist::beta_score_grad(v, {ab[0], ab[1]});
      VectorXd a(2);
      a << da, db;
      if (opts.flip_beta_score) a = -a;
      const VectorXd n = fd_gradient(ab, [&] { return dist::beta_log_prob(v, {ab[0], ab[1]}); });
      compare(rec, "beta_score(a=" + num(c[0]) + ",b=" + num(c[1]) + ",v=" + num(v) + ")", a, n);
    }
  }
  {
    VectorXd logits = randn(5, rng);
    for (int y = 0; y < 5; y += 2) {
      const VectorXd a = dist::categorical_score_grad(y, logits);
      const VectorXd n = fd_gradient(
          logits, [&] { return dist::categorical_log_prob(y, dist::CategoricalParams::from_logits(logits)); });
      compare(rec, "categorical_score(y=" + std::to_string(y) + ")", a, n);
    }
  }
  {
    VectorXd mean = randn(3, rng);
    VectorXd var = (randn(3, rng, 0.5).array().abs() + 0.2).matrix();
    const VectorXd z = randn(3, rng);
    auto [dm, dv] = dist::gaussian_score_grad(z, dist::DiagGaussianParams{mean, var});
    compare(rec, "gaussian_score.mean", dm,
            fd_gradient(mean, [&] { return dist::gaussian_log_prob(z, dist::DiagGaussianParams{mean, var}); }));
    compare(rec, "gaussian_score.var", dv,
            fd_gradient(var, [&] { return dist::gaussian_log_prob(z, dist::DiagGaussianParams{mean, var}); }));
  }
}

void check_dense_net(Recorder& rec, Rng& rng) {
  const int hidden[] = {8, 6};
  nn::DenseNet net = nn::glorot_init(5, hidden, 4, rng);
  net.params() += randn(net.params().size(), rng, 0.1);
  MatrixXd x(5, 3);
  for (Index j = 0; j < 3; ++j) x.col(j) = randn(5, rng);
  MatrixXd g(4, 3);
  for (Index j = 0; j < 3; ++j) g.col(j) = randn(4, rng);
  auto f = nn::forward(net, x);
  auto b = nn::backward(net, f.tape, g);
  auto loss = [&] { return (nn::predict(net, x).array() * g.array()).sum(); };
  compare(rec, "dense_net.params", b.param_grads, fd_gradient(net.params(), loss));
  VectorXd xflat = Eigen::Map<VectorXd>(x.data(), x.size());
  const VectorXd gin = Eigen::Map<const VectorXd>(b.grad_input.data(), b.grad_input.size());
  const VectorXd n = fd_gradient(xflat, [&] {
    const MatrixXd xx = Eigen::Map<const MatrixXd>(xflat.data(), 5, 3);
    return (nn::predict(net, xx).array() * g.array()).sum();
  });
  compare(rec, "dense_net.input", gin, n);
}

void check_recon_kernel(Recorder& rec, Rng& rng) {
  const int D = 4;
  for (auto kind : {LikelihoodKind::bernoulli, LikelihoodKind::gaussian}) {
    const int O = kind == LikelihoodKind::bernoulli ? D : 2 * D;
    VectorXd out = randn(O, rng);
    const VectorXd x = kind == LikelihoodKind::bernoulli ? rand_binary(D, rng) : randn(D, rng);
    VectorXd a(O);
    recon_from_output(kind, x.data(), out.data(), D, a.data());
    const VectorXd n = fd_gradient(out, [&] { return recon_from_output(kind, x.data(), out.data(), D, nullptr); });
    compare(rec, "recon_kernel." + to_string(kind), a, n);
  }
}

void check_theta_prior(Recorder& rec, Rng& rng) {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.K = 2;
  cfg.num_classes = 2;
  cfg.hidden = 3;
  cfg.sigma_theta_sq = 0.1;
  IbpDgm m = IbpDgm::create(cfg, rng);
  jitter(m, rng, 0.2);
  const VectorXd a = theta_log_prior(m).second;
  compare(rec, "theta_log_prior", a, fd_gradient(m.decoder.params(), [&] { return theta_log_prior(m).first; }));
}

// Path part of one point's ELBO for a fixed draw: the zhat sample and the
// Gaussian noise are frozen, so everything else is a smooth function of the
// network parameters.
double path_objective(const IbpDgm& m, const VectorXd& x, int label, const VectorXd& eps, const VectorXd& zhat,
                      const TermOptions& to) {
  const Encoded enc = encode(m, x).encoded;
  const VectorXd logits = nn::predict(m.classifier, x).col(0);
  LatentDraw d;
  d.eps = eps;
  d.zhat = zhat;
  d.ztilde = dist::gaussian_reparam_sample(enc.gauss, eps);
  d.v = VectorXd::Constant(zhat.size(), 0.5);
  const auto t = per_point_elbo_terms(m, x, label, enc, logits, d, to);
  return t.recon - t.kl_gauss + t.term_y + t.term_sup;
}

void check_end_to_end(Recorder& rec, Rng& rng) {
  struct Route {
    const char* name;
    int label;
    UnlabeledMode mode;
  };
  const Route routes[] = {{"labeled", 1, UnlabeledMode::marginalize},
                          {"unlabeled.marginalize", -1, UnlabeledMode::marginalize},
                          {"unlabeled.unconditional", -1, UnlabeledMode::unconditional}};
  for (auto kind : {LikelihoodKind::bernoulli, LikelihoodKind::gaussian}) {
    ModelConfig cfg;
    cfg.input_dim = 5;
    cfg.K = 3;
    cfg.num_classes = 2;
    cfg.hidden = 8;
    cfg.kind = kind;
    IbpDgm m = IbpDgm::create(cfg, rng);
    jitter(m, rng, 0.3);
    const VectorXd x = kind == LikelihoodKind::bernoulli ? rand_binary(5, rng) : randn(5, rng);
    const VectorXd eps = randn(3, rng);
    const VectorXd zhat = (VectorXd(3) << 1, 0, 1).finished();
    for (const auto& r : routes) {
      const TermOptions to{r.mode, 0.7};
      auto enc = encode(m, x);
      auto cls = nn::forward(m.classifier, x);
      LatentDraw d;
      d.eps = eps;
      d.zhat = zhat;
      d.ztilde = dist::gaussian_reparam_sample(enc.encoded.gauss, eps);
      d.v = VectorXd::Constant(3, 0.5);
      const auto t = per_point_elbo_terms(m, x, r.label, enc.encoded, cls.output.col(0), d, to);
      const VectorXd g_enc = nn::backward(m.encoder, enc.tape, t.grad_encoder_out).param_grads;
      const VectorXd g_cls = nn::backward(m.classifier, cls.tape, t.grad_class_logits).param_grads;
      auto f = [&] { return path_objective(m, x, r.label, eps, zhat, to); };
      const std::string base = "elbo_path." + to_string(kind) + "." + r.name;
      compare(rec, base + ".encoder", g_enc, fd_gradient(m.encoder.params(), f));
      compare(rec, base + ".classifier", g_cls, fd_gradient(m.classifier.params(), f));
      compare(rec, base + ".decoder", t.grad_decoder, fd_gradient(m.decoder.params(), f));
    }
  }
}

// --- exact toy model (enumeration + Gauss-Hermite) --------------------------

struct GaussHermite {
  VectorXd nodes;
  VectorXd weights;  ///< sum to 1 (expectations under N(0, 1))
};

// Golub-Welsch for the probabilists' Hermite weight.
GaussHermite gauss_hermite(int n) {
  MatrixXd J = MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
  GaussHermite gh;
  gh.nodes = es.eigenvalues();
  gh.weights = es.eigenvectors().row(0).transpose().array().square();
  gh.weights /= gh.weights.sum();
  return gh;
}

struct ToyPoint {
  VectorXd x;
  int label;
};

// Decoder log-likelihood at every quadrature node for one zhat pattern.
// Columns: node pairs; rows: label slots.
MatrixXd node_recon(const IbpDgm& m, const VectorXd& x, const VectorXd& zt_mean, const VectorXd& zt_sd,
                    const VectorXd& zhat, const std::vector<VectorXd>& embeds, const GaussHermite& gh) {
  const int K = m.K();
  const int C = m.C();
  const Index n = gh.nodes.size();
  const Index nodes = n * n;
  MatrixXd out(static_cast<Index>(embeds.size()), nodes);
  MatrixXd zin(K + C, nodes);
  for (std::size_t e = 0; e < embeds.size(); ++e) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        const Index col = i * n + j;
        zin(0, col) = (zt_mean[0] + zt_sd[0] * gh.nodes[i]) * zhat[0];
        zin(1, col) = (zt_mean[1] + zt_sd[1] * gh.nodes[j]) * zhat[1];
        zin.col(col).tail(C) = embeds[e];
      }
    }
    const MatrixXd dec = nn::predict(m.decoder, zin);
    for (Index c = 0; c < nodes; ++c) {
      out(static_cast<Index>(e), c) = recon_from_output(m.config.kind, x.data(), dec.col(c).data(), m.D(), nullptr);
    }
  }
  return out;
}

double node_weight(const GaussHermite& gh, Index col) {
  const Index n = gh.nodes.size();
  return gh.weights[col / n] * gh.weights[col % n];
}

std::vector<VectorXd> all_zhat(int K) {
  std::vector<VectorXd> out;
  for (int mask = 0; mask < (1 << K); ++mask) {
    VectorXd z(K);
    for (int k = 0; k < K; ++k) z[k] = (mask >> k) & 1;
    out.push_back(z);
  }
  return out;
}

double exact_point_elbo(const IbpDgm& m, const ToyPoint& p, const VectorXd& pi, double alpha_sup,
                        UnlabeledMode mode, const GaussHermite& gh) {
  const int C = m.C();
  const Encoded enc = encode(m, p.x).encoded;
  const VectorXd logits = nn::predict(m.classifier, p.x).col(0);
  const VectorXd w = dist::softmax(logits);
  std::vector<VectorXd> embeds;
  VectorXd slot_w;
  if (p.label >= 0) {
    embeds.push_back(VectorXd::Unit(C, p.label));
    slot_w = VectorXd::Ones(1);
  } else if (mode == UnlabeledMode::marginalize) {
    for (int c = 0; c < C; ++c) embeds.push_back(VectorXd::Unit(C, c));
    slot_w = w;
  } else {
    embeds.push_back(VectorXd::Zero(C));
    slot_w = VectorXd::Ones(1);
  }
  const VectorXd sd = enc.gauss.var.array().sqrt();
  double total = 0.0;
  for (const auto& zh : all_zhat(m.K())) {
    const double log_q = dist::bernoulli_log_prob(zh, enc.zhat);
    const double log_p = ibp::ibp_prior_log_prob(zh, pi);
    const MatrixXd r = node_recon(m, p.x, enc.gauss.mean, sd, zh, embeds, gh);
    double er = 0.0;
    for (Index c = 0; c < r.cols(); ++c) er += node_weight(gh, c) * slot_w.dot(r.col(c));
    total += std::exp(log_q) * (er + log_p - log_q);
  }
  total -= dist::gaussian_kl_to_standard(enc.gauss);
  if (p.label >= 0) {
    total += alpha_sup * std::log(w[p.label]);
  } else {
    total -= dist::categorical_kl_to_uniform(dist::CategoricalParams{w});
  }
  return total;
}

// log p(x) of an unlabeled point under the prior, sticks fixed.
double exact_log_marginal(const IbpDgm& m, const VectorXd& x, const VectorXd& pi, const GaussHermite& gh) {
  const int C = m.C();
  std::vector<VectorXd> embeds;
  for (int c = 0; c < C; ++c) embeds.push_back(VectorXd::Unit(C, c));
  const VectorXd zero = VectorXd::Zero(m.K());
  const VectorXd one = VectorXd::Ones(m.K());
  std::vector<double> logs;
  for (const auto& zh : all_zhat(m.K())) {
    const double log_p = ibp::ibp_prior_log_prob(zh, pi);
    const MatrixXd r = node_recon(m, x, zero, one, zh, embeds, gh);
    for (Index e = 0; e < r.rows(); ++e) {
      for (Index c = 0; c < r.cols(); ++c) {
        logs.push_back(log_p - std::log(static_cast<double>(C)) + std::log(node_weight(gh, c)) + r(e, c));
      }
    }
  }
  const double mx = *std::max_element(logs.begin(), logs.end());
  double s = 0.0;
  for (double l : logs) s += std::exp(l - mx);
  return mx + std::log(s);
}

// --- variance toys ------------------------------------------------------------

struct VarianceOutcome {
  double var_plain = 0.0;
  double var_cv = 0.0;
};

// Empirical variance (summed over parameters) of the estimator with a = 0
// and with same-sample control variates, on paired draws.
template <class Draw>
VarianceOutcome paired_variance(int reps, int S, int P, Draw&& draw, double cv_eps) {
  MatrixXd plain(reps, P);
  MatrixXd cv(reps, P);
  for (int r = 0; r < reps; ++r) {
    bbvi::ScoreSampleSet set;
    set.signal.resize(S, P);
    set.score.resize(S, P);
    for (int s = 0; s < S; ++s) draw(set, s);
    plain.row(r) = bbvi::score_function_grad(set, VectorXd::Zero(P)).transpose();
    cv.row(r) = bbvi::score_function_grad(set, bbvi::control_variate_coeffs(set, cv_eps)).transpose();
  }
  auto var = [](const MatrixXd& a) {
    const Eigen::RowVectorXd mean = a.colwise().mean();
    return (a.rowwise() - mean).array().square().sum() / static_cast<double>(a.rows() - 1);
  };
  return {var(plain), var(cv)};
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

SuiteResult gradient_suite(const Options& opts) {
  Recorder rec("gradients");
  Rng rng = derive_stream(opts.seed, 1);
  check_distribution_scores(rec, opts, rng);
  check_dense_net(rec, rng);
  check_recon_kernel(rec, rng);
  check_theta_prior(rec, rng);
  check_end_to_end(rec, rng);
  return rec.finish();
}

SuiteResult normalization_suite(const Options& opts) {
  Recorder rec("normalization");
  Rng rng = derive_stream(opts.seed, 2);
  for (int K = 1; K <= 4; ++K) {
    VectorXd v(K);
    for (int k = 0; k < K; ++k) v[k] = dist::beta_sample({2.0, 1.0}, rng);
    const VectorXd pi = ibp::stick_breaking(v);
    double s_pi = 0.0;
    double s_sticks = 0.0;
    double s_q = 0.0;
    const dist::BernoulliParams q{randn(K, rng)};
    for (const auto& z : all_zhat(K)) {
      s_pi += std::exp(ibp::ibp_prior_log_prob(z, pi));
      s_sticks += std::exp(ibp::ibp_prior_terms_from_sticks(z, v).sum());
      s_q += std::exp(dist::bernoulli_log_prob(z, q));
    }
    const std::string k = "(K=" + std::to_string(K) + ")";
    rec.check(std::abs(s_pi - 1.0) < 1e-9, std::abs(s_pi - 1.0), "ibp_prior sum " + k + " = " + num(s_pi));
    rec.check(std::abs(s_sticks - 1.0) < 1e-9, std::abs(s_sticks - 1.0),
              "ibp_prior_terms_from_sticks sum " + k + " = " + num(s_sticks));
    rec.check(std::abs(s_q - 1.0) < 1e-9, std::abs(s_q - 1.0), "bernoulli sum " + k + " = " + num(s_q));
  }
  {
    LikelihoodParams lp;
    lp.kind = LikelihoodKind::bernoulli;
    lp.mean = (VectorXd(3) << 0.2, 0.55, 0.9).finished();
    double s = 0.0;
    for (const auto& x : all_zhat(3)) s += std::exp(likelihood_log_prob(x, lp));
    rec.check(std::abs(s - 1.0) < 1e-9, std::abs(s - 1.0), "bernoulli likelihood sum (D=3) = " + num(s));
  }
  {
    const VectorXd logits = randn(6, rng);
    double s = 0.0;
    const auto p = dist::CategoricalParams::from_logits(logits);
    for (int c = 0; c < 6; ++c) s += std::exp(dist::categorical_log_prob(c, p));
    rec.check(std::abs(s - 1.0) < 1e-9, std::abs(s - 1.0), "categorical sum = " + num(s));
  }
  {
    boost::math::quadrature::tanh_sinh<double> integrator;
    const double cases[][2] = {{0.5, 0.5}, {2.0, 1.0}, {1.0, 3.0}, {5.0, 2.0}, {0.3, 4.0}, {30.0, 40.0}};
    for (const auto& c : cases) {
      const dist::BetaParams bp{c[0], c[1]};
      const double s = integrator.integrate(
          [&](double v) { return v > 0.0 && v < 1.0 ? std::exp(dist::beta_log_prob(v, bp)) : 0.0; }, 0.0, 1.0);
      rec.check(std::abs(s - 1.0) < 1e-6, std::abs(s - 1.0),
                "beta integral (a=" + num(c[0]) + ", b=" + num(c[1]) + ") = " + num(s));
    }
  }
  {
    const dist::DiagGaussianParams q{(VectorXd(3) << 0.5, -1.0, 2.0).finished(),
                                     (VectorXd(3) << 0.3, 1.5, 0.8).finished()};
    const double kl = dist::gaussian_kl_to_standard(q);
    const int n = 100000;
    double sum = 0.0;
    double sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const VectorXd z = dist::gaussian_reparam_sample(q, randn(3, rng));
      const double l = dist::gaussian_log_prob(z, q) + 0.5 * (3.0 * kLog2Pi + z.squaredNorm());
      sum += l;
      sum2 += l * l;
    }
    const double mean = sum / n;
    const double sem = std::sqrt((sum2 / n - mean * mean) / (n - 1));
    const double z = std::abs(mean - kl) / sem;
    rec.check(z < 3.0, z, "gaussian KL " + num(kl) + " vs MC " + num(mean) + " (" + num(z) + " SEM)");
  }
  return rec.finish();
}

SuiteResult unbiasedness_suite(const Options& opts) {
  Recorder rec("unbiasedness");
  Rng rng = derive_stream(opts.seed, 3);
  ModelConfig cfg;
  cfg.input_dim = 5;
  cfg.K = 2;
  cfg.num_classes = 2;
  cfg.hidden = 0;
  IbpDgm m = IbpDgm::create(cfg, rng);
  jitter(m, rng, 0.3);
  const VectorXd v = (VectorXd(2) << 0.8, 0.5).finished();
  const VectorXd pi = ibp::stick_breaking(v);
  const double alpha_sup = 0.5;
  const std::vector<ToyPoint> pts = {{(VectorXd(5) << 1, 0, 1, 1, 0).finished(), 0},
                                     {(VectorXd(5) << 0, 1, 1, 0, 0).finished(), 1},
                                     {(VectorXd(5) << 1, 1, 0, 0, 1).finished(), -1},
                                     {(VectorXd(5) << 0, 0, 1, 0, 1).finished(), -1}};
  const GaussHermite gh = gauss_hermite(64);

  auto exact = [&] {
    double s = 0.0;
    for (const auto& p : pts) s += exact_point_elbo(m, p, pi, alpha_sup, UnlabeledMode::marginalize, gh);
    return s;
  };
  const double elbo = exact();
  const VectorXd g_enc = fd_gradient(m.encoder.params(), exact);
  const VectorXd g_cls = fd_gradient(m.classifier.params(), exact);
  const VectorXd g_dec = fd_gradient(m.decoder.params(), exact);

  for (const auto& p : pts) {
    if (p.label >= 0) continue;
    const double lm = exact_log_marginal(m, p.x, pi, gh);
    const double pe = exact_point_elbo(m, p, pi, 0.0, UnlabeledMode::marginalize, gh);
    rec.check(lm >= pe - 1e-6, std::max(0.0, pe - lm),
              "lower bound: log p(x) " + num(lm) + " < exact ELBO " + num(pe));
  }

  bbvi::Batch batch;
  batch.features.resize(5, static_cast<Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    batch.features.col(static_cast<Index>(i)) = pts[i].x;
    batch.labels.push_back(pts[i].label);
    batch.ids.push_back(i);
  }
  bbvi::EstimateOptions eo;
  eo.mc = {8, 1e-10, bbvi::CvMode::leave_one_out};
  eo.alpha_sup = alpha_sup;
  eo.frozen_v = v;
  eo.include_theta_prior = false;

  const int M = opts.unbiasedness_reps;
  const Index P = g_enc.size() + g_cls.size() + g_dec.size();
  VectorXd sum = VectorXd::Zero(P + 1);
  VectorXd sum2 = VectorXd::Zero(P + 1);
  double stick_grad = 0.0;
  for (int r = 0; r < M; ++r) {
    eo.seed = opts.seed * 1000003ULL + static_cast<std::uint64_t>(r);
    const auto e = bbvi::estimate_elbo_and_grads(m, batch, eo);
    VectorXd row(P + 1);
    row << e.total, e.grads.encoder, e.grads.classifier, e.grads.decoder;
    sum += row;
    sum2 += row.cwiseAbs2();
    stick_grad = std::max(stick_grad, e.grads.log_a.cwiseAbs().maxCoeff() + e.grads.log_b.cwiseAbs().maxCoeff());
  }
  VectorXd ex(P + 1);
  ex << elbo, g_enc, g_cls, g_dec;
  const VectorXd mean = sum / M;
  const VectorXd var = ((sum2 / M - mean.cwiseAbs2()) * (static_cast<double>(M) / (M - 1))).cwiseMax(0.0);
  const VectorXd sem = (var / M).cwiseSqrt();
  for (Index i = 0; i <= P; ++i) {
    const double diff = std::abs(mean[i] - ex[i]);
    const double z = sem[i] > 0.0 ? diff / sem[i] : (diff < 1e-7 ? 0.0 : INFINITY);
    const std::string what = i == 0 ? std::string("elbo") : "grad[" + std::to_string(i - 1) + "]";
    rec.check(diff <= 3.0 * sem[i] + 1e-7, z,
              what + ": MC mean " + num(mean[i]) + " vs exact " + num(ex[i]) + " (" + num(z) + " SEM)");
  }
  rec.check(stick_grad == 0.0, 0.0, "frozen sticks produced a stick gradient");
  return rec.finish();
}

SuiteResult variance_suite(const Options& opts) {
  Recorder rec("variance");
  Rng rng = derive_stream(opts.seed, 4);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int reps = 4000;
  const int S = 50;
  auto ratio_check = [&](const std::string& name, const VarianceOutcome& o, bool strict) {
    const double ratio = o.var_cv / o.var_plain;
    if (strict) {
      rec.check(o.var_cv < o.var_plain, ratio, name + ": variance ratio " + num(ratio) + " not < 1");
    }
    rec.check(ratio <= 1.05, ratio, name + ": control variates raised variance by factor " + num(ratio));
  };
  {
    const double p = sigmoid(0.3);
    auto o = paired_variance(reps, S, 1, [&](bbvi::ScoreSampleSet& set, int s) {
      const double z = unif(rng) < p ? 1.0 : 0.0;
      set.signal(s, 0) = 5.0 + 2.0 * z;
      set.score(s, 0) = z - p;
    }, 1e-10);
    ratio_check("correlated bernoulli", o, true);
  }
  {
    const double p = sigmoid(-0.4);
    auto o = paired_variance(reps, S, 1, [&](bbvi::ScoreSampleSet& set, int s) {
      const double z = unif(rng) < p ? 1.0 : 0.0;
      set.signal(s, 0) = normal(rng);
      set.score(s, 0) = z - p;
    }, 1e-10);
    ratio_check("independent bernoulli", o, false);
  }
  {
    const dist::BetaParams q{2.0, 3.0};
    auto o = paired_variance(reps, S, 2, [&](bbvi::ScoreSampleSet& set, int s) {
      const double x = dist::beta_sample(q, rng);
      const auto [da, db] = dist::beta_score_grad(x, q);
      const double f = std::log(2.0) + std::log(x) - dist::beta_log_prob(x, q);
      set.signal(s, 0) = set.signal(s, 1) = f;
      set.score(s, 0) = da * q.a;
      set.score(s, 1) = db * q.b;
    }, 1e-10);
    ratio_check("beta stick", o, false);
  }
  {
    const int big = 10000;
    const double p = sigmoid(0.2);
    bbvi::ScoreSampleSet set;
    set.signal.resize(big, 1);
    set.score.resize(big, 1);
    for (int s = 0; s < big; ++s) {
      const double z = unif(rng) < p ? 1.0 : 0.0;
      set.signal(s, 0) = normal(rng);
      set.score(s, 0) = z - p;
    }
    const double a = bbvi::control_variate_coeffs(set, 1e-10)[0];
    rec.check(std::abs(a) < 0.1, std::abs(a), "independent pair at S=1e4: |a| = " + num(std::abs(a)));
  }
  return rec.finish();
}

SuiteResult stick_moments_suite(const Options& opts) {
  Recorder rec("sticks");
  Rng rng = derive_stream(opts.seed, 5);
  const int K = 5;
  const double alpha = 2.0;
  const int n = 100000;
  VectorXd sum = VectorXd::Zero(K);
  VectorXd sum2 = VectorXd::Zero(K);
  VectorXd v(K);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < K; ++k) v[k] = dist::beta_sample({alpha, 1.0}, rng);
    const VectorXd pi = ibp::stick_breaking(v);
    sum += pi;
    sum2 += pi.cwiseAbs2();
  }
  for (int k = 0; k < K; ++k) {
    const double mean = sum[k] / n;
    const double sem = std::sqrt((sum2[k] / n - mean * mean) / (n - 1));
    const double want = std::pow(alpha / (alpha + 1.0), k + 1);
    const double z = std::abs(mean - want) / sem;
    rec.check(z < 3.0, z,
              "E[pi_" + std::to_string(k + 1) + "] MC " + num(mean) + " vs " + num(want) + " (" + num(z) + " SEM)");
  }
  return rec.finish();
}

std::vector<SuiteResult> run_all(const Options& opts) {
  return {gradient_suite(opts), normalization_suite(opts), unbiasedness_suite(opts), variance_suite(opts),
          stick_moments_suite(opts)};
}

bool all_pass(const std::vector<SuiteResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const SuiteResult& r) { return r.pass; });
}

std::string format(const std::vector<SuiteResult>& results) {
  std::ostringstream s;
  for (const auto& r : results) {
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %s  checks=%d  max_error=%.3g  %.2fs\n", r.name.c_str(),
                  r.pass ? "PASS" : "FAIL", r.checks, r.max_error, r.seconds);
    s << line;
    const std::size_t shown = std::min<std::size_t>(r.failures.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) s << "    " << r.failures[i] << "\n";
    if (r.failures.size() > shown) s << "    ... " << r.failures.size() - shown << " more\n";
  }
  s << (all_pass(results) ? "all suites passed" : "some suites FAILED") << "\n";
  return s.str();
}

}  // namespace ibpdgm::selftest

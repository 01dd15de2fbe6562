#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>

#include "ibpdgm/bbvi.hpp"
#include "oracles.hpp"

using namespace ibpdgm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

IbpDgm small_model(int C, std::uint64_t seed, LikelihoodKind kind = LikelihoodKind::bernoulli) {
  ModelConfig c;
  c.input_dim = 6;
  c.K = 4;
  c.num_classes = C;
  c.hidden = 10;
  c.kind = kind;
  Rng rng(seed);
  return IbpDgm::create(c, rng);
}

bbvi::Batch random_batch(int n, int D, int C, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  bbvi::Batch b;
  b.features.resize(D, n);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < D; ++d) b.features(d, i) = u(rng) < 0.4 ? 1.0 : 0.0;
    b.labels.push_back(i % 3 == 0 ? i % C : -1);
    b.ids.push_back(100 + static_cast<std::uint64_t>(i));
  }
  return b;
}

VectorXd flat(const bbvi::ModelGrads& g) {
  VectorXd v(g.encoder.size() + g.classifier.size() + g.decoder.size() + g.log_a.size() + g.log_b.size());
  v << g.encoder, g.classifier, g.decoder, g.log_a, g.log_b;
  return v;
}

}  // namespace

TEST_CASE("control variate coefficients") {
  Rng rng(51);
  std::normal_distribution<double> nd;
  const int S = 20;
  MatrixXd h(S, 2);
  for (int s = 0; s < S; ++s) h.row(s) << nd(rng), nd(rng);
  auto set = bbvi::ScoreSampleSet::with_shared_signal(VectorXd::Constant(S, 3.0), h);
  const VectorXd a = bbvi::control_variate_coeffs(set, 1e-10);
  CHECK(a[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(a[1] == doctest::Approx(3.0).epsilon(1e-9));

  set.score.col(1).setConstant(0.7);
  CHECK(bbvi::control_variate_coeffs(set, 1e-10)[1] == 0.0);

  bbvi::ScoreSampleSet one;
  one.signal = MatrixXd::Ones(1, 1);
  one.score = MatrixXd::Ones(1, 1);
  CHECK_THROWS_AS(bbvi::control_variate_coeffs(one, 1e-10), std::invalid_argument);
  auto two = bbvi::ScoreSampleSet::with_shared_signal(VectorXd::Ones(2), MatrixXd::Random(2, 1));
  CHECK_THROWS_AS(bbvi::score_function_grad_loo(two, 1e-10), std::invalid_argument);
}

TEST_CASE("independent signal gives a small coefficient") {
  Rng rng(52);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u;
  const int S = 10000;
  bbvi::ScoreSampleSet set;
  set.signal.resize(S, 1);
  set.score.resize(S, 1);
  for (int s = 0; s < S; ++s) {
    const double z = u(rng) < 0.3 ? 1.0 : 0.0;
    set.signal(s, 0) = nd(rng);
    set.score(s, 0) = z - 0.3;
  }
  CHECK(std::abs(bbvi::control_variate_coeffs(set, 1e-10)[0]) < 0.1);
}

TEST_CASE("constant signal: score estimate is zero-mean") {
  Rng rng(53);
  std::uniform_real_distribution<double> u;
  const int S = 100000;
  MatrixXd h(S, 1);
  for (int s = 0; s < S; ++s) h(s, 0) = (u(rng) < 0.6 ? 1.0 : 0.0) - 0.6;
  const auto set = bbvi::ScoreSampleSet::with_shared_signal(VectorXd::Constant(S, 2.5), h);
  const double est = bbvi::score_function_grad(set, VectorXd::Zero(1))[0];
  const double sem = 2.5 * std::sqrt(0.24 / S);
  CHECK(std::abs(est) < 3.0 * sem);
}

TEST_CASE("paired variance with and without control variates") {
  Rng rng(54);
  std::uniform_real_distribution<double> u;
  const int reps = 2000, S = 20;
  const double p = 0.35;
  std::vector<double> plain, same, loo;
  for (int r = 0; r < reps; ++r) {
    bbvi::ScoreSampleSet set;
    set.signal.resize(S, 1);
    set.score.resize(S, 1);
    for (int s = 0; s < S; ++s) {
      const double z = u(rng) < p ? 1.0 : 0.0;
      set.signal(s, 0) = -4.0 + 3.0 * z;
      set.score(s, 0) = z - p;
    }
    plain.push_back(bbvi::score_function_grad(set, VectorXd::Zero(1))[0]);
    same.push_back(bbvi::score_function_grad(set, {S, 1e-10, bbvi::CvMode::same_sample})[0]);
    loo.push_back(bbvi::score_function_grad(set, {S, 1e-10, bbvi::CvMode::leave_one_out})[0]);
  }
  auto var = [](const std::vector<double>& x) {
    MatrixXd m = Eigen::Map<const VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return oracle::column_stats(m).sem[0];
  };
  CHECK(var(same) < var(plain));
  CHECK(var(loo) < var(plain));
}

TEST_CASE("chunked estimator matches the serial reference") {
  for (auto kind : {LikelihoodKind::bernoulli, LikelihoodKind::gaussian}) {
    auto m = small_model(3, 55, kind);
    auto b = random_batch(37, 6, 3, 56);
    for (auto cv : {bbvi::CvMode::none, bbvi::CvMode::same_sample, bbvi::CvMode::leave_one_out}) {
      for (auto mode : {UnlabeledMode::marginalize, UnlabeledMode::unconditional}) {
        bbvi::EstimateOptions o;
        o.mc = {5, 1e-10, cv};
        o.mode = mode;
        o.alpha_sup = 0.8;
        o.dataset_size = 1000;
        o.seed = 9;
        o.step = 4;
        o.chunk_size = 8;
        const auto a = bbvi::estimate_elbo_and_grads(m, b, o);
        const auto r = bbvi::reference::estimate_elbo_and_grads(m, b, o);
        CHECK(a.total == doctest::Approx(r.total).epsilon(1e-10));
        CHECK(a.recon == doctest::Approx(r.recon).epsilon(1e-10));
        CHECK(a.term_zhat == doctest::Approx(r.term_zhat).epsilon(1e-10));
        CHECK(a.term_v == doctest::Approx(r.term_v).epsilon(1e-10));
        const VectorXd ga = flat(a.grads), gr = flat(r.grads);
        CHECK((ga - gr).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, gr.cwiseAbs().maxCoeff()));
      }
    }
  }
}

TEST_CASE("per-point weights: chunked estimator matches the reference") {
  auto m = small_model(3, 71);
  auto b = random_batch(29, 6, 3, 72);
  Rng rng(73);
  std::uniform_real_distribution<double> u(1.0, 50.0);
  for (int i = 0; i < 29; ++i) b.weights.push_back(u(rng));
  bbvi::EstimateOptions o;
  o.mc = {4, 1e-10, bbvi::CvMode::leave_one_out};
  o.alpha_sup = 1.5;
  o.seed = 2;
  o.chunk_size = 7;
  const auto a = bbvi::estimate_elbo_and_grads(m, b, o);
  const auto r = bbvi::reference::estimate_elbo_and_grads(m, b, o);
  CHECK(a.total == doctest::Approx(r.total).epsilon(1e-10));
  CHECK(a.term_sup == doctest::Approx(r.term_sup).epsilon(1e-10));
  CHECK(a.term_y == doctest::Approx(r.term_y).epsilon(1e-10));
  const VectorXd ga = flat(a.grads), gr = flat(r.grads);
  CHECK((ga - gr).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, gr.cwiseAbs().maxCoeff()));
}

TEST_CASE("uniform weights of N / B reproduce the unweighted estimate") {
  auto m = small_model(3, 74);
  auto b = random_batch(20, 6, 3, 75);
  bbvi::EstimateOptions o;
  o.dataset_size = 400;
  o.seed = 6;
  const auto plain = bbvi::estimate_elbo_and_grads(m, b, o);
  b.weights.assign(20, 400.0 / 20.0);
  const auto weighted = bbvi::estimate_elbo_and_grads(m, b, o);
  CHECK(plain.total == weighted.total);
  CHECK(flat(plain.grads) == flat(weighted.grads));
}

TEST_CASE("deterministic mode does not depend on thread count or chunk scheduling") {
  auto m = small_model(3, 57);
  auto b = random_batch(64, 6, 3, 58);
  bbvi::EstimateOptions o;
  o.seed = 3;
  o.deterministic = true;
  o.threads = 1;
  const auto one = bbvi::estimate_elbo_and_grads(m, b, o);
  o.threads = 4;
  const auto four = bbvi::estimate_elbo_and_grads(m, b, o);
  CHECK(one.total == four.total);
  CHECK(flat(one.grads) == flat(four.grads));
  const auto again = bbvi::estimate_elbo_and_grads(m, b, o);
  CHECK(flat(again.grads) == flat(four.grads));
}

TEST_CASE("breakdown total is the sum of its terms") {
  auto m = small_model(3, 59);
  auto b = random_batch(20, 6, 3, 60);
  bbvi::EstimateOptions o;
  o.alpha_sup = 2.0;
  o.dataset_size = 500;
  const auto e = bbvi::estimate_elbo_and_grads(m, b, o);
  CHECK(std::abs(e.total - e.sum_of_terms()) <= 1e-9 * std::max(1.0, std::abs(e.total)));
  CHECK(e.grads.all_finite());
}

TEST_CASE("frozen sticks give no stick gradient and no stick term") {
  auto m = small_model(3, 61);
  auto b = random_batch(10, 6, 3, 62);
  bbvi::EstimateOptions o;
  o.frozen_v = VectorXd::Constant(4, 0.7);
  const auto e = bbvi::estimate_elbo_and_grads(m, b, o);
  CHECK(e.grads.log_a.isZero());
  CHECK(e.grads.log_b.isZero());
  CHECK(e.term_v == 0.0);
}

TEST_CASE("single class: labeled and unlabeled batches agree") {
  auto m = small_model(1, 63);
  auto b = random_batch(12, 6, 1, 64);
  for (auto& y : b.labels) y = 0;
  bbvi::EstimateOptions o;
  const auto lab = bbvi::estimate_elbo_and_grads(m, b, o);
  for (auto& y : b.labels) y = -1;
  const auto unl = bbvi::estimate_elbo_and_grads(m, b, o);
  CHECK(lab.total == doctest::Approx(unl.total).epsilon(1e-12));
}

TEST_CASE("estimator argument checks") {
  auto m = small_model(3, 65);
  auto b = random_batch(5, 6, 3, 66);
  bbvi::EstimateOptions o;
  bbvi::Batch empty;
  empty.features.resize(6, 0);
  CHECK_THROWS_AS(bbvi::estimate_elbo_and_grads(m, empty, o), std::invalid_argument);
  auto wide = b;
  wide.features.conservativeResize(7, Eigen::NoChange);
  CHECK_THROWS_AS(bbvi::estimate_elbo_and_grads(m, wide, o), std::invalid_argument);
  auto short_w = b;
  short_w.weights = {1.0, 2.0};
  CHECK_THROWS_AS(bbvi::estimate_elbo_and_grads(m, short_w, o), std::invalid_argument);
  short_w.weights.assign(5, -1.0);
  CHECK_THROWS_AS(bbvi::estimate_elbo_and_grads(m, short_w, o), std::invalid_argument);
  o.mc.samples = 2;
  CHECK_THROWS_AS(bbvi::estimate_elbo_and_grads(m, b, o), std::invalid_argument);
}

TEST_CASE("non-finite parameters are reported with a term name") {
  auto m = small_model(3, 67);
  m.decoder.params()[0] = NAN;
  auto b = random_batch(5, 6, 3, 68);
  try {
    bbvi::estimate_elbo_and_grads(m, b, {});
    FAIL("expected NumericError");
  } catch (const bbvi::NumericError& e) {
    CHECK(!e.term().empty());
  }
}

// E_q[sum_i term_zhat_i + term_v] as a function of the stick parameters, in
// closed form apart from E[log(1 - v1 v2)], which uses the moment series.
namespace {

double beta_entropy(double a, double b) {
  using boost::math::digamma;
  return std::log(boost::math::beta(a, b)) - (a - 1) * digamma(a) - (b - 1) * digamma(b) +
         (a + b - 2) * digamma(a + b);
}

double exact_stick_objective(const VectorXd& log_a, const VectorXd& log_b, const std::vector<VectorXd>& q,
                             double alpha) {
  using boost::math::digamma;
  const double a1 = std::exp(log_a[0]), b1 = std::exp(log_b[0]);
  const double a2 = std::exp(log_a[1]), b2 = std::exp(log_b[1]);
  const double el1 = digamma(a1) - digamma(a1 + b1);
  const double el1m = digamma(b1) - digamma(a1 + b1);
  const double el2 = digamma(a2) - digamma(a2 + b2);
  const double el_pi2 = el1 + el2;
  const double el_1m_pi2 = oracle::expected_log_one_minus_product(a1, b1, a2, b2);
  double s = 0.0;
  for (const auto& qi : q) s += qi[0] * el1 + (1 - qi[0]) * el1m + qi[1] * el_pi2 + (1 - qi[1]) * el_1m_pi2;
  return s + 2 * std::log(alpha) + (alpha - 1) * (el1 + el2) + beta_entropy(a1, b1) + beta_entropy(a2, b2);
}

}  // namespace

TEST_CASE("stick gradients: unbiased without control variates and with leave-one-out") {
  ModelConfig c;
  c.input_dim = 5;
  c.K = 2;
  c.hidden = 0;
  Rng rng(69);
  auto m = IbpDgm::create(c, rng);
  m.sticks.log_a << std::log(2.5), std::log(1.5);
  m.sticks.log_b << std::log(1.2), std::log(2.0);
  bbvi::Batch b;
  b.features.resize(5, 4);
  b.features << 1, 0, 1, 0, 0, 1, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1;
  b.labels = {0, 0, 0, 0};
  b.ids = {0, 1, 2, 3};
  std::vector<VectorXd> q;
  for (int i = 0; i < 4; ++i) {
    const VectorXd out = nn::predict(m.encoder, b.features.col(i)).col(0);
    q.push_back(out.tail(2).unaryExpr(&oracle::sigmoid));
  }
  VectorXd la = m.sticks.log_a, lb = m.sticks.log_b;
  VectorXd exact(4);
  exact << oracle::fd_gradient(la, [&] { return exact_stick_objective(la, lb, q, c.alpha); }),
      oracle::fd_gradient(lb, [&] { return exact_stick_objective(la, lb, q, c.alpha); });

  const int M = 3000;
  for (auto cv : {bbvi::CvMode::none, bbvi::CvMode::leave_one_out, bbvi::CvMode::same_sample}) {
    bbvi::EstimateOptions o;
    o.mc = {8, 1e-10, cv};
    o.include_theta_prior = false;
    MatrixXd rows(M, 4);
    for (int r = 0; r < M; ++r) {
      o.seed = 5000 + static_cast<std::uint64_t>(r);
      const auto e = bbvi::estimate_elbo_and_grads(m, b, o);
      rows.row(r) << e.grads.log_a.transpose(), e.grads.log_b.transpose();
    }
    const auto st = oracle::column_stats(rows);
    const VectorXd z = ((st.mean - exact).array() / st.sem.array()).matrix();
    CAPTURE(bbvi::to_string(cv));
    CAPTURE(z.transpose());
    if (cv == bbvi::CvMode::same_sample) {
      // Coefficients estimated from the same draws shrink the stick gradients.
      CHECK(z.cwiseAbs().maxCoeff() > 5.0);
    } else {
      CHECK(z.cwiseAbs().maxCoeff() < 3.5);
    }
  }
}

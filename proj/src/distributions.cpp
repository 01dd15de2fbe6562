#include "ibpdgm/distributions.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ibpdgm/numerics.hpp"

namespace ibpdgm::dist {

void DiagGaussianParams::validate() const {
  if (mean.size() != var.size()) throw std::invalid_argument("DiagGaussianParams: size mismatch");
  if (!mean.allFinite() || !var.allFinite() || (var.array() <= 0.0).any()) {
    throw std::invalid_argument("DiagGaussianParams: variances must be finite and positive");
  }
}

Eigen::VectorXd BernoulliParams::probs() const { return logits.unaryExpr(&sigmoid); }

BernoulliParams BernoulliParams::from_probs(const Eigen::VectorXd& p) {
  BernoulliParams b;
  b.logits = p.unaryExpr([](double q) {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("Bernoulli probability outside (0,1)");
    return std::log(q) - std::log1p(-q);
  });
  return b;
}

CategoricalParams::CategoricalParams(Eigen::VectorXd probs) : probs_(std::move(probs)) {
  if (probs_.size() == 0) throw std::invalid_argument("CategoricalParams: empty");
  if ((probs_.array() < 0.0).any() || std::abs(probs_.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("CategoricalParams: probabilities must lie on the simplex");
  }
}

CategoricalParams CategoricalParams::from_logits(const Eigen::VectorXd& logits) {
  return CategoricalParams(softmax(logits));
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd gaussian_reparam_sample(const DiagGaussianParams& p, const Eigen::VectorXd& eps) {
  if (eps.size() != p.mean.size()) throw std::invalid_argument("gaussian_reparam_sample: size mismatch");
  return p.mean + p.stddev().cwiseProduct(eps);
}

double gaussian_kl_to_standard(const DiagGaussianParams& p) {
  return 0.5 * (p.mean.array().square() + p.var.array() - 1.0 - p.var.array().log()).sum();
}

double gaussian_log_prob(const Eigen::VectorXd& z, const DiagGaussianParams& p) {
  if (z.size() != p.mean.size()) throw std::invalid_argument("gaussian_log_prob: size mismatch");
  return (-0.5 * (kLog2Pi + p.var.array().log()) -
          0.5 * (z - p.mean).array().square() / p.var.array())
      .sum();
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> gaussian_score_grad(const Eigen::VectorXd& z,
                                                                const DiagGaussianParams& p) {
  Eigen::ArrayXd d = (z - p.mean).array();
  Eigen::VectorXd dmean = (d / p.var.array()).matrix();
  Eigen::VectorXd dvar = (-0.5 / p.var.array() + 0.5 * d.square() / p.var.array().square()).matrix();
  return {dmean, dvar};
}

namespace {

void check_binary(const Eigen::VectorXd& z, const char* who) {
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    if (z[k] != 0.0 && z[k] != 1.0) throw std::invalid_argument(std::string(who) + ": z must be binary");
  }
}

}  // namespace

double bernoulli_log_prob(const Eigen::VectorXd& z, const BernoulliParams& p) {
  if (z.size() != p.logits.size()) throw std::invalid_argument("bernoulli_log_prob: size mismatch");
  check_binary(z, "bernoulli_log_prob");
  double s = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    s += z[k] != 0.0 ? log_sigmoid(p.logits[k]) : log_sigmoid(-p.logits[k]);
  }
  return s;
}

Eigen::VectorXd bernoulli_score_grad(const Eigen::VectorXd& z, const BernoulliParams& p) {
  if (z.size() != p.logits.size()) throw std::invalid_argument("bernoulli_score_grad: size mismatch");
  check_binary(z, "bernoulli_score_grad");
  return z - p.probs();
}

double gamma_sample(double shape, Rng& rng) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma_sample: shape must be positive");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (shape < 1.0) {
    const double u = unif(rng);
    return gamma_sample(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = unif(rng);
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

namespace {

// log of a Gamma(shape) draw; stays finite for tiny shapes where the draw
// itself underflows.
double log_gamma_sample(double shape, Rng& rng) {
  if (shape < 1.0) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    if (u <= 0.0) u = std::numeric_limits<double>::min();
    return std::log(gamma_sample(shape + 1.0, rng)) + std::log(u) / shape;
  }
  return std::log(gamma_sample(shape, rng));
}

}  // namespace

double beta_sample(const BetaParams& p, Rng& rng) {
  if (!(p.a > 0.0) || !(p.b > 0.0)) throw std::invalid_argument("beta_sample: a, b must be positive");
  const double lx = log_gamma_sample(p.a, rng);
  const double ly = log_gamma_sample(p.b, rng);
  const double v = sigmoid(lx - ly);
  return std::clamp(v, kBetaClamp, 1.0 - kBetaClamp);
}

namespace {

void check_unit_open(double v, const char* who) {
  if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument(std::string(who) + ": v must lie in (0,1)");
}

}  // namespace

double beta_log_prob(double v, const BetaParams& p) {
  check_unit_open(v, "beta_log_prob");
  const double log_beta = std::lgamma(p.a) + std::lgamma(p.b) - std::lgamma(p.a + p.b);
  return (p.a - 1.0) * std::log(v) + (p.b - 1.0) * std::log1p(-v) - log_beta;
}

std::pair<double, double> beta_score_grad(double v, const BetaParams& p) {
  check_unit_open(v, "beta_score_grad");
  const double psi_ab = digamma(p.a + p.b);
  return {std::log(v) - digamma(p.a) + psi_ab, std::log1p(-v) - digamma(p.b) + psi_ab};
}

double digamma(double x) {
  if (!(x > 0.0)) throw std::invalid_argument("digamma: x must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // ln x - 1/(2x) - sum B_2n / (2n x^2n)
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

double categorical_log_prob(int y, const CategoricalParams& p) {
  if (y < 0 || y >= p.num_classes()) throw std::invalid_argument("categorical_log_prob: class out of range");
  return std::log(p.probs()[y]);
}

int categorical_sample(const CategoricalParams& p, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double cdf = 0.0;
  for (int c = 0; c < p.num_classes(); ++c) {
    cdf += p.probs()[c];
    if (u < cdf) return c;
  }
  // u landed in the rounding gap above the accumulated sum
  for (int c = p.num_classes() - 1; c >= 0; --c) {
    if (p.probs()[c] > 0.0) return c;
  }
  return p.num_classes() - 1;
}

double categorical_kl_to_uniform(const CategoricalParams& p) {
  const double C = static_cast<double>(p.num_classes());
  double kl = 0.0;
  for (Eigen::Index c = 0; c < p.probs().size(); ++c) {
    const double w = p.probs()[c];
    if (w > 0.0) kl += w * std::log(C * w);
  }
  return kl;
}

Eigen::VectorXd categorical_score_grad(int y, const Eigen::VectorXd& logits) {
  if (y < 0 || y >= logits.size()) throw std::invalid_argument("categorical_score_grad: class out of range");
  Eigen::VectorXd g = -softmax(logits);
  g[y] += 1.0;
  return g;
}

}  // namespace ibpdgm::dist

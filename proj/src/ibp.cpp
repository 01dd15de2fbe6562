#include "ibpdgm/ibp.hpp"

#include <cmath>
#include <stdexcept>

namespace ibpdgm::ibp {

GlobalSticks GlobalSticks::from_prior(int K, double alpha) {
  if (K < 1) throw std::invalid_argument("GlobalSticks: K must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("GlobalSticks: alpha must be positive");
  GlobalSticks s;
  s.K = K;
  s.alpha = alpha;
  s.log_a = Eigen::VectorXd::Constant(K, std::log(alpha));
  s.log_b = Eigen::VectorXd::Zero(K);
  return s;
}

void GlobalSticks::validate() const {
  if (log_a.size() != K || log_b.size() != K) throw std::invalid_argument("GlobalSticks: size mismatch");
  for (int k = 0; k < K; ++k) {
    const auto p = beta(k);
    if (!std::isfinite(p.a) || !std::isfinite(p.b) || p.a <= 0.0 || p.b <= 0.0) {
      throw std::invalid_argument("GlobalSticks: Beta parameters must be finite and positive");
    }
  }
}

Eigen::VectorXd stick_breaking(const Eigen::VectorXd& v) {
  Eigen::VectorXd pi(v.size());
  double run = 1.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!(v[k] > 0.0 && v[k] <= 1.0)) throw std::invalid_argument("stick_breaking: v outside (0,1]");
    run *= v[k];
    pi[k] = run;
  }
  return pi;
}

double ibp_prior_log_prob(const Eigen::VectorXd& zhat, const Eigen::VectorXd& pi) {
  if (zhat.size() != pi.size()) throw std::invalid_argument("ibp_prior_log_prob: length mismatch");
  double s = 0.0;
  for (Eigen::Index k = 0; k < pi.size(); ++k) {
    if (!(pi[k] > 0.0 && pi[k] <= 1.0)) throw std::invalid_argument("ibp_prior_log_prob: pi outside (0,1]");
    if (zhat[k] != 0.0) {
      s += std::log(pi[k]);
    } else {
      s += pi[k] == 1.0 ? kLogZeroSentinel : std::log1p(-pi[k]);
    }
  }
  return s;
}

Eigen::VectorXd ibp_prior_terms_from_sticks(const Eigen::VectorXd& zhat, const Eigen::VectorXd& v) {
  if (zhat.size() != v.size()) throw std::invalid_argument("ibp_prior_terms_from_sticks: length mismatch");
  Eigen::VectorXd out(v.size());
  double log_pi = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    log_pi += std::log(v[k]);
    if (zhat[k] != 0.0) {
      out[k] = log_pi;
    } else {
      // log(1 - exp(log_pi)), stable on both ends
      out[k] = log_pi == 0.0 ? kLogZeroSentinel
               : log_pi > -0.6931471805599453 ? std::log(-std::expm1(log_pi))
                                              : std::log1p(-std::exp(log_pi));
    }
  }
  return out;
}

double sticks_prior_log_prob(const Eigen::VectorXd& v, double alpha) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!(v[k] > 0.0 && v[k] < 1.0)) throw std::invalid_argument("sticks_prior_log_prob: v outside (0,1)");
    s += std::log(alpha) + (alpha - 1.0) * std::log(v[k]);
  }
  return s;
}

ActiveComponents active_components(const Eigen::MatrixXd& pi_hat, double tau) {
  ActiveComponents r;
  const Eigen::Index K = pi_hat.rows();
  const Eigen::Index N = pi_hat.cols();
  r.mean = Eigen::VectorXd::Zero(K);
  r.stddev = Eigen::VectorXd::Zero(K);
  if (N == 0) return r;
  r.mean = pi_hat.rowwise().mean();
  for (Eigen::Index k = 0; k < K; ++k) {
    const double var = (pi_hat.row(k).array() - r.mean[k]).square().sum() / static_cast<double>(N);
    r.stddev[k] = std::sqrt(var);
    if (r.mean[k] > tau) r.indices.push_back(static_cast<int>(k));
  }
  r.count = static_cast<int>(r.indices.size());
  return r;
}

}  // namespace ibpdgm::ibp

#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ibpdgm/nn.hpp"
#include "oracles.hpp"

using namespace ibpdgm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("glorot bound and argument checks") {
  CHECK(nn::glorot_bound(4, 2) == doctest::Approx(1.0));
  CHECK_THROWS_AS(nn::glorot_bound(0, 2), std::invalid_argument);
  Rng rng(1);
  const std::vector<int> none;
  CHECK_THROWS_AS(nn::glorot_init(0, none, 3, rng), std::invalid_argument);
  const std::vector<int> bad = {0};
  CHECK_THROWS_AS(nn::glorot_init(3, bad, 3, rng), std::invalid_argument);
}

TEST_CASE("glorot init is seeded, bounded, with zero biases") {
  const std::vector<int> hidden = {7};
  Rng a(5), b(5);
  const auto n1 = nn::glorot_init(4, hidden, 3, a);
  const auto n2 = nn::glorot_init(4, hidden, 3, b);
  CHECK(n1.params() == n2.params());
  CHECK(n1.weight(0).cwiseAbs().maxCoeff() <= nn::glorot_bound(4, 7));
  CHECK(n1.weight(1).cwiseAbs().maxCoeff() <= nn::glorot_bound(7, 3));
  CHECK(n1.bias(0).isZero());
  CHECK(n1.bias(1).isZero());
  CHECK(n1.num_params() == 4 * 7 + 7 + 7 * 3 + 3);
}

TEST_CASE("forward on hand-set layers") {
  const std::vector<int> none;
  nn::DenseNet id(2, none, 2);
  id.weight(0) = MatrixXd::Identity(2, 2);
  MatrixXd x(2, 1);
  x << 1, 2;
  CHECK(nn::predict(id, x) == x);

  const std::vector<int> one = {2};
  nn::DenseNet relu(2, one, 2);
  relu.weight(0) = MatrixXd::Identity(2, 2);
  relu.weight(1) = MatrixXd::Identity(2, 2);
  MatrixXd in(2, 1);
  in << -1, 3;
  const MatrixXd out = nn::predict(relu, in);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(1, 0) == 3.0);
}

TEST_CASE("forward rejects bad input and is pure") {
  Rng rng(2);
  const std::vector<int> hidden = {5};
  const auto net = nn::glorot_init(3, hidden, 2, rng);
  CHECK_THROWS_AS(nn::forward(net, MatrixXd::Zero(4, 1)), std::invalid_argument);
  MatrixXd bad = MatrixXd::Zero(3, 1);
  bad(1, 0) = NAN;
  CHECK_THROWS_AS(nn::forward(net, bad), std::invalid_argument);
  const MatrixXd x = MatrixXd::Random(3, 4);
  const auto f = nn::forward(net, x);
  CHECK(nn::predict(net, x) == f.output);
  CHECK(f.tape.output() == f.output);
}

TEST_CASE("backward of a single linear layer") {
  const std::vector<int> none;
  nn::DenseNet lin(3, none, 2);
  lin.params().setRandom();
  MatrixXd x(3, 1);
  x << 0.5, -1.0, 2.0;
  const auto f = nn::forward(lin, x);
  MatrixXd g = MatrixXd::Zero(2, 1);
  g(0, 0) = 1.0;
  const auto b = nn::backward(lin, f.tape, g);
  const Eigen::Map<const MatrixXd> gw(b.param_grads.data(), 2, 3);
  CHECK(gw.row(0).transpose() == x.col(0));
  CHECK(gw.row(1).isZero());
  CHECK(b.grad_input.col(0) == lin.weight(0).row(0).transpose());
}

TEST_CASE("dead relu units pass no gradient") {
  const std::vector<int> one = {2};
  nn::DenseNet net(2, one, 1);
  net.weight(0) = MatrixXd::Identity(2, 2);
  net.bias(0) << -10.0, -10.0;
  net.weight(1) << 1.0, 1.0;
  MatrixXd x(2, 1);
  x << 1.0, 2.0;
  const auto f = nn::forward(net, x);
  const auto b = nn::backward(net, f.tape, MatrixXd::Ones(1, 1));
  CHECK(b.grad_input.isZero());
  CHECK(b.param_grads.head(6).isZero());
}

TEST_CASE("backward rejects a mismatched tape") {
  Rng rng(3);
  const std::vector<int> h1 = {4}, h2 = {5};
  const auto a = nn::glorot_init(3, h1, 2, rng);
  const auto b = nn::glorot_init(3, h2, 2, rng);
  const auto f = nn::forward(a, MatrixXd::Random(3, 1));
  CHECK_THROWS_AS(nn::backward(b, f.tape, MatrixXd::Ones(2, 1)), std::invalid_argument);
}

TEST_CASE("backward matches finite differences on a deep net") {
  Rng rng(4);
  const std::vector<int> hidden = {6, 5};
  auto net = nn::glorot_init(4, hidden, 3, rng);
  net.params().array() += 0.05;
  const MatrixXd x = MatrixXd::Random(4, 2);
  const MatrixXd g = MatrixXd::Random(3, 2);
  const auto f = nn::forward(net, x);
  const auto b = nn::backward(net, f.tape, g);
  const VectorXd fd =
      oracle::fd_gradient(net.params(), [&] { return (nn::predict(net, x).array() * g.array()).sum(); });
  CHECK(oracle::max_rel_err(b.param_grads, fd, 1e-4) < 1e-5);
}

TEST_CASE("adam step") {
  VectorXd p = VectorXd::Constant(3, 1.0);
  auto st = nn::AdamState::for_size(3);
  nn::adam_step(p, VectorXd::Zero(3), st);
  CHECK(p == VectorXd::Constant(3, 1.0));

  auto fresh = nn::AdamState::for_size(3);
  VectorXd q = VectorXd::Zero(3);
  nn::adam_step(q, VectorXd::Constant(3, 0.37), fresh);
  for (int i = 0; i < 3; ++i) CHECK(q[i] == doctest::Approx(-3e-4).epsilon(1e-6));
  CHECK_THROWS_AS(nn::adam_step(q, VectorXd::Zero(2), fresh), std::invalid_argument);
}

TEST_CASE("global norm clipping") {
  VectorXd a = VectorXd::Constant(4, 3.0);
  VectorXd b = VectorXd::Constant(1, 4.0);
  std::vector<VectorXd*> gs = {&a, &b};
  const double before = nn::clip_global_norm(gs, 5.0);
  CHECK(before == doctest::Approx(std::sqrt(36.0 + 16.0)));
  CHECK(std::sqrt(a.squaredNorm() + b.squaredNorm()) == doctest::Approx(5.0));
  VectorXd c = VectorXd::Constant(2, 0.1);
  std::vector<VectorXd*> small = {&c};
  nn::clip_global_norm(small, 5.0);
  CHECK(c == VectorXd::Constant(2, 0.1));
}

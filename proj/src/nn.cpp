#include "ibpdgm/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ibpdgm::nn {

DenseNet::DenseNet(int input_dim, std::span<const int> hidden_dims, int output_dim) {
  if (input_dim < 1 || output_dim < 1) {
    throw std::invalid_argument("DenseNet: dimensions must be >= 1");
  }
  for (int h : hidden_dims) {
    if (h < 1) throw std::invalid_argument("DenseNet: hidden dimensions must be >= 1");
  }
  std::size_t offset = 0;
  int in = input_dim;
  auto add_layer = [&](int out, Activation act) {
    LayerShape s;
    s.in = in;
    s.out = out;
    s.act = act;
    s.weight_offset = offset;
    offset += static_cast<std::size_t>(in) * static_cast<std::size_t>(out);
    s.bias_offset = offset;
    offset += static_cast<std::size_t>(out);
    layers_.push_back(s);
    in = out;
  };
  for (int h : hidden_dims) add_layer(h, Activation::relu);
  add_layer(output_dim, Activation::identity);
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
}

Eigen::Map<Eigen::MatrixXd> DenseNet::weight(std::size_t layer) {
  const auto& s = layers_.at(layer);
  return {params_.data() + s.weight_offset, s.out, s.in};
}

Eigen::Map<const Eigen::MatrixXd> DenseNet::weight(std::size_t layer) const {
  const auto& s = layers_.at(layer);
  return {params_.data() + s.weight_offset, s.out, s.in};
}

Eigen::Map<Eigen::VectorXd> DenseNet::bias(std::size_t layer) {
  const auto& s = layers_.at(layer);
  return {params_.data() + s.bias_offset, s.out};
}

Eigen::Map<const Eigen::VectorXd> DenseNet::bias(std::size_t layer) const {
  const auto& s = layers_.at(layer);
  return {params_.data() + s.bias_offset, s.out};
}

bool DenseNet::same_shape(const DenseNet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.in != b.in || a.out != b.out || a.act != b.act) return false;
  }
  return true;
}

namespace {

void apply_activation(Activation act, Eigen::MatrixXd& m) {
  if (act == Activation::relu) m = m.cwiseMax(0.0);
}

}  // namespace

Eigen::MatrixXd Tape::output() const {
  if (pre_activations.empty()) return {};
  Eigen::MatrixXd out = pre_activations.back();
  apply_activation(shapes.back().act, out);
  return out;
}

double glorot_bound(int fan_in, int fan_out) {
  if (fan_in < 1 || fan_out < 1) {
    throw std::invalid_argument("glorot_bound: fan_in and fan_out must be >= 1");
  }
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

DenseNet glorot_init(int input_dim, std::span<const int> hidden_dims, int output_dim,
                     Rng& rng) {
  DenseNet net(input_dim, hidden_dims, output_dim);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& s = net.layers()[l];
    const double b = glorot_bound(s.in, s.out);
    std::uniform_real_distribution<double> unif(-b, b);
    auto w = net.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = unif(rng);
    }
  }
  return net;
}

ForwardResult forward(const DenseNet& net, const Eigen::MatrixXd& x) {
  if (net.num_layers() == 0) throw std::invalid_argument("forward: empty network");
  if (x.rows() != net.input_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.rows()) +
                                " rows, network expects " + std::to_string(net.input_dim()));
  }
  if (!x.allFinite()) throw std::invalid_argument("forward: non-finite input");

  ForwardResult r;
  r.tape.shapes = net.layers();
  r.tape.inputs.reserve(net.num_layers());
  r.tape.pre_activations.reserve(net.num_layers());
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Eigen::MatrixXd pre = net.weight(l) * h;
    pre.colwise() += net.bias(l);
    r.tape.inputs.push_back(std::move(h));
    h = pre;
    apply_activation(net.layers()[l].act, h);
    r.tape.pre_activations.push_back(std::move(pre));
  }
  r.output = std::move(h);
  return r;
}

Eigen::MatrixXd predict(const DenseNet& net, const Eigen::MatrixXd& x) {
  if (x.rows() != net.input_dim()) throw std::invalid_argument("predict: dimension mismatch");
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Eigen::MatrixXd pre = net.weight(l) * h;
    pre.colwise() += net.bias(l);
    apply_activation(net.layers()[l].act, pre);
    h = std::move(pre);
  }
  return h;
}

Eigen::MatrixXd backward_accumulate(const DenseNet& net, const Tape& tape,
                                    const Eigen::MatrixXd& grad_out,
                                    Eigen::Ref<Eigen::VectorXd> param_grads) {
  const std::size_t n = net.num_layers();
  if (tape.shapes.size() != n || tape.inputs.size() != n || tape.pre_activations.size() != n) {
    throw std::invalid_argument("backward: tape does not match network depth");
  }
  for (std::size_t l = 0; l < n; ++l) {
    const auto& a = tape.shapes[l];
    const auto& b = net.layers()[l];
    if (a.in != b.in || a.out != b.out || a.act != b.act) {
      throw std::invalid_argument("backward: tape layer " + std::to_string(l) +
                                  " does not match network");
    }
  }
  if (grad_out.rows() != net.output_dim() || grad_out.cols() != tape.batch()) {
    throw std::invalid_argument("backward: grad_out shape mismatch");
  }
  if (static_cast<std::size_t>(param_grads.size()) != net.num_params()) {
    throw std::invalid_argument("backward: gradient buffer size mismatch");
  }

  Eigen::MatrixXd delta = grad_out;
  for (std::size_t li = n; li-- > 0;) {
    const auto& s = net.layers()[li];
    if (s.act == Activation::relu) {
      delta = (tape.pre_activations[li].array() > 0.0).select(delta, 0.0);
    }
    Eigen::Map<Eigen::MatrixXd> gw(param_grads.data() + s.weight_offset, s.out, s.in);
    Eigen::Map<Eigen::VectorXd> gb(param_grads.data() + s.bias_offset, s.out);
    gw.noalias() += delta * tape.inputs[li].transpose();
    gb += delta.rowwise().sum();
    Eigen::MatrixXd next = net.weight(li).transpose() * delta;
    delta = std::move(next);
  }
  return delta;
}

BackwardResult backward(const DenseNet& net, const Tape& tape, const Eigen::MatrixXd& grad_out) {
  BackwardResult r;
  r.param_grads = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_params()));
  r.grad_input = backward_accumulate(net, tape, grad_out, r.param_grads);
  return r;
}

AdamState AdamState::for_size(Eigen::Index n, double lr, double beta1, double beta2, double eps) {
  if (!(lr > 0.0)) throw std::invalid_argument("AdamState: lr must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("AdamState: betas must lie in (0, 1)");
  }
  AdamState s;
  s.first_moment = Eigen::VectorXd::Zero(n);
  s.second_moment = Eigen::VectorXd::Zero(n);
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads,
               AdamState& state) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!(state.lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  params.array() -= state.lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.eps);
}

double clip_global_norm(std::span<Eigen::VectorXd* const> grads, double max_norm) {
  double sq = 0.0;
  for (const auto* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto* g : grads) *g *= scale;
  }
  return norm;
}

}  // namespace ibpdgm::nn

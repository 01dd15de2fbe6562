#pragma once

// Dense feedforward networks with manual reverse-mode gradients and AdaM.
//
// Parameters of a network live in one flat vector (per layer: weight matrix in
// column-major order, then bias), so optimizers and checkpoints can treat
// every network uniformly. Inputs are processed column-wise: a batch is an
// (input_dim x batch) matrix.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ibpdgm/rng.hpp"

namespace ibpdgm::nn {

enum class Activation { relu, identity };

struct LayerShape {
  int in = 0;
  int out = 0;
  Activation act = Activation::identity;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

class DenseNet {
 public:
  DenseNet() = default;
  /// Hidden layers use ReLU, the output layer is affine. All parameters zero.
  DenseNet(int input_dim, std::span<const int> hidden_dims, int output_dim);

  int input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  int output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  const std::vector<LayerShape>& layers() const { return layers_; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  Eigen::Map<Eigen::MatrixXd> weight(std::size_t layer);
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  /// Same layer structure as `other`.
  bool same_shape(const DenseNet& other) const;

 private:
  std::vector<LayerShape> layers_;
  Eigen::VectorXd params_;
};

/// Cached inputs and pre-activations of one forward pass.
struct Tape {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre_activations;
  std::vector<LayerShape> shapes;

  Eigen::Index batch() const { return inputs.empty() ? 0 : inputs.front().cols(); }
  /// Network output recomputed from the cached last pre-activation.
  Eigen::MatrixXd output() const;
};

struct ForwardResult {
  Eigen::MatrixXd output;
  Tape tape;
};

struct BackwardResult {
  Eigen::VectorXd param_grads;
  Eigen::MatrixXd grad_input;
};

/// Glorot-uniform weights in [-b, b], b = sqrt(6 / (fan_in + fan_out)); zero biases.
DenseNet glorot_init(int input_dim, std::span<const int> hidden_dims, int output_dim,
                     Rng& rng);

double glorot_bound(int fan_in, int fan_out);

ForwardResult forward(const DenseNet& net, const Eigen::MatrixXd& x);
/// Output only, no tape.
Eigen::MatrixXd predict(const DenseNet& net, const Eigen::MatrixXd& x);

/// Reverse pass. Parameter gradients of <grad_out, output> are *added* into
/// `param_grads` (which must have num_params() entries); returns d/d input.
/// ReLU subgradient at 0 is 0.
Eigen::MatrixXd backward_accumulate(const DenseNet& net, const Tape& tape,
                                    const Eigen::MatrixXd& grad_out,
                                    Eigen::Ref<Eigen::VectorXd> param_grads);

BackwardResult backward(const DenseNet& net, const Tape& tape, const Eigen::MatrixXd& grad_out);

struct AdamState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  long step_count = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(Eigen::Index n, double lr = 3e-4, double beta1 = 0.9,
                            double beta2 = 0.999, double eps = 1e-8);
};

/// One bias-corrected AdaM descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads,
               AdamState& state);

/// Scales every vector in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(std::span<Eigen::VectorXd* const> grads, double max_norm);

}  // namespace ibpdgm::nn

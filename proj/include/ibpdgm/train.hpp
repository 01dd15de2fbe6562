#pragma once

// Training, evaluation and component reports on top of the estimator.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ibpdgm/config.hpp"
#include "ibpdgm/data.hpp"
#include "ibpdgm/ibp.hpp"
#include "ibpdgm/model.hpp"

namespace ibpdgm {

struct TrainData {
  data::Dataset train;  ///< full labels; the split hides most of them
  data::Dataset test;   ///< may be empty
  /// Resample binary pixels every epoch (Bernoulli kind with grey-level input).
  bool binarize = false;
};

/// Loads or synthesises the datasets named by `cfg`. Throws data::FormatError
/// on unreadable or inconsistent data.
TrainData load_data(const RunConfig& cfg);

inline constexpr const char* kMetricsHeader =
    "epoch,elbo,recon,kl_gauss,term_zhat,term_v,term_y,train_err,test_err,n_active";

/// ELBO columns are per data point: epoch mean of (minibatch estimate / N).
struct EpochMetrics {
  int epoch = 0;
  double elbo = 0.0;
  double recon = 0.0;
  double kl_gauss = 0.0;
  double term_zhat = 0.0;
  double term_v = 0.0;
  double term_y = 0.0;
  double train_err = 0.0;
  double test_err = 0.0;  ///< NaN without a test set
  int n_active = 0;
};

std::string format_metrics_row(const EpochMetrics& m);

struct TrainResult {
  IbpDgm model;
  std::vector<EpochMetrics> metrics;
  data::LabelSplit split;
  double alpha_sup = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Split, Glorot init, then per epoch: binarize, shuffle, minibatch
/// estimate -> clip -> AdaM on -ELBO. `on_epoch` sees every metrics row.
/// Throws bbvi::NumericError when a non-finite value appears.
TrainResult train(const RunConfig& cfg, const TrainData& data, const EpochCallback& on_epoch = {});

/// train() plus the run directory: <out>/config.txt, <out>/metrics.csv,
/// <out>/model.ckpt (+ .bin).
TrainResult train_to_dir(const RunConfig& cfg, const TrainData& data, std::ostream* log = nullptr);

/// Percentage of points with predict(x) != label. Unlabeled points are skipped.
double error_rate(const IbpDgm& m, const data::Dataset& ds);

/// Dataset mean / std of q(zhat_k = 1) and the active set under tau.
ibp::ActiveComponents component_report(const IbpDgm& m, const Eigen::MatrixXd& features, double tau);
std::string format_component_report(const ibp::ActiveComponents& r, double tau);

/// Binary copy of grey-level features used for evaluation (fixed stream).
Eigen::MatrixXd eval_binarize(const Eigen::MatrixXd& features, std::uint64_t data_seed);

}  // namespace ibpdgm

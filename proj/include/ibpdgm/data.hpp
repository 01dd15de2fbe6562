#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ibpdgm/model.hpp"
#include "ibpdgm/rng.hpp"

namespace ibpdgm::data {

inline constexpr int kUnlabeled = -1;

struct Dataset {
  Eigen::MatrixXd features;  ///< D x N, one column per observation
  std::vector<int> labels;   ///< kUnlabeled or 0..C-1
  int num_classes = 1;
  LikelihoodKind kind = LikelihoodKind::bernoulli;

  Eigen::Index size() const { return features.cols(); }
  int dim() const { return static_cast<int>(features.rows()); }
  void validate() const;
  Dataset subset(const std::vector<Eigen::Index>& idx) const;
  Dataset head(Eigen::Index n) const;
};

/// Malformed input file. The message names the byte offset or line.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// IDX images (magic 0x00000803, big-endian u32 count/rows/cols, u8 pixels)
/// and labels (magic 0x00000801, u32 count, u8 labels). Pixels are scaled by
/// 1/255. `max_count` > 0 keeps the first max_count records.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t max_count = 0);

/// Writes an IDX pair; `pixels` is row-major, rows * cols bytes per image.
void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::uint8_t>& pixels, int rows, int cols,
               const std::vector<std::uint8_t>& labels);

/// Whitespace-separated rows; the last column is the integer class label.
/// `num_classes` <= 0 infers max label + 1.
Dataset load_amat(const std::string& path, int num_classes = 0,
                  LikelihoodKind kind = LikelihoodKind::bernoulli);

/// Every entry set to 1 with probability equal to its value.
Eigen::MatrixXd binarize_epoch(const Eigen::MatrixXd& features, Rng& rng);
Eigen::MatrixXd binarize_epoch(const Eigen::MatrixXd& features, std::uint64_t seed, std::uint64_t epoch);

/// Adds U(0,1) noise to every entry (Gaussian-kind preprocessing).
void add_uniform_noise(Dataset& ds, Rng& rng);

struct LabelSplit {
  std::vector<Eigen::Index> labeled;
  std::vector<Eigen::Index> unlabeled;
};

/// Per class, max(1, round(fraction * N_c)) randomly chosen indices are
/// labeled; the rest are unlabeled. Both lists are sorted.
LabelSplit stratified_label_split(const std::vector<int>& labels, int num_classes, double fraction,
                                  Rng& rng);

/// Copy of `ds` with the labels of split.unlabeled replaced by kUnlabeled.
Dataset hide_labels(const Dataset& ds, const LabelSplit& split);

struct SynthIbp {
  Dataset data;
  Eigen::MatrixXd ownership;   ///< G x N binary feature ownership
  Eigen::MatrixXd dictionary;  ///< G x D logit contributions
  Eigen::MatrixXd means;       ///< D x N Bernoulli means
};

/// Binary latent-feature data: each of G features is owned with probability
/// 1/2; pixel means are logistic(bias + ownership . dictionary + noise * xi).
/// Single class, Bernoulli kind.
SynthIbp synth_ibp_data(int N, int G, int D, double noise, Rng& rng);

/// C isotropic unit-variance Gaussian blobs in D dimensions, class means at
/// distance `separation` from each other along the diagonal (C = 2) or on
/// scaled coordinate axes (C > 2). Gaussian kind, balanced classes.
Dataset synth_blobs(int N, int D, int C, double separation, Rng& rng);

}  // namespace ibpdgm::data

#pragma once

// Run configuration: key = value text file, IBPDGM_<KEY> environment
// overrides, then command-line overrides (later sources win).

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "ibpdgm/bbvi.hpp"
#include "ibpdgm/model.hpp"

namespace ibpdgm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataSource { idx, amat, synth_ibp, synth_blobs };

DataSource parse_data_source(const std::string& s);
std::string to_string(DataSource s);

struct RunConfig {
  // data
  DataSource source = DataSource::idx;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::string train_amat;
  std::string test_amat;
  LikelihoodKind kind = LikelihoodKind::bernoulli;
  int num_classes = 0;        ///< 0 infers from the data
  std::size_t max_train = 0;  ///< 0 keeps all
  std::size_t max_test = 0;
  bool uniform_noise = false;  ///< Gaussian kind only
  int synth_n = 2000;
  int synth_test_n = 1000;
  int synth_features = 4;
  int synth_dim = 30;
  double synth_noise = 0.0;
  int synth_classes = 2;
  double synth_separation = 4.0;

  // model
  int K = 50;
  double alpha = 2.0;
  int hidden = 500;
  double sigma_theta_sq = 1e-2;

  // optimiser
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 10.0;

  // estimator
  int mc_samples = 8;
  bbvi::CvMode cv_mode = bbvi::CvMode::leave_one_out;
  double cv_eps = 1e-10;
  double labeled_fraction = 0.01;
  double alpha_sup = -1.0;  ///< < 0 means 0.1 * N / N_labeled
  UnlabeledMode unlabeled_mode = UnlabeledMode::marginalize;

  // loop
  int epochs = 30;
  int batch_size = 100;
  /// Labeled points placed in every batch, cycled through the labeled set. 0 = plain shuffling.
  int labeled_per_batch = 0;
  std::uint64_t seed = 1;
  std::uint64_t data_seed = 0;
  bool deterministic = false;
  int threads = 0;
  int chunk_size = 16;
  double tau = 0.01;
  std::string out = "run";

  /// Throws ConfigError on an unknown key or unparsable value.
  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  /// Applies every IBPDGM_<KEY> variable present in the environment.
  void apply_env();
  void validate() const;

  /// key = value listing of every field, loadable by load_file.
  std::string to_text() const;
  std::map<std::string, std::string> to_map() const;
};

}  // namespace ibpdgm

#include "ibpdgm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ibpdgm/bbvi.hpp"
#include "ibpdgm/checkpoint.hpp"

namespace ibpdgm {

namespace {

constexpr std::uint64_t kSynthTag = 0x73796e7468ULL;
constexpr std::uint64_t kSplitTag = 0x73706c6974ULL;
constexpr std::uint64_t kInitTag = 0x696e6974ULL;
constexpr std::uint64_t kShuffleTag = 0x73687566ULL;
constexpr std::uint64_t kLabeledTag = 0x6c61626cULL;
constexpr std::uint64_t kEvalTag = 0x6576616cULL;
constexpr std::uint64_t kNoiseTag = 0x6e6f6973ULL;

bool is_binary(const Eigen::MatrixXd& x) {
  return ((x.array() == 0.0) || (x.array() == 1.0)).all();
}

void split_off(const data::Dataset& all, Eigen::Index n_train, TrainData& out) {
  std::vector<Eigen::Index> tr(static_cast<std::size_t>(n_train));
  std::iota(tr.begin(), tr.end(), Eigen::Index{0});
  std::vector<Eigen::Index> te(static_cast<std::size_t>(all.size() - n_train));
  std::iota(te.begin(), te.end(), n_train);
  out.train = all.subset(tr);
  out.test = all.subset(te);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainData load_data(const RunConfig& cfg) {
  TrainData d;
  switch (cfg.source) {
    case DataSource::idx:
      d.train = data::load_idx(cfg.train_images, cfg.train_labels, cfg.max_train);
      if (!cfg.test_images.empty()) d.test = data::load_idx(cfg.test_images, cfg.test_labels, cfg.max_test);
      break;
    case DataSource::amat:
      d.train = data::load_amat(cfg.train_amat, cfg.num_classes, cfg.kind);
      if (cfg.max_train > 0) d.train = d.train.head(static_cast<Eigen::Index>(cfg.max_train));
      if (!cfg.test_amat.empty()) {
        d.test = data::load_amat(cfg.test_amat, d.train.num_classes, cfg.kind);
        if (cfg.max_test > 0) d.test = d.test.head(static_cast<Eigen::Index>(cfg.max_test));
      }
      break;
    case DataSource::synth_ibp: {
      Rng rng = derive_stream(cfg.data_seed, kSynthTag);
      auto s = data::synth_ibp_data(cfg.synth_n + cfg.synth_test_n, cfg.synth_features, cfg.synth_dim,
                                    cfg.synth_noise, rng);
      split_off(s.data, cfg.synth_n, d);
      break;
    }
    case DataSource::synth_blobs: {
      Rng rng = derive_stream(cfg.data_seed, kSynthTag);
      auto all = data::synth_blobs(cfg.synth_n + cfg.synth_test_n, cfg.synth_dim, cfg.synth_classes,
                                   cfg.synth_separation, rng);
      split_off(all, cfg.synth_n, d);
      break;
    }
  }
  if (cfg.source == DataSource::idx) {
    d.train.kind = cfg.kind;
    d.test.kind = cfg.kind;
    if (cfg.num_classes > 0) {
      d.train.num_classes = cfg.num_classes;
      d.test.num_classes = cfg.num_classes;
    }
  }
  if (d.test.size() > 0) {
    if (d.test.dim() != d.train.dim()) {
      throw data::FormatError("test data has dimension " + std::to_string(d.test.dim()) + ", training data " +
                              std::to_string(d.train.dim()));
    }
    d.test.num_classes = d.train.num_classes = std::max(d.train.num_classes, d.test.num_classes);
  } else {
    d.test.features.resize(d.train.dim(), 0);
    d.test.num_classes = d.train.num_classes;
    d.test.kind = d.train.kind;
  }
  if (cfg.uniform_noise) {
    Rng rng = derive_stream(cfg.data_seed, kNoiseTag);
    data::add_uniform_noise(d.train, rng);
    if (d.test.size() > 0) data::add_uniform_noise(d.test, rng);
  }
  try {
    d.train.validate();
    d.test.validate();
  } catch (const std::invalid_argument& e) {
    throw data::FormatError(e.what());
  }
  d.binarize = d.train.kind == LikelihoodKind::bernoulli && !is_binary(d.train.features);
  return d;
}

std::string format_metrics_row(const EpochMetrics& m) {
  std::ostringstream s;
  s << m.epoch << ',' << fmt(m.elbo) << ',' << fmt(m.recon) << ',' << fmt(m.kl_gauss) << ','
    << fmt(m.term_zhat) << ',' << fmt(m.term_v) << ',' << fmt(m.term_y) << ',' << fmt(m.train_err) << ','
    << fmt(m.test_err) << ',' << m.n_active;
  return s.str();
}

Eigen::MatrixXd eval_binarize(const Eigen::MatrixXd& features, std::uint64_t data_seed) {
  if (is_binary(features)) return features;
  Rng rng = derive_stream(data_seed, kEvalTag);
  return data::binarize_epoch(features, rng);
}

double error_rate(const IbpDgm& m, const data::Dataset& ds) {
  if (ds.size() > 0 && ds.dim() != m.D()) {
    throw std::invalid_argument("error_rate: dataset dimension " + std::to_string(ds.dim()) +
                                " does not match model input " + std::to_string(m.D()));
  }
  if (static_cast<Eigen::Index>(ds.labels.size()) != ds.size()) {
    throw std::invalid_argument("error_rate: label count differs from observation count");
  }
  const auto pred = predict_batch(m, ds.features);
  long wrong = 0;
  long counted = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (ds.labels[i] == data::kUnlabeled) continue;
    ++counted;
    if (pred[i] != ds.labels[i]) ++wrong;
  }
  if (counted == 0) return std::numeric_limits<double>::quiet_NaN();
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(counted);
}

ibp::ActiveComponents component_report(const IbpDgm& m, const Eigen::MatrixXd& features, double tau) {
  if (features.rows() != m.D()) throw std::invalid_argument("component_report: dimension mismatch");
  if (features.cols() == 0) throw std::invalid_argument("component_report: empty dataset");
  return ibp::active_components(posterior_inclusion(m, features), tau);
}

std::string format_component_report(const ibp::ActiveComponents& r, double tau) {
  std::ostringstream s;
  char line[96];
  s << "component  mean_q(zhat=1)  std\n";
  for (Eigen::Index k = 0; k < r.mean.size(); ++k) {
    const bool active = std::find(r.indices.begin(), r.indices.end(), static_cast<int>(k)) != r.indices.end();
    std::snprintf(line, sizeof line, "%9ld  %14.6f  %.6f%s\n", static_cast<long>(k), r.mean[k], r.stddev[k],
                  active ? "  *" : "");
    s << line;
  }
  s << "active (tau=" << tau << "): " << r.count << "\n";
  return s.str();
}

TrainResult train(const RunConfig& cfg, const TrainData& data, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto& train_set = data.train;
  const Eigen::Index N = train_set.size();
  if (N == 0) throw data::FormatError("training set is empty");
  const int C = train_set.num_classes;

  TrainResult res;
  {
    Rng rng = derive_stream(cfg.data_seed, kSplitTag);
    if (C == 1) {
      // A single class carries no label information; every point is labeled.
      res.split.labeled.resize(static_cast<std::size_t>(N));
      std::iota(res.split.labeled.begin(), res.split.labeled.end(), Eigen::Index{0});
    } else {
      res.split = data::stratified_label_split(train_set.labels, C, cfg.labeled_fraction, rng);
    }
  }
  const data::Dataset visible = data::hide_labels(train_set, res.split);
  res.alpha_sup = cfg.alpha_sup >= 0.0
                      ? cfg.alpha_sup
                      : 0.1 * static_cast<double>(N) / static_cast<double>(res.split.labeled.size());

  ModelConfig mc;
  mc.input_dim = train_set.dim();
  mc.K = cfg.K;
  mc.num_classes = C;
  mc.hidden = cfg.hidden;
  mc.alpha = cfg.alpha;
  mc.sigma_theta_sq = cfg.sigma_theta_sq;
  mc.kind = train_set.kind;
  {
    Rng rng = derive_stream(cfg.seed, kInitTag);
    res.model = IbpDgm::create(mc, rng);
  }
  IbpDgm& m = res.model;

  auto adam = [&](Eigen::Index n) { return nn::AdamState::for_size(n, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps); };
  nn::AdamState st_enc = adam(m.encoder.params().size());
  nn::AdamState st_cls = adam(m.classifier.params().size());
  nn::AdamState st_dec = adam(m.decoder.params().size());
  nn::AdamState st_a = adam(m.sticks.log_a.size());
  nn::AdamState st_b = adam(m.sticks.log_b.size());

  bbvi::EstimateOptions opts;
  opts.mc = {cfg.mc_samples, cfg.cv_eps, cfg.cv_mode};
  opts.mode = cfg.unlabeled_mode;
  opts.alpha_sup = res.alpha_sup;
  opts.dataset_size = static_cast<double>(N);
  opts.seed = cfg.seed;
  opts.deterministic = cfg.deterministic;
  opts.chunk_size = cfg.chunk_size;
  opts.threads = cfg.threads;

  const Eigen::MatrixXd train_eval = data.binarize ? eval_binarize(train_set.features, cfg.data_seed)
                                                   : train_set.features;
  data::Dataset test_eval = data.test;
  if (data.binarize && test_eval.size() > 0) {
    test_eval.features = eval_binarize(test_eval.features, cfg.data_seed + 1);
  }

  const Eigen::Index B = std::min<Eigen::Index>(cfg.batch_size, N);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
  std::vector<Eigen::Index> labeled;
  std::vector<Eigen::Index> unlabeled;
  for (Eigen::Index i = 0; i < N; ++i) {
    (visible.labels[static_cast<std::size_t>(i)] >= 0 ? labeled : unlabeled).push_back(i);
  }
  const Eigen::Index L = std::min<Eigen::Index>(cfg.labeled_per_batch, static_cast<Eigen::Index>(labeled.size()));
  const bool mixed = L > 0 && !unlabeled.empty() && L < B;
  Eigen::Index cursor = static_cast<Eigen::Index>(labeled.size());
  std::uint64_t pass = 0;
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const Eigen::MatrixXd features =
        data.binarize ? data::binarize_epoch(train_set.features, cfg.seed, static_cast<std::uint64_t>(epoch))
                      : train_set.features;
    EpochMetrics em;
    em.epoch = epoch;
    int batches = 0;
    auto run_batch = [&](const std::vector<Eigen::Index>& idx, std::vector<double> weights) {
      const auto nb = static_cast<Eigen::Index>(idx.size());
      bbvi::Batch batch;
      batch.features.resize(train_set.dim(), nb);
      batch.labels.resize(idx.size());
      batch.ids.resize(idx.size());
      for (Eigen::Index j = 0; j < nb; ++j) {
        const Eigen::Index i = idx[static_cast<std::size_t>(j)];
        batch.features.col(j) = features.col(i);
        batch.labels[static_cast<std::size_t>(j)] = visible.labels[static_cast<std::size_t>(i)];
        batch.ids[static_cast<std::size_t>(j)] = static_cast<std::uint64_t>(i);
      }
      batch.weights = std::move(weights);
      opts.step = step++;
      auto e = bbvi::estimate_elbo_and_grads(m, batch, opts);
      const double inv_n = 1.0 / static_cast<double>(N);
      em.elbo += e.total * inv_n;
      em.recon += e.recon * inv_n;
      em.kl_gauss += e.kl_gauss * inv_n;
      em.term_zhat += e.term_zhat * inv_n;
      em.term_v += e.term_v * inv_n;
      em.term_y += e.term_y * inv_n;
      ++batches;

      auto& g = e.grads;
      g.scale(-1.0);
      Eigen::VectorXd* blocks[] = {&g.encoder, &g.classifier, &g.decoder, &g.log_a, &g.log_b};
      nn::clip_global_norm(blocks, cfg.clip_norm);
      nn::adam_step(m.encoder.params(), g.encoder, st_enc);
      nn::adam_step(m.classifier.params(), g.classifier, st_cls);
      nn::adam_step(m.decoder.params(), g.decoder, st_dec);
      nn::adam_step(m.sticks.log_a, g.log_a, st_a);
      nn::adam_step(m.sticks.log_b, g.log_b, st_b);
      if (!m.encoder.params().allFinite() || !m.classifier.params().allFinite() ||
          !m.decoder.params().allFinite() || !m.sticks.log_a.allFinite() || !m.sticks.log_b.allFinite()) {
        throw bbvi::NumericError("parameters", "non-finite parameters after update at step " + std::to_string(step));
      }
    };

    if (mixed) {
      std::vector<Eigen::Index> u = unlabeled;
      {
        Rng rng = derive_stream(cfg.seed, kShuffleTag, static_cast<std::uint64_t>(epoch));
        std::shuffle(u.begin(), u.end(), rng);
      }
      const auto Nu = static_cast<Eigen::Index>(u.size());
      const auto Nl = static_cast<Eigen::Index>(labeled.size());
      const Eigen::Index Bu = B - L;
      for (Eigen::Index start = 0; start < Nu; start += Bu) {
        const Eigen::Index nu = std::min(Bu, Nu - start);
        std::vector<Eigen::Index> idx(u.begin() + start, u.begin() + start + nu);
        std::vector<double> w(static_cast<std::size_t>(nu), static_cast<double>(Nu) / static_cast<double>(nu));
        for (Eigen::Index j = 0; j < L; ++j) {
          if (cursor == Nl) {
            Rng rng = derive_stream(cfg.seed, kLabeledTag, pass++);
            std::shuffle(labeled.begin(), labeled.end(), rng);
            cursor = 0;
          }
          idx.push_back(labeled[static_cast<std::size_t>(cursor++)]);
          w.push_back(static_cast<double>(Nl) / static_cast<double>(L));
        }
        run_batch(idx, std::move(w));
      }
    } else {
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      {
        Rng rng = derive_stream(cfg.seed, kShuffleTag, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
      }
      for (Eigen::Index start = 0; start < N; start += B) {
        const Eigen::Index nb = std::min(B, N - start);
        run_batch(std::vector<Eigen::Index>(order.begin() + start, order.begin() + start + nb), {});
      }
    }
    const double nbatches = static_cast<double>(batches);
    em.elbo /= nbatches;
    em.recon /= nbatches;
    em.kl_gauss /= nbatches;
    em.term_zhat /= nbatches;
    em.term_v /= nbatches;
    em.term_y /= nbatches;
    data::Dataset tr_eval{train_eval, train_set.labels, C, train_set.kind};
    em.train_err = error_rate(m, tr_eval);
    em.test_err = test_eval.size() > 0 ? error_rate(m, test_eval) : std::numeric_limits<double>::quiet_NaN();
    em.n_active = component_report(m, train_eval, cfg.tau).count;
    res.metrics.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  return res;
}

TrainResult train_to_dir(const RunConfig& cfg, const TrainData& data, std::ostream* log) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  {
    std::ofstream c(dir / "config.txt");
    c << cfg.to_text();
  }
  std::ofstream metrics(dir / "metrics.csv");
  if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
  metrics << kMetricsHeader << "\n";
  if (log) *log << kMetricsHeader << "\n";
  auto res = train(cfg, data, [&](const EpochMetrics& em) {
    const auto row = format_metrics_row(em);
    metrics << row << "\n" << std::flush;
    if (log) *log << row << "\n" << std::flush;
  });
  save_checkpoint((dir / "model.ckpt").string(), res.model);
  return res;
}

}  // namespace ibpdgm

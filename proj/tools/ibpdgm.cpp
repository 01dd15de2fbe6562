// ibpdgm: train / eval / report / selftest / gen.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ibpdgm/bbvi.hpp"
#include "ibpdgm/checkpoint.hpp"
#include "ibpdgm/config.hpp"
#include "ibpdgm/data.hpp"
#include "ibpdgm/selftest.hpp"
#include "ibpdgm/train.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
  std::vector<std::string> overrides;
};

ibpdgm::RunConfig build_config(const Globals& g) {
  ibpdgm::RunConfig cfg;
  if (!g.config_path.empty()) cfg.load_file(g.config_path);
  cfg.apply_env();
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ibpdgm::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.deterministic) cfg.deterministic = true;
  if (!g.out.empty()) cfg.out = g.out;
  return cfg;
}

std::string checkpoint_path(const ibpdgm::RunConfig& cfg, const std::string& given) {
  return given.empty() ? (std::filesystem::path(cfg.out) / "model.ckpt").string() : given;
}

const ibpdgm::data::Dataset& pick_split(const ibpdgm::TrainData& d, const std::string& split) {
  if (split == "train") return d.train;
  if (d.test.size() == 0) throw ibpdgm::data::FormatError("configuration has no test set");
  return d.test;
}

int cmd_train(const Globals& g) {
  auto cfg = build_config(g);
  cfg.validate();
  std::cerr << cfg.to_text();
  const auto data = ibpdgm::load_data(cfg);
  auto res = ibpdgm::train_to_dir(cfg, data, &std::cout);
  std::cerr << "labeled " << res.split.labeled.size() << " of " << data.train.size() << ", alpha_sup "
            << res.alpha_sup << "\n"
            << "wrote " << (std::filesystem::path(cfg.out) / "model.ckpt").string() << "\n";
  return kOk;
}

int cmd_eval(const Globals& g, const std::string& ckpt, const std::string& split) {
  auto cfg = build_config(g);
  cfg.validate();
  const auto model = ibpdgm::load_checkpoint(checkpoint_path(cfg, ckpt));
  const auto data = ibpdgm::load_data(cfg);
  ibpdgm::data::Dataset ds = pick_split(data, split);
  if (data.binarize) ds.features = ibpdgm::eval_binarize(ds.features, cfg.data_seed + (split == "train" ? 0 : 1));
  const double err = ibpdgm::error_rate(model, ds);
  std::printf("error_rate %.4f\n", err);
  return kOk;
}

int cmd_report(const Globals& g, const std::string& ckpt, const std::string& split, std::optional<double> tau,
               const std::string& json_path) {
  auto cfg = build_config(g);
  cfg.validate();
  if (tau) cfg.tau = *tau;
  const auto model = ibpdgm::load_checkpoint(checkpoint_path(cfg, ckpt));
  const auto data = ibpdgm::load_data(cfg);
  const auto& ds = pick_split(data, split);
  const Eigen::MatrixXd x =
      data.binarize ? ibpdgm::eval_binarize(ds.features, cfg.data_seed + (split == "train" ? 0 : 1)) : ds.features;
  const auto r = ibpdgm::component_report(model, x, cfg.tau);
  std::cout << ibpdgm::format_component_report(r, cfg.tau);
  if (!json_path.empty()) {
    nlohmann::json j;
    j["tau"] = cfg.tau;
    j["K"] = model.K();
    j["count"] = r.count;
    j["active"] = r.indices;
    j["mean"] = std::vector<double>(r.mean.data(), r.mean.data() + r.mean.size());
    j["std"] = std::vector<double>(r.stddev.data(), r.stddev.data() + r.stddev.size());
    if (json_path == "-") {
      std::cout << j.dump(2) << "\n";
    } else {
      std::ofstream f(json_path);
      f << j.dump(2) << "\n";
      if (!f) throw std::runtime_error("cannot write " + json_path);
    }
  }
  return kOk;
}

int cmd_selftest(const Globals& g, bool flip_beta) {
  ibpdgm::selftest::Options opts;
  if (g.seed) opts.seed = *g.seed;
  opts.flip_beta_score = flip_beta;
  const auto results = ibpdgm::selftest::run_all(opts);
  std::cout << ibpdgm::selftest::format(results);
  return ibpdgm::selftest::all_pass(results) ? kOk : kNumeric;
}

int cmd_gen(const Globals& g, const std::string& ckpt, int n, std::optional<int> cls, bool samples) {
  auto cfg = build_config(g);
  const auto model = ibpdgm::load_checkpoint(checkpoint_path(cfg, ckpt));
  ibpdgm::Rng rng = ibpdgm::derive_stream(cfg.seed, 0x67656eULL);
  const auto gen = ibpdgm::generate(model, n, rng, cls);
  const Eigen::MatrixXd& m = samples ? gen.samples : gen.means;
  std::filesystem::create_directories(cfg.out);
  const auto path = std::filesystem::path(cfg.out) / "generated.csv";
  std::ofstream f(path);
  for (Eigen::Index i = 0; i < m.cols(); ++i) {
    f << gen.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index d = 0; d < m.rows(); ++d) f << ',' << m(d, i);
    f << '\n';
  }
  if (!f) throw std::runtime_error("cannot write " + path.string());
  std::cerr << "wrote " << n << " rows to " << path.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IBP deep generative model: semi-supervised training with black-box variational inference"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "key = value configuration file");
  app.add_option("--seed", g.seed, "random seed");
  app.add_flag("--deterministic", g.deterministic, "fixed-order reductions (bit-reproducible)");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--set", g.overrides, "override a configuration key (key=value), repeatable");

  auto* train = app.add_subcommand("train", "train a model; writes config.txt, metrics.csv and model.ckpt");

  std::string ckpt;
  std::string split = "test";
  auto* eval = app.add_subcommand("eval", "test error (%) of a checkpoint");
  eval->add_option("--checkpoint", ckpt, "checkpoint manifest (default <out>/model.ckpt)");
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  std::optional<double> tau;
  std::string json_path;
  std::string report_split = "train";
  auto* report = app.add_subcommand("report", "per-component posterior inclusion and active set");
  report->add_option("--checkpoint", ckpt, "checkpoint manifest (default <out>/model.ckpt)");
  report->add_option("--tau", tau, "activity threshold");
  report->add_option("--split", report_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  report->add_option("--json", json_path, "also write JSON here ('-' for stdout)");

  bool flip_beta = false;
  auto* selftest = app.add_subcommand("selftest", "numerical self-checks");
  selftest->add_flag("--mutate-beta-score", flip_beta, "negate the Beta score gradient (negative control)")
      ->group("");

  int n = 16;
  std::optional<int> cls;
  bool samples = false;
  auto* gen = app.add_subcommand("gen", "ancestral samples from a checkpoint to <out>/generated.csv");
  gen->add_option("--checkpoint", ckpt, "checkpoint manifest (default <out>/model.ckpt)");
  gen->add_option("-n,--count", n, "number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--class", cls, "condition on this class");
  gen->add_flag("--samples", samples, "write sampled observations instead of likelihood means");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(g);
    if (*eval) return cmd_eval(g, ckpt, split);
    if (*report) return cmd_report(g, ckpt, report_split, tau, json_path);
    if (*selftest) return cmd_selftest(g, flip_beta);
    if (*gen) return cmd_gen(g, ckpt, n, cls, samples);
  } catch (const ibpdgm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ibpdgm::data::FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ibpdgm::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const ibpdgm::bbvi::NumericError& e) {
    std::cerr << "numeric failure in term '" << e.term() << "': " << e.what() << "\n";
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

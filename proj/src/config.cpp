#include "ibpdgm/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace ibpdgm {

DataSource parse_data_source(const std::string& s) {
  if (s == "idx") return DataSource::idx;
  if (s == "amat") return DataSource::amat;
  if (s == "synth_ibp") return DataSource::synth_ibp;
  if (s == "synth_blobs") return DataSource::synth_blobs;
  throw std::invalid_argument("unknown data source '" + s + "'");
}

std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::idx: return "idx";
    case DataSource::amat: return "amat";
    case DataSource::synth_ibp: return "synth_ibp";
    case DataSource::synth_blobs: return "synth_blobs";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  auto b = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto e = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
  return b < e ? std::string(b, e) : std::string();
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("bad value '" + v + "' for key '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("bad boolean '" + v + "' for key '" + key + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct Field {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field num(const char* name, T RunConfig::*member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(name, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

Field str(const char* name, std::string RunConfig::*member) {
  return {name, [member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

Field flag(const char* name, bool RunConfig::*member) {
  return {name, [name, member](RunConfig& c, const std::string& v) { c.*member = parse_bool(name, v); },
          [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

template <class E>
Field enumeration(const char* name, E RunConfig::*member, E (*parse)(const std::string&),
                  std::string (*show)(E)) {
  return {name,
          [name, member, parse](RunConfig& c, const std::string& v) {
            try {
              c.*member = parse(v);
            } catch (const std::invalid_argument& e) {
              throw ConfigError(std::string(e.what()) + " (key '" + name + "')");
            }
          },
          [member, show](const RunConfig& c) { return show(c.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      enumeration("source", &RunConfig::source, parse_data_source, to_string),
      str("train_images", &RunConfig::train_images),
      str("train_labels", &RunConfig::train_labels),
      str("test_images", &RunConfig::test_images),
      str("test_labels", &RunConfig::test_labels),
      str("train_amat", &RunConfig::train_amat),
      str("test_amat", &RunConfig::test_amat),
      enumeration("kind", &RunConfig::kind, parse_likelihood_kind, to_string),
      num("num_classes", &RunConfig::num_classes),
      num("max_train", &RunConfig::max_train),
      num("max_test", &RunConfig::max_test),
      flag("uniform_noise", &RunConfig::uniform_noise),
      num("synth_n", &RunConfig::synth_n),
      num("synth_test_n", &RunConfig::synth_test_n),
      num("synth_features", &RunConfig::synth_features),
      num("synth_dim", &RunConfig::synth_dim),
      num("synth_noise", &RunConfig::synth_noise),
      num("synth_classes", &RunConfig::synth_classes),
      num("synth_separation", &RunConfig::synth_separation),
      num("K", &RunConfig::K),
      num("alpha", &RunConfig::alpha),
      num("hidden", &RunConfig::hidden),
      num("sigma_theta_sq", &RunConfig::sigma_theta_sq),
      num("lr", &RunConfig::lr),
      num("beta1", &RunConfig::beta1),
      num("beta2", &RunConfig::beta2),
      num("adam_eps", &RunConfig::adam_eps),
      num("clip_norm", &RunConfig::clip_norm),
      num("mc_samples", &RunConfig::mc_samples),
      enumeration("cv_mode", &RunConfig::cv_mode, bbvi::parse_cv_mode, bbvi::to_string),
      num("cv_eps", &RunConfig::cv_eps),
      num("labeled_fraction", &RunConfig::labeled_fraction),
      num("alpha_sup", &RunConfig::alpha_sup),
      enumeration("unlabeled_mode", &RunConfig::unlabeled_mode, parse_unlabeled_mode, to_string),
      num("epochs", &RunConfig::epochs),
      num("batch_size", &RunConfig::batch_size),
      num("labeled_per_batch", &RunConfig::labeled_per_batch),
      num("seed", &RunConfig::seed),
      num("data_seed", &RunConfig::data_seed),
      flag("deterministic", &RunConfig::deterministic),
      num("threads", &RunConfig::threads),
      num("chunk_size", &RunConfig::chunk_size),
      num("tau", &RunConfig::tau),
      str("out", &RunConfig::out),
  };
  return f;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string k = trim(key);
  for (const auto& f : fields()) {
    if (k == f.name) {
      f.set(*this, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + k + "'");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::apply_env() {
  for (const auto& f : fields()) {
    std::string var = "IBPDGM_";
    for (const char* p = f.name; *p; ++p) var += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
    if (const char* v = std::getenv(var.c_str())) {
      try {
        f.set(*this, trim(v));
      } catch (const ConfigError& e) {
        throw ConfigError(var + ": " + e.what());
      }
    }
  }
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(K >= 1, "K must be >= 1");
  require(alpha > 0.0, "alpha must be > 0");
  require(hidden >= 0, "hidden must be >= 0");
  require(sigma_theta_sq > 0.0, "sigma_theta_sq must be > 0");
  require(lr > 0.0, "lr must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0,1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0,1)");
  require(adam_eps > 0.0, "adam_eps must be > 0");
  require(clip_norm > 0.0, "clip_norm must be > 0");
  require(cv_eps > 0.0, "cv_eps must be > 0");
  try {
    bbvi::McConfig{mc_samples, cv_eps, cv_mode}.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(labeled_fraction > 0.0 && labeled_fraction < 1.0, "labeled_fraction must lie in (0,1)");
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(labeled_per_batch >= 0 && labeled_per_batch < batch_size,
          "labeled_per_batch must lie in [0, batch_size)");
  require(threads >= 0, "threads must be >= 0");
  require(chunk_size >= 1, "chunk_size must be >= 1");
  require(tau >= 0.0, "tau must be >= 0");
  require(num_classes >= 0, "num_classes must be >= 0");
  require(!out.empty(), "out must not be empty");
  switch (source) {
    case DataSource::idx:
      require(!train_images.empty() && !train_labels.empty(), "idx source needs train_images and train_labels");
      require(test_images.empty() == test_labels.empty(), "test_images and test_labels go together");
      break;
    case DataSource::amat:
      require(!train_amat.empty(), "amat source needs train_amat");
      break;
    case DataSource::synth_ibp:
      require(synth_n >= 1 && synth_test_n >= 0, "synth_n must be >= 1");
      require(synth_features >= 1 && synth_features <= synth_dim, "need 1 <= synth_features <= synth_dim");
      require(synth_noise >= 0.0, "synth_noise must be >= 0");
      break;
    case DataSource::synth_blobs:
      require(synth_n >= 1 && synth_test_n >= 0, "synth_n must be >= 1");
      require(synth_classes >= 2 && synth_dim >= 1, "synth_blobs needs synth_classes >= 2");
      break;
  }
  require(!uniform_noise || kind == LikelihoodKind::gaussian, "uniform_noise requires kind = gaussian");
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  for (const auto& f : fields()) m[f.name] = f.get(*this);
  return m;
}

std::string RunConfig::to_text() const {
  std::ostringstream s;
  for (const auto& f : fields()) s << f.name << " = " << f.get(*this) << "\n";
  return s.str();
}

}  // namespace ibpdgm

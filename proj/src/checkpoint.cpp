#include "ibpdgm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace ibpdgm {

namespace {

struct Tensor {
  std::string name;
  std::vector<Eigen::Index> shape;
  double* data;
  Eigen::Index size() const {
    Eigen::Index n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

void add_net(std::vector<Tensor>& out, const std::string& prefix, nn::DenseNet& net) {
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& ls = net.layers()[l];
    const std::string base = prefix + "." + std::to_string(l);
    out.push_back({base + ".weight", {ls.out, ls.in}, net.params().data() + ls.weight_offset});
    out.push_back({base + ".bias", {ls.out}, net.params().data() + ls.bias_offset});
  }
}

std::vector<Tensor> tensors(IbpDgm& m) {
  std::vector<Tensor> t;
  add_net(t, "encoder", m.encoder);
  add_net(t, "classifier", m.classifier);
  add_net(t, "decoder", m.decoder);
  t.push_back({"sticks.log_a", {m.sticks.K}, m.sticks.log_a.data()});
  t.push_back({"sticks.log_b", {m.sticks.K}, m.sticks.log_b.data()});
  return t;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const IbpDgm& model) {
  model.validate();
  IbpDgm m = model;
  const auto ts = tensors(m);
  const std::string blob = path + ".bin";
  std::ofstream man(path);
  if (!man) throw CheckpointError("cannot write '" + path + "'");
  const auto& c = m.config;
  man << "format " << kCheckpointFormat << "\n"
      << "blob " << std::filesystem::path(blob).filename().string() << "\n"
      << "input_dim " << c.input_dim << "\n"
      << "K " << c.K << "\n"
      << "num_classes " << c.num_classes << "\n"
      << "hidden " << c.hidden << "\n"
      << "alpha " << fmt(c.alpha) << "\n"
      << "sigma_theta_sq " << fmt(c.sigma_theta_sq) << "\n"
      << "kind " << to_string(c.kind) << "\n";
  std::ofstream bin(blob, std::ios::binary);
  if (!bin) throw CheckpointError("cannot write '" + blob + "'");
  for (const auto& t : ts) {
    man << "tensor " << t.name;
    for (auto s : t.shape) man << " " << s;
    man << "\n";
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(t.data[i]));
      bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  man << "end\n";
  if (!man || !bin) throw CheckpointError("write failed for '" + path + "'");
}

IbpDgm load_checkpoint(const std::string& path) {
  std::ifstream man(path);
  if (!man) throw CheckpointError("cannot open '" + path + "'");
  ModelConfig cfg;
  std::string blob_name;
  std::vector<std::pair<std::string, std::vector<Eigen::Index>>> listed;
  std::string line;
  int lineno = 0;
  bool saw_format = false;
  bool saw_end = false;
  while (std::getline(man, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto fail = [&](const std::string& why) {
      return CheckpointError(path + ":" + std::to_string(lineno) + ": " + why);
    };
    if (key == "format") {
      std::string v;
      ls >> v;
      if (v != kCheckpointFormat) throw fail("unsupported format '" + v + "'");
      saw_format = true;
    } else if (key == "blob") {
      ls >> blob_name;
    } else if (key == "input_dim") {
      ls >> cfg.input_dim;
    } else if (key == "K") {
      ls >> cfg.K;
    } else if (key == "num_classes") {
      ls >> cfg.num_classes;
    } else if (key == "hidden") {
      ls >> cfg.hidden;
    } else if (key == "alpha") {
      ls >> cfg.alpha;
    } else if (key == "sigma_theta_sq") {
      ls >> cfg.sigma_theta_sq;
    } else if (key == "kind") {
      std::string v;
      ls >> v;
      try {
        cfg.kind = parse_likelihood_kind(v);
      } catch (const std::invalid_argument& e) {
        throw fail(e.what());
      }
    } else if (key == "tensor") {
      std::string name;
      ls >> name;
      std::vector<Eigen::Index> shape;
      Eigen::Index s = 0;
      while (ls >> s) shape.push_back(s);
      listed.emplace_back(name, shape);
    } else if (key == "end") {
      saw_end = true;
      break;
    } else {
      throw fail("unknown field '" + key + "'");
    }
    if (ls.fail() && !ls.eof()) throw fail("malformed value");
  }
  if (!saw_format) throw CheckpointError(path + ": missing format line");
  if (!saw_end) throw CheckpointError(path + ": truncated manifest");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path + ": " + e.what());
  }

  IbpDgm m = IbpDgm::zeros(cfg);
  auto ts = tensors(m);
  if (ts.size() != listed.size()) throw CheckpointError(path + ": tensor list does not match the configuration");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i].name != listed[i].first || ts[i].shape != listed[i].second) {
      throw CheckpointError(path + ": tensor '" + listed[i].first + "' does not match expected '" + ts[i].name + "'");
    }
  }
  if (blob_name.empty()) blob_name = std::filesystem::path(path).filename().string() + ".bin";
  const auto blob = std::filesystem::path(path).parent_path() / blob_name;
  std::ifstream bin(blob, std::ios::binary);
  if (!bin) throw CheckpointError("cannot open '" + blob.string() + "'");
  for (auto& t : ts) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      std::uint64_t bits = 0;
      if (!bin.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
        throw CheckpointError(blob.string() + ": truncated while reading '" + t.name + "'");
      }
      t.data[i] = std::bit_cast<double>(to_le(bits));
    }
  }
  if (bin.peek() != std::char_traits<char>::eof()) throw CheckpointError(blob.string() + ": trailing bytes");
  m.validate();
  return m;
}

}  // namespace ibpdgm

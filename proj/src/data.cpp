#include "ibpdgm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ibpdgm/numerics.hpp"

namespace ibpdgm::data {

void Dataset::validate() const {
  if (static_cast<Eigen::Index>(labels.size()) != features.cols()) {
    throw std::invalid_argument("Dataset: label count differs from observation count");
  }
  if (num_classes < 1) throw std::invalid_argument("Dataset: num_classes must be >= 1");
  for (int y : labels) {
    if (y != kUnlabeled && (y < 0 || y >= num_classes)) throw std::invalid_argument("Dataset: label out of range");
  }
  if (!features.allFinite()) throw std::invalid_argument("Dataset: non-finite feature");
  if (kind == LikelihoodKind::bernoulli && ((features.array() < 0.0).any() || (features.array() > 1.0).any())) {
    throw std::invalid_argument("Dataset: Bernoulli-kind features must lie in [0,1]");
  }
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& idx) const {
  Dataset d;
  d.num_classes = num_classes;
  d.kind = kind;
  d.features.resize(features.rows(), static_cast<Eigen::Index>(idx.size()));
  d.labels.resize(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    d.features.col(static_cast<Eigen::Index>(j)) = features.col(idx[j]);
    d.labels[j] = labels[static_cast<std::size_t>(idx[j])];
  }
  return d;
}

Dataset Dataset::head(Eigen::Index n) const {
  n = std::min(n, size());
  Dataset d;
  d.num_classes = num_classes;
  d.kind = kind;
  d.features = features.leftCols(n);
  d.labels.assign(labels.begin(), labels.begin() + n);
  return d;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) {
    throw FormatError(path + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>((v >> 24) & 0xff), static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
  out.write(b, 4);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream s;
  s << "0x" << std::hex;
  s.width(8);
  s.fill('0');
  s << v;
  return s.str();
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t max_count) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != 0x00000803u) {
    throw FormatError(images_path + ": bad magic " + hex32(img_magic) + " at offset 0 (expected 0x00000803)");
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801u) {
    throw FormatError(labels_path + ": bad magic " + hex32(lab_magic) + " at offset 0 (expected 0x00000801)");
  }
  const std::size_t n_img = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t n_lab = read_be32(lab, 4, labels_path);
  if (n_img != n_lab) {
    throw FormatError(images_path + ": image count " + std::to_string(n_img) + " (offset 4) differs from label count " +
                      std::to_string(n_lab));
  }
  const std::size_t D = rows * cols;
  if (D == 0) throw FormatError(images_path + ": zero-sized images (offset 8)");
  if (img.size() < 16 + n_img * D) {
    throw FormatError(images_path + ": truncated pixel data at offset " + std::to_string(img.size()) + ", expected " +
                      std::to_string(16 + n_img * D) + " bytes");
  }
  if (lab.size() < 8 + n_lab) {
    throw FormatError(labels_path + ": truncated label data at offset " + std::to_string(lab.size()));
  }
  const std::size_t n = max_count > 0 ? std::min(max_count, n_img) : n_img;
  Dataset ds;
  ds.kind = LikelihoodKind::bernoulli;
  ds.features.resize(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(n));
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = img.data() + 16 + i * D;
    for (std::size_t d = 0; d < D; ++d) {
      ds.features(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(i)) = p[d] / 255.0;
    }
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max(10, max_label + 1);
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::uint8_t>& pixels, int rows, int cols,
               const std::vector<std::uint8_t>& labels) {
  const std::size_t D = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  if (D == 0 || pixels.size() != D * labels.size()) {
    throw std::invalid_argument("write_idx: pixel buffer does not match rows * cols * count");
  }
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw std::runtime_error("write_idx: cannot open output files");
  put_be32(img, 0x00000803u);
  put_be32(img, static_cast<std::uint32_t>(labels.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  put_be32(lab, 0x00000801u);
  put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset load_amat(const std::string& path, int num_classes, LikelihoodKind kind) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t arity = 0;
  std::vector<std::size_t> line_of;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw FormatError(path + ":" + std::to_string(lineno) + ": non-numeric token '" + tok + "'");
      row.push_back(v);
    }
    if (row.empty()) continue;
    if (arity == 0) {
      if (row.size() < 2) throw FormatError(path + ":" + std::to_string(lineno) + ": need at least one feature and a label");
      arity = row.size();
    } else if (row.size() != arity) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(arity) + " columns, got " +
                        std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
    line_of.push_back(lineno);
  }
  if (rows.empty()) throw FormatError(path + ": no data rows");
  Dataset ds;
  ds.kind = kind;
  const auto D = static_cast<Eigen::Index>(arity - 1);
  ds.features.resize(D, static_cast<Eigen::Index>(rows.size()));
  ds.labels.resize(rows.size());
  int max_label = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index d = 0; d < D; ++d) ds.features(d, static_cast<Eigen::Index>(i)) = rows[i][static_cast<std::size_t>(d)];
    const double lab = rows[i].back();
    if (lab < 0.0 || lab != std::floor(lab)) {
      throw FormatError(path + ":" + std::to_string(line_of[i]) + ": label must be a non-negative integer");
    }
    ds.labels[i] = static_cast<int>(lab);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  ds.validate();
  return ds;
}

Eigen::MatrixXd binarize_epoch(const Eigen::MatrixXd& features, Rng& rng) {
  if ((features.array() < 0.0).any() || (features.array() > 1.0).any()) {
    throw std::invalid_argument("binarize_epoch: features must lie in [0,1]");
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd out(features.rows(), features.cols());
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
      out(i, j) = unif(rng) < features(i, j) ? 1.0 : 0.0;
    }
  }
  return out;
}

Eigen::MatrixXd binarize_epoch(const Eigen::MatrixXd& features, std::uint64_t seed, std::uint64_t epoch) {
  Rng rng = derive_stream(seed, 0x62696e6172697a65ULL, epoch);
  return binarize_epoch(features, rng);
}

void add_uniform_noise(Dataset& ds, Rng& rng) {
  if (ds.kind != LikelihoodKind::gaussian) throw std::invalid_argument("add_uniform_noise: Gaussian-kind datasets only");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
    for (Eigen::Index i = 0; i < ds.features.rows(); ++i) ds.features(i, j) += unif(rng);
  }
}

LabelSplit stratified_label_split(const std::vector<int>& labels, int num_classes, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("stratified_label_split: fraction must lie in (0,1)");
  if (num_classes < 1) throw std::invalid_argument("stratified_label_split: num_classes must be >= 1");
  std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw std::invalid_argument("stratified_label_split: label out of range");
    by_class[static_cast<std::size_t>(y)].push_back(static_cast<Eigen::Index>(i));
  }
  LabelSplit split;
  for (int c = 0; c < num_classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (idx.empty()) throw std::invalid_argument("stratified_label_split: class " + std::to_string(c) + " is missing");
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    const std::size_t n_lab = std::clamp<std::size_t>(want, 1, idx.size());
    split.labeled.insert(split.labeled.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_lab));
    split.unlabeled.insert(split.unlabeled.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_lab), idx.end());
  }
  std::sort(split.labeled.begin(), split.labeled.end());
  std::sort(split.unlabeled.begin(), split.unlabeled.end());
  return split;
}

Dataset hide_labels(const Dataset& ds, const LabelSplit& split) {
  Dataset out = ds;
  for (auto i : split.unlabeled) out.labels[static_cast<std::size_t>(i)] = kUnlabeled;
  return out;
}

SynthIbp synth_ibp_data(int N, int G, int D, double noise, Rng& rng) {
  if (N < 1 || G < 1 || D < 1) throw std::invalid_argument("synth_ibp_data: sizes must be >= 1");
  if (G > D) throw std::invalid_argument("synth_ibp_data: G must not exceed D");
  if (noise < 0.0) throw std::invalid_argument("synth_ibp_data: noise must be non-negative");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double kBias = -2.5;
  constexpr double kStrength = 5.0;

  SynthIbp s;
  // Each feature switches on a random third of the pixels; feature g always
  // owns pixel g so no two features coincide.
  s.dictionary = Eigen::MatrixXd::Zero(G, D);
  for (int g = 0; g < G; ++g) {
    for (int d = 0; d < D; ++d) {
      if (d == g || (d >= G && unif(rng) < 1.0 / 3.0)) s.dictionary(g, d) = kStrength;
    }
  }
  s.ownership.resize(G, N);
  s.means.resize(D, N);
  s.data.kind = LikelihoodKind::bernoulli;
  s.data.num_classes = 1;
  s.data.features.resize(D, N);
  s.data.labels.assign(static_cast<std::size_t>(N), 0);
  for (int i = 0; i < N; ++i) {
    for (int g = 0; g < G; ++g) s.ownership(g, i) = unif(rng) < 0.5 ? 1.0 : 0.0;
    for (int d = 0; d < D; ++d) {
      double logit = kBias + s.ownership.col(i).dot(s.dictionary.col(d));
      if (noise > 0.0) logit += noise * normal(rng);
      s.means(d, i) = sigmoid(logit);
      s.data.features(d, i) = unif(rng) < s.means(d, i) ? 1.0 : 0.0;
    }
  }
  return s;
}

Dataset synth_blobs(int N, int D, int C, double separation, Rng& rng) {
  if (N < 1 || D < 1 || C < 2) throw std::invalid_argument("synth_blobs: need N, D >= 1 and C >= 2");
  if (C > 2 && C > D) throw std::invalid_argument("synth_blobs: more classes than dimensions");
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(D, C);
  if (C == 2) {
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(D, 1.0 / std::sqrt(static_cast<double>(D)));
    means.col(0) = -0.5 * separation * u;
    means.col(1) = 0.5 * separation * u;
  } else {
    for (int c = 0; c < C; ++c) means(c, c) = separation / std::sqrt(2.0);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.kind = LikelihoodKind::gaussian;
  ds.num_classes = C;
  ds.features.resize(D, N);
  ds.labels.resize(static_cast<std::size_t>(N));
  std::vector<int> order(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i % C;
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < N; ++i) {
    const int c = order[static_cast<std::size_t>(i)];
    ds.labels[static_cast<std::size_t>(i)] = c;
    for (int d = 0; d < D; ++d) ds.features(d, i) = means(d, c) + normal(rng);
  }
  return ds;
}

}  // namespace ibpdgm::data

#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ibpdgm/data.hpp"
#include "test_util.hpp"

using namespace ibpdgm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const data::FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("idx fixture round trip") {
  const auto dir = testutil::scratch("idx");
  const std::vector<std::uint8_t> px = {0, 255, 128, 1, 2, 3, 4, 5, 6, 9, 8, 7, 6, 5, 4, 3, 2, 255};
  const std::vector<std::uint8_t> lab = {7, 2};
  data::write_idx((dir / "img").string(), (dir / "lab").string(), px, 3, 3, lab);
  const auto ds = data::load_idx((dir / "img").string(), (dir / "lab").string());
  CHECK(ds.size() == 2);
  CHECK(ds.dim() == 9);
  CHECK(ds.labels == std::vector<int>{7, 2});
  CHECK(ds.features(1, 0) == 1.0);
  for (int i = 0; i < 2; ++i) {
    for (int d = 0; d < 9; ++d) CHECK(ds.features(d, i) == px[static_cast<std::size_t>(i * 9 + d)] / 255.0);
  }
  CHECK(data::load_idx((dir / "img").string(), (dir / "lab").string(), 1).size() == 1);
}

TEST_CASE("idx errors name the offset") {
  const auto dir = testutil::scratch("idx_bad");
  const std::vector<std::uint8_t> px(18, 3);
  data::write_idx((dir / "img").string(), (dir / "lab").string(), px, 3, 3, {1, 2});
  // Swap the files: the label file has the wrong magic for images.
  const auto swapped = message_of([&] { data::load_idx((dir / "lab").string(), (dir / "img").string()); });
  CHECK(swapped.find("magic") != std::string::npos);
  CHECK(swapped.find("offset 0") != std::string::npos);

  std::string bytes = testutil::read_text(dir / "img");
  bytes.resize(bytes.size() - 4);
  testutil::write_text(dir / "short", bytes);
  const auto trunc = message_of([&] { data::load_idx((dir / "short").string(), (dir / "lab").string()); });
  CHECK(trunc.find("truncated") != std::string::npos);
  CHECK(trunc.find("offset") != std::string::npos);

  data::write_idx((dir / "img3").string(), (dir / "lab3").string(), std::vector<std::uint8_t>(27, 0), 3, 3,
                  {1, 2, 3});
  const auto count = message_of([&] { data::load_idx((dir / "img3").string(), (dir / "lab").string()); });
  CHECK(count.find("count") != std::string::npos);
  CHECK_THROWS_AS(data::load_idx((dir / "missing").string(), (dir / "lab").string()), data::FormatError);
}

TEST_CASE("amat fixtures") {
  const auto dir = testutil::scratch("amat");
  testutil::write_text(dir / "ok.amat", "0.1 0.2 0.3 0.4 7.0\n\n1 0 0.5 0.25 3\n");
  const auto ds = data::load_amat((dir / "ok.amat").string());
  CHECK(ds.size() == 2);
  CHECK(ds.dim() == 4);
  CHECK(ds.labels == std::vector<int>{7, 3});
  CHECK(ds.num_classes == 8);
  CHECK(ds.features(3, 1) == 0.25);

  testutil::write_text(dir / "empty.amat", "");
  CHECK_THROWS_AS(data::load_amat((dir / "empty.amat").string()), data::FormatError);
  testutil::write_text(dir / "ragged.amat", "0.1 0.2 1\n0.3 1\n");
  CHECK(message_of([&] { data::load_amat((dir / "ragged.amat").string()); }).find(":2:") != std::string::npos);
  testutil::write_text(dir / "token.amat", "0.1 0.2 1\n0.3 x 1\n");
  const auto tok = message_of([&] { data::load_amat((dir / "token.amat").string()); });
  CHECK(tok.find(":2:") != std::string::npos);
  CHECK(tok.find("'x'") != std::string::npos);
  testutil::write_text(dir / "label.amat", "0.1 0.2 1\n\n0.3 0.4 1.5\n");
  CHECK(message_of([&] { data::load_amat((dir / "label.amat").string()); }).find(":3:") != std::string::npos);
}

TEST_CASE("epoch binarization") {
  MatrixXd f(3, 1);
  f << 0.0, 1.0, 0.5;
  Rng rng(71);
  for (int r = 0; r < 50; ++r) {
    const MatrixXd b = data::binarize_epoch(f, rng);
    CHECK(b(0, 0) == 0.0);
    CHECK(b(1, 0) == 1.0);
    CHECK((b(2, 0) == 0.0 || b(2, 0) == 1.0));
  }
  const MatrixXd half = MatrixXd::Constant(1, 100000, 0.5);
  const double mean = data::binarize_epoch(half, rng).mean();
  CHECK(mean >= 0.49);
  CHECK(mean <= 0.51);
  const MatrixXd grey = MatrixXd::Constant(20, 20, 0.5);
  CHECK(data::binarize_epoch(grey, 1, 0) == data::binarize_epoch(grey, 1, 0));
  CHECK(data::binarize_epoch(grey, 1, 0) != data::binarize_epoch(grey, 1, 1));
  CHECK_THROWS_AS(data::binarize_epoch(MatrixXd::Constant(1, 1, 1.5), rng), std::invalid_argument);
}

TEST_CASE("stratified split") {
  std::vector<int> labels;
  for (int i = 0; i < 1000; ++i) labels.push_back(i % 10);
  Rng rng(72);
  const auto s = data::stratified_label_split(labels, 10, 0.01, rng);
  CHECK(s.labeled.size() == 10);
  std::set<int> classes;
  for (auto i : s.labeled) classes.insert(labels[static_cast<std::size_t>(i)]);
  CHECK(classes.size() == 10);

  std::vector<Eigen::Index> all(s.labeled);
  all.insert(all.end(), s.unlabeled.begin(), s.unlabeled.end());
  std::sort(all.begin(), all.end());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  CHECK(all.size() == 1000);
  CHECK(std::is_sorted(s.labeled.begin(), s.labeled.end()));

  Rng tiny(73);
  CHECK(data::stratified_label_split(labels, 10, 0.0001, tiny).labeled.size() == 10);

  Rng a(74), b(74), c(75);
  CHECK(data::stratified_label_split(labels, 10, 0.1, a).labeled ==
        data::stratified_label_split(labels, 10, 0.1, b).labeled);
  Rng d(74);
  CHECK(data::stratified_label_split(labels, 10, 0.1, d).labeled !=
        data::stratified_label_split(labels, 10, 0.1, c).labeled);

  std::vector<int> missing(labels.begin(), labels.end());
  std::replace(missing.begin(), missing.end(), 4, 3);
  CHECK_THROWS_AS(data::stratified_label_split(missing, 10, 0.1, rng), std::invalid_argument);
  CHECK_THROWS_AS(data::stratified_label_split(labels, 10, 1.0, rng), std::invalid_argument);

  data::Dataset ds;
  ds.features = MatrixXd::Zero(2, 1000);
  ds.labels = labels;
  ds.num_classes = 10;
  const auto h = data::hide_labels(ds, s);
  CHECK(std::count(h.labels.begin(), h.labels.end(), data::kUnlabeled) == 990);
}

TEST_CASE("synthetic ibp data") {
  Rng rng(76);
  const auto one = data::synth_ibp_data(400, 1, 12, 0.0, rng);
  std::set<std::vector<double>> patterns;
  for (Eigen::Index i = 0; i < one.means.cols(); ++i) {
    patterns.insert(std::vector<double>(one.means.col(i).data(), one.means.col(i).data() + 12));
  }
  CHECK(patterns.size() == 2);
  CHECK(one.data.num_classes == 1);
  CHECK(((one.data.features.array() == 0.0) || (one.data.features.array() == 1.0)).all());

  Rng a(77), b(77);
  const auto s1 = data::synth_ibp_data(50, 4, 30, 0.1, a);
  const auto s2 = data::synth_ibp_data(50, 4, 30, 0.1, b);
  CHECK(s1.data.features == s2.data.features);
  CHECK(s1.ownership == s2.ownership);
  CHECK(s1.ownership.rows() == 4);
  CHECK(s1.ownership.mean() == doctest::Approx(0.5).epsilon(0.3));
}

TEST_CASE("gaussian blobs") {
  Rng rng(78);
  const auto ds = data::synth_blobs(4000, 20, 2, 4.0, rng);
  CHECK(ds.kind == LikelihoodKind::gaussian);
  CHECK(std::count(ds.labels.begin(), ds.labels.end(), 0) == 2000);
  VectorXd m0 = VectorXd::Zero(20), m1 = VectorXd::Zero(20);
  for (Eigen::Index i = 0; i < ds.size(); ++i) (ds.labels[static_cast<std::size_t>(i)] == 0 ? m0 : m1) += ds.features.col(i);
  m0 /= 2000.0;
  m1 /= 2000.0;
  CHECK((m0 - m1).norm() == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("uniform noise is gaussian-kind only") {
  data::Dataset ds;
  ds.features = MatrixXd::Zero(2, 3);
  ds.labels = {0, 0, 0};
  Rng rng(79);
  CHECK_THROWS_AS(data::add_uniform_noise(ds, rng), std::invalid_argument);
  ds.kind = LikelihoodKind::gaussian;
  data::add_uniform_noise(ds, rng);
  CHECK((ds.features.array() >= 0.0).all());
  CHECK((ds.features.array() < 1.0).all());
  CHECK(ds.features.sum() > 0.0);
}

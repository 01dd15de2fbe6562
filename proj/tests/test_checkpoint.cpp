#include <doctest.h>

#include <string>

#include "ibpdgm/checkpoint.hpp"
#include "test_util.hpp"

using namespace ibpdgm;

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto dir = testutil::scratch("ckpt");
  for (auto kind : {LikelihoodKind::bernoulli, LikelihoodKind::gaussian}) {
    ModelConfig c;
    c.input_dim = 7;
    c.K = 5;
    c.num_classes = 3;
    c.hidden = 6;
    c.alpha = 1.3;
    c.sigma_theta_sq = 0.1;
    c.kind = kind;
    Rng rng(81);
    auto m = IbpDgm::create(c, rng);
    m.sticks.log_a[2] = 0.1 + 1e-17;
    m.sticks.log_b[4] = -3.14159;
    const auto path = (dir / ("m_" + to_string(kind) + ".ckpt")).string();
    save_checkpoint(path, m);
    const auto r = load_checkpoint(path);
    CHECK(r.config.K == 5);
    CHECK(r.config.kind == kind);
    CHECK(r.config.alpha == c.alpha);
    CHECK(r.config.sigma_theta_sq == c.sigma_theta_sq);
    CHECK(r.encoder.params() == m.encoder.params());
    CHECK(r.classifier.params() == m.classifier.params());
    CHECK(r.decoder.params() == m.decoder.params());
    CHECK(r.sticks.log_a == m.sticks.log_a);
    CHECK(r.sticks.log_b == m.sticks.log_b);
    const std::string manifest = testutil::read_text(path);
    CHECK(manifest.rfind(std::string("format ") + kCheckpointFormat, 0) == 0);
  }
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto dir = testutil::scratch("ckpt_bad");
  ModelConfig c;
  c.input_dim = 3;
  c.K = 2;
  c.hidden = 0;
  Rng rng(82);
  const auto path = (dir / "m.ckpt").string();
  save_checkpoint(path, IbpDgm::create(c, rng));

  std::string blob = testutil::read_text(path + ".bin");
  testutil::write_text(path + ".bin", blob.substr(0, blob.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  testutil::write_text(path + ".bin", blob + "12345678");
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  testutil::write_text(path + ".bin", blob);
  CHECK_NOTHROW(load_checkpoint(path));

  std::string manifest = testutil::read_text(path);
  auto bad = manifest;
  bad.replace(bad.find("IBPDGM-1"), 8, "IBPDGM-9");
  testutil::write_text(path, bad);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint((dir / "none.ckpt").string()), CheckpointError);
}

// Chunked OpenMP estimator vs the serial reference on an MNIST-shaped batch.
//
//   estimator_bench [--benchmark_filter=...]
//
// Arguments: Chunked/<threads>, Reference/0.

#include <benchmark/benchmark.h>

#include "ibpdgm/bbvi.hpp"

namespace {

using namespace ibpdgm;

struct Fixture {
  IbpDgm model;
  bbvi::Batch batch;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    ModelConfig c;
    c.input_dim = 784;
    c.K = 50;
    c.num_classes = 10;
    c.hidden = 500;
    Rng rng(1);
    Fixture out{IbpDgm::create(c, rng), {}};
    std::bernoulli_distribution pix(0.13);
    const int B = 32;
    out.batch.features.resize(784, B);
    for (int i = 0; i < B; ++i) {
      for (int d = 0; d < 784; ++d) out.batch.features(d, i) = pix(rng) ? 1.0 : 0.0;
      out.batch.labels.push_back(i % 4 == 0 ? i % 10 : -1);
      out.batch.ids.push_back(static_cast<std::uint64_t>(i));
    }
    return out;
  }();
  return f;
}

bbvi::EstimateOptions options() {
  bbvi::EstimateOptions o;
  o.dataset_size = 20000;
  o.alpha_sup = 10.0;
  o.seed = 7;
  return o;
}

void Chunked(benchmark::State& state) {
  const auto& f = fixture();
  auto o = options();
  o.threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(bbvi::estimate_elbo_and_grads(f.model, f.batch, o).total);
  state.SetItemsProcessed(state.iterations() * f.batch.size());
}

void Reference(benchmark::State& state) {
  const auto& f = fixture();
  const auto o = options();
  for (auto _ : state) {
    benchmark::DoNotOptimize(bbvi::reference::estimate_elbo_and_grads(f.model, f.batch, o).total);
  }
  state.SetItemsProcessed(state.iterations() * f.batch.size());
}

}  // namespace

BENCHMARK(Chunked)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(Reference)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "ncgm/datamodel.hpp"
#include "ncgm/features.hpp"
#include "ncgm/head.hpp"
#include "ncgm/model.hpp"
#include "ncgm/synth.hpp"

namespace {

struct Fixture {
  ncgm::ModelConfig cfg;
  ncgm::TableSample sample;
  ncgm::Tensor image;
  ncgm::ParamStore params;

  explicit Fixture(std::size_t layers) {
    cfg.blocks.layers = layers;
    sample = ncgm::generate_table(7, {});
    image = ncgm::image_tensor(sample.image, cfg.features.image_size);
    params = ncgm::init_model(cfg, 0);
  }
};

void BM_Predict(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ncgm::predict(f.sample, f.image, f.params, f.cfg));
  state.counters["elements"] = static_cast<double>(f.sample.size());
}
BENCHMARK(BM_Predict)->Arg(1)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_TrainingStep(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  const auto sampled = ncgm::monte_carlo_sample(ncgm::build_adjacency(f.sample.elements), 10, 0);
  for (auto _ : state) {
    const auto loss = ncgm::training_loss(f.sample, f.image, f.params, f.cfg, sampled, {});
    benchmark::DoNotOptimize(ncgm::grad(loss));
  }
}
BENCHMARK(BM_TrainingStep)->Arg(1)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace

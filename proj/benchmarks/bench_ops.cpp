#include <benchmark/benchmark.h>

#include <random>

#include "ncgm/metrics.hpp"
#include "ncgm/postprocess.hpp"
#include "ncgm/synth.hpp"
#include "ncgm/tensor.hpp"

namespace {

using ncgm::Tensor;

Tensor random_tensor(ncgm::Shape shape, std::mt19937_64& rng, bool requires_grad = false) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::normal_distribution<double> dist;
  std::vector<double> data(n);
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const auto a = random_tensor({n, n}, rng);
  const auto b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ncgm::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const auto a = random_tensor({n, n}, rng, true);
  const auto b = random_tensor({n, n}, rng, true);
  for (auto _ : state) benchmark::DoNotOptimize(ncgm::grad(ncgm::sum(ncgm::matmul(a, b))));
}
BENCHMARK(BM_MatmulBackward)->Arg(16)->Arg(64)->Arg(256);

void BM_Conv2d(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  const auto x = random_tensor({1, size, size}, rng);
  const auto w = random_tensor({8, 1, 3, 3}, rng);
  const auto b = random_tensor({8}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ncgm::conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv2d)->Arg(32)->Arg(64)->Arg(128);

void BM_Teds(benchmark::State& state) {
  ncgm::GenParams p;
  p.min_rows = p.max_rows = static_cast<int>(state.range(0));
  p.min_cols = p.max_cols = 4;
  p.max_elements = 64;
  auto spans_of = [](const ncgm::TableSample& s) {
    std::vector<ncgm::Span> out;
    for (const auto& e : s.elements) out.push_back(*e.gt_span);
    return out;
  };
  const auto a = ncgm::tree_from_html(ncgm::to_html(spans_of(ncgm::generate_table(1, p)), true));
  const auto b = ncgm::tree_from_html(ncgm::to_html(spans_of(ncgm::generate_table(2, p)), true));
  for (auto _ : state) benchmark::DoNotOptimize(ncgm::teds(a, b));
}
BENCHMARK(BM_Teds)->Arg(2)->Arg(4)->Arg(8);

}  // namespace
BENCHMARK_MAIN();

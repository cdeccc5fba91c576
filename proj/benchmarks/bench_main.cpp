#include <benchmark/benchmark.h>

#include <random>

#include "nowcast/features.hpp"
#include "nowcast/graph.hpp"
#include "nowcast/model.hpp"
#include "nowcast/tensor.hpp"
#include "nowcast/trainer.hpp"

using namespace nowcast;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

std::vector<UnitNode> grid_nodes(std::size_t n) {
  std::vector<UnitNode> nodes(n);
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i].id = "n" + std::to_string(1000 + i);
    nodes[i].x = 500.0 * static_cast<double>(i % 10);
    nodes[i].y = 500.0 * static_cast<double>(i / 10);
    nodes[i].features.residential_ratio = static_cast<double>(i % 7) / 7.0;
    nodes[i].features.dist_coast = 100.0 * static_cast<double>(i);
    nodes[i].features.dist_stream = 37.0 * static_cast<double>(i % 11);
    nodes[i].features.watershed_id = i % 3 ? "a" : "b";
  }
  return nodes;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 128)->Complexity(benchmark::oNCubed);

static void BM_ChebyshevBasis(benchmark::State& state) {
  const auto graph = RegionGraph::build(grid_nodes(static_cast<std::size_t>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(chebyshev_basis(graph.scaled_laplacian(), 3));
}
BENCHMARK(BM_ChebyshevBasis)->Arg(20)->Arg(80);

static void BM_GraphBuild(benchmark::State& state) {
  const auto nodes = grid_nodes(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(RegionGraph::build(nodes));
}
BENCHMARK(BM_GraphBuild)->Arg(20)->Arg(80);

// One ST block forward and forward+backward at desk scale.
static void BM_Forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto ops = GraphOperators::from(RegionGraph::build(grid_nodes(n)), 3);
  ModelConfig mc;
  mc.nodes = n;
  mc.block_channels = {16};
  mc.window = 12;
  const auto p = ModelParams::init(mc);
  const auto x = random_tensor({n, kChannels, 12}, 3);
  for (auto _ : state) {
    NoGradGuard guard;
    benchmark::DoNotOptimize(forward(x, ops, p).probs);
  }
}
BENCHMARK(BM_Forward)->Arg(20)->Arg(40)->Unit(benchmark::kMillisecond);

static void BM_ForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto ops = GraphOperators::from(RegionGraph::build(grid_nodes(n)), 3);
  ModelConfig mc;
  mc.nodes = n;
  mc.block_channels = {16};
  mc.window = 12;
  auto p = ModelParams::init(mc);
  const auto x = random_tensor({n, kChannels, 12}, 3);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 3);
  for (auto _ : state) {
    for (auto& [name, t] : p.parameters()) t->zero_grad();
    backward(cross_entropy(forward(x, ops, p).logits, labels, {1.0, 1.0, 1.0}));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(20)->Arg(40)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();

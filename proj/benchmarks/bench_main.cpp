#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mobrisk/eval.hpp"
#include "mobrisk/features.hpp"
#include "mobrisk/forest.hpp"
#include "mobrisk/rank.hpp"

namespace {

using namespace mobrisk;

struct Data {
  Matrix X;
  std::vector<std::uint8_t> y;
};

Data make_data(std::size_t n, std::size_t d) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Data out{Matrix(n, d), std::vector<std::uint8_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out.X(i, j) = nd(rng);
      if (j < 3) s += out.X(i, j);
    }
    out.y[i] = s + nd(rng) > 0.0;
  }
  return out;
}

void BM_ForestFit(benchmark::State& state) {
  const auto d = make_data(static_cast<std::size_t>(state.range(0)), features::kFeatureCount);
  forest::ForestConfig cfg;
  cfg.n_trees = 20;
  for (auto _ : state) benchmark::DoNotOptimize(forest::fit_forest(d.X, d.y, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForestFit)->Arg(1000)->Arg(6000)->Unit(benchmark::kMillisecond);

void BM_ForestPredict(benchmark::State& state) {
  const auto d = make_data(6000, features::kFeatureCount);
  forest::ForestConfig cfg;
  const auto f = forest::fit_forest(d.X, d.y, cfg);
  const auto probe = make_data(static_cast<std::size_t>(state.range(0)), features::kFeatureCount);
  for (auto _ : state) benchmark::DoNotOptimize(f.predict_proba(probe.X));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForestPredict)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_AucAndAp(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  std::vector<double> pos(static_cast<std::size_t>(state.range(0))), neg(pos.size() * 10);
  for (auto& v : pos) v = u(rng) + 0.2;
  for (auto& v : neg) v = u(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::auc(pos, neg));
    benchmark::DoNotOptimize(eval::average_precision(pos, neg));
  }
}
BENCHMARK(BM_AucAndAp)->Arg(1000)->Arg(10000);

void BM_KnapsackExact(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::vector<rank::KnapsackItem> items(static_cast<std::size_t>(state.range(0)));
  for (auto& it : items) it = {static_cast<double>(rng() % 1000) / 1000.0, static_cast<double>(1 + rng() % 5)};
  const double budget = static_cast<double>(items.size()) / 5.0;
  for (auto _ : state) benchmark::DoNotOptimize(rank::knapsack_exact(items, budget));
}
BENCHMARK(BM_KnapsackExact)->Arg(200)->Arg(2000);

void BM_KnapsackGreedy(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::vector<rank::KnapsackItem> items(static_cast<std::size_t>(state.range(0)));
  for (auto& it : items) it = {static_cast<double>(rng() % 1000) / 1000.0, static_cast<double>(1 + rng() % 5)};
  const double budget = static_cast<double>(items.size()) / 5.0;
  for (auto _ : state) benchmark::DoNotOptimize(rank::knapsack_greedy(items, budget));
}
BENCHMARK(BM_KnapsackGreedy)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();

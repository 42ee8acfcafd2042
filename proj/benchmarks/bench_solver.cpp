#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "vlgcbm/sparse_final.hpp"

using namespace vlgcbm;

namespace {

struct Instance {
    Mat x;
    std::vector<int> labels;
    std::size_t c;
};

Instance make_instance(int n, int k, int c) {
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<int> pick(0, c - 1);
    Instance inst{Mat::zeros(n, k), {}, std::size_t(c)};
    for (auto& v : inst.x.v) v = normal(rng);
    inst.labels.resize(n);
    for (auto& y : inst.labels) y = pick(rng);
    return inst;
}

}  // namespace

static void BM_SolveElasticNet(benchmark::State& state) {
    const int k = int(state.range(0));
    auto inst = make_instance(400, k, 6);
    const double lmax =
        compute_lambda_max(inst.x, inst.labels, inst.c, 0.99);
    for (auto _ : state) {
        auto layer =
            solve_elastic_net(inst.x, inst.labels, inst.c, 0.1 * lmax, 0.99);
        benchmark::DoNotOptimize(layer.weights.v.data());
    }
}
BENCHMARK(BM_SolveElasticNet)->Arg(16)->Arg(32)->Arg(64);

static void BM_SolvePath(benchmark::State& state) {
    auto inst = make_instance(500, 24, 6);
    Mat x_val = Mat::zeros(100, 24);
    std::vector<int> y_val(inst.labels.begin(), inst.labels.begin() + 100);
    for (int i = 0; i < 100; ++i)
        std::copy(inst.x.row(i).begin(), inst.x.row(i).end(),
                  x_val.row(i).begin());
    const int points = int(state.range(0));
    for (auto _ : state) {
        auto path = solve_path(inst.x, inst.labels, x_val, y_val, inst.c,
                               0.99, points);
        benchmark::DoNotOptimize(path.entries.data());
    }
}
BENCHMARK(BM_SolvePath)->Arg(10)->Arg(30)->Unit(benchmark::kMillisecond);

static void BM_PruneToNec(benchmark::State& state) {
    std::mt19937_64 rng(777);
    std::normal_distribution<double> normal;
    SparseFinalLayer layer;
    layer.weights = Mat::zeros(100, 512);
    for (auto& v : layer.weights.v) v = normal(rng);
    layer.bias.assign(100, 0.0);
    for (auto _ : state) {
        auto pruned = prune_to_nec(layer, 5.0);
        benchmark::DoNotOptimize(pruned.weights.v.data());
    }
}
BENCHMARK(BM_PruneToNec);

BENCHMARK_MAIN();

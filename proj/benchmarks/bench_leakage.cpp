#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "vlgcbm/cbl.hpp"
#include "vlgcbm/leakage.hpp"

using namespace vlgcbm;

static void BM_OptimalApproximator(benchmark::State& state) {
    const int d = int(state.range(0)), k = d / 2;
    Mat sigma = random_spd(d, 11);
    std::mt19937_64 rng(22);
    std::normal_distribution<double> normal;
    Mat w_c = Mat::zeros(k, d);
    for (auto& v : w_c.v) v = normal(rng);
    std::vector<double> w(d);
    for (auto& v : w) v = normal(rng);
    std::vector<double> mu;
    for (auto _ : state) {
        auto approx = optimal_approximator(w_c, sigma, mu, w, 0.0);
        benchmark::DoNotOptimize(approx.error);
    }
}
BENCHMARK(BM_OptimalApproximator)->Arg(32)->Arg(64)->Arg(128);

static void BM_LeakageExperiment(benchmark::State& state) {
    LeakageSetup setup;
    setup.d = 32;
    setup.sigma = random_spd(32, 33);
    setup.k_grid = {4, 16, 31};
    setup.trials = int(state.range(0));
    std::mt19937_64 rng(44);
    std::normal_distribution<double> normal;
    setup.w.resize(32);
    for (auto& v : setup.w) v = normal(rng);
    for (auto _ : state) {
        auto res = run_leakage_experiment(setup);
        benchmark::DoNotOptimize(res.per_k.size());
    }
}
BENCHMARK(BM_LeakageExperiment)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_ConceptLogits(benchmark::State& state) {
    const int n = 2000, d = 512, k = 128;
    std::mt19937_64 rng(55);
    std::normal_distribution<float> nf;
    std::normal_distribution<double> nd;
    EmbeddingMatrix emb;
    emb.n = n;
    emb.d = d;
    emb.values.resize(std::size_t(n) * d);
    for (auto& v : emb.values) v = nf(rng);
    for (int i = 0; i < n; ++i) emb.ids.push_back("r" + std::to_string(i));
    ConceptBottleneck cb;
    cb.weights = Mat::zeros(k, d);
    for (auto& v : cb.weights.v) v = nd(rng);
    cb.norm_mean.assign(k, 0.0);
    cb.norm_std.assign(k, 1.0);
    for (auto _ : state) {
        Mat logits = concept_logit_matrix(cb, emb);
        benchmark::DoNotOptimize(logits.v.data());
    }
}
BENCHMARK(BM_ConceptLogits)->Unit(benchmark::kMillisecond);

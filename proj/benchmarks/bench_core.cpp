#include <benchmark/benchmark.h>

#include <random>

#include "blanket/discovery.hpp"
#include "blanket/graph.hpp"
#include "blanket/scm.hpp"
#include "blanket/stats.hpp"

using namespace blanket;

namespace {

TaskInstance task(std::size_t f, double density, std::size_t n = 1000) {
    TaskConfig c;
    c.feature_count = f;
    c.density = density;
    c.n = n;
    for (Seed s = 1;; ++s) {
        c.seed = s;
        try {
            return generate_task(c);
        } catch (const GenerationError&) {
        }
    }
}

void BM_GenerateTask(benchmark::State& state) {
    TaskConfig c;
    c.feature_count = static_cast<std::size_t>(state.range(0));
    c.density = 4.0 / static_cast<double>(c.feature_count);
    Seed s = 0;
    for (auto _ : state) {
        c.seed = ++s;
        try {
            benchmark::DoNotOptimize(generate_task(c));
        } catch (const GenerationError&) {
        }
    }
}
BENCHMARK(BM_GenerateTask)->Arg(40)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_MarkovBoundary(benchmark::State& state) {
    const auto f = static_cast<std::size_t>(state.range(0));
    const Dag g = generate_er_dag(f + 1, 4.0 / static_cast<double>(f), 3);
    NodeId v = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(markov_boundary(g, v));
        v = (v + 1) % g.node_count();
    }
}
BENCHMARK(BM_MarkovBoundary)->Arg(40)->Arg(200)->Arg(1000);

void BM_DSeparated(benchmark::State& state) {
    const auto f = static_cast<std::size_t>(state.range(0));
    const Dag g = generate_er_dag(f + 1, 4.0 / static_cast<double>(f), 5);
    const NodeSet z{1, 2, 3, 4};
    NodeId a = 5;
    for (auto _ : state) {
        benchmark::DoNotOptimize(d_separated(g, 0, a, z));
        a = 5 + (a - 4) % (g.node_count() - 5);
    }
}
BENCHMARK(BM_DSeparated)->Arg(40)->Arg(200)->Arg(1000);

void BM_PartialCorrelation(benchmark::State& state) {
    const TaskInstance t = task(40, 0.2);
    const CorrelationCache cache(t.data);
    std::vector<NodeId> z;
    for (NodeId v = 2; z.size() < static_cast<std::size_t>(state.range(0)); ++v) z.push_back(v);
    for (auto _ : state) benchmark::DoNotOptimize(cache.partial_correlation(0, 1, z));
}
BENCHMARK(BM_PartialCorrelation)->Arg(0)->Arg(3)->Arg(10);

void BM_Discovery(benchmark::State& state) {
    const auto method = static_cast<DiscoveryMethod>(state.range(0));
    const TaskInstance t = task(static_cast<std::size_t>(state.range(1)), 0.05);
    std::size_t tests = 0;
    for (auto _ : state) {
        const DiscoveryResult r = discover(method, t.data, t.target());
        tests = r.ci_test_count;
    }
    state.counters["ci_tests"] = static_cast<double>(tests);
}
BENCHMARK(BM_Discovery)
    ->ArgsProduct({{static_cast<int>(DiscoveryMethod::grow_shrink), static_cast<int>(DiscoveryMethod::hiton_mb)},
                   {40, 80, 160}})
    ->Unit(benchmark::kMillisecond);

void BM_Fit(benchmark::State& state) {
    const auto reg = static_cast<Regressor>(state.range(0));
    const auto p = static_cast<Eigen::Index>(state.range(1));
    std::mt19937_64 rng(7);
    std::normal_distribution<double> z;
    Eigen::MatrixXd x(800, p);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = z(rng);
    Eigen::VectorXd y = x.leftCols(std::min<Eigen::Index>(p, 5)).rowwise().sum();
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += 0.5 * z(rng);
    for (auto _ : state) benchmark::DoNotOptimize(fit(reg, x, y));
}
BENCHMARK(BM_Fit)
    ->ArgsProduct({{static_cast<int>(Regressor::ols), static_cast<int>(Regressor::ridge), static_cast<int>(Regressor::lasso)},
                   {10, 40, 200}})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

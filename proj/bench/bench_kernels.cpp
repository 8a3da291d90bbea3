#include <benchmark/benchmark.h>
#include <omp.h>

#include "towerlab/correlate.hpp"
#include "towerlab/tower.hpp"
#include "towerlab/ulam.hpp"

namespace {

using namespace towerlab;

TowerChain make_chain() {
    TowerParams p;
    p.theta_prime = 0.5;
    const DrivingSystem d{DrivingParams{}};
    return TowerChain(d, FiberSetup{}, d.origin(), p);
}

void BM_QuadraticPartition(benchmark::State& st) {
    for (auto _ : st) benchmark::DoNotOptimize(build_quadratic_partition(1.4, static_cast<int>(st.range(0))));
}
BENCHMARK(BM_QuadraticPartition)->Arg(22)->Arg(32);

void BM_BuildOperator(benchmark::State& st) {
    omp_set_num_threads(static_cast<int>(st.range(0)));
    const TowerChain c = make_chain();
    long k = 0;
    for (auto _ : st) benchmark::DoNotOptimize(build_operator(c, k++));
}
BENCHMARK(BM_BuildOperator)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_Push(benchmark::State& st) {
    const TowerChain c = make_chain();
    const Cocycle L(c);
    Vec rho = level0_uniform(c.grid(0));
    L.op(0);
    for (auto _ : st) benchmark::DoNotOptimize(L.push(0, rho));
}
BENCHMARK(BM_Push);

void BM_MonteCarlo(benchmark::State& st) {
    omp_set_num_threads(static_cast<int>(st.range(1)));
    const TowerChain c = make_chain();
    const Cocycle L(c);
    const DensityResult d = equivariant_density(L, 0, 300, 1e-10);
    const auto orbit = density_orbit(L, 0, d.h, 21);
    const Vec phi = d.h;
    auto psi = [&](long k) { return sample_observable(c, k, named_observable("base_indicator")); };
    for (auto _ : st)
        benchmark::DoNotOptimize(mc_correlation_series(c, 0, phi, psi, orbit, 20, st.range(0), 7, 8));
}
BENCHMARK(BM_MonteCarlo)->Args({100000, 1})->Args({100000, 4})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

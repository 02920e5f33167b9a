#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "pidflow/discrete_pid.hpp"
#include "pidflow/flow.hpp"
#include "pidflow/pid.hpp"
#include "pidflow/preprocess.hpp"
#include "pidflow/synth.hpp"

using namespace pidflow;

namespace {

Matrix normal_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

void BM_GaussianMi(benchmark::State& state)
{
    const int d = static_cast<int>(state.range(0));
    const Matrix x = normal_rows(4 * d, 2 * d + 1, 1);
    const Matrix cov = x.transpose() * x / static_cast<double>(x.rows()) +
                       Matrix::Identity(2 * d + 1, 2 * d + 1);
    const auto joint = joint_from_covariance(cov, d, d, 1);
    for (auto _ : state) benchmark::DoNotOptimize(decompose_pid_mmi(joint));
}
BENCHMARK(BM_GaussianMi)->Arg(1)->Arg(8)->Arg(32);

void BM_FitPca(benchmark::State& state)
{
    const Matrix x = normal_rows(2000, state.range(0), 2);
    for (auto _ : state) benchmark::DoNotOptimize(fit_pca(x, 0.95));
}
BENCHMARK(BM_FitPca)->Arg(64)->Arg(256);

void BM_FlowStep(benchmark::State& state)
{
    const int d = static_cast<int>(state.range(0));
    FlowModel m = FlowModel::identity(FlowArchitecture{d + 1, d, 4, 64}, 3);
    FlowModel g = zeros_like(m);
    const Matrix batch = normal_rows(256, d + 1, 4);
    for (auto _ : state) benchmark::DoNotOptimize(flow_batch_loss(m, batch, &g, 0.1));
}
BENCHMARK(BM_FlowStep)->Arg(1)->Arg(8);

void BM_DiscreteBrute(benchmark::State& state)
{
    const auto pmf = gen_discrete_system(DiscreteSystem::and_gate);
    for (auto _ : state) benchmark::DoNotOptimize(discrete_pid_brute(pmf));
}
BENCHMARK(BM_DiscreteBrute);

}  // namespace

BENCHMARK_MAIN();

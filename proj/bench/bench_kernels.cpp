// SPDX-License-Identifier: Apache-2.0
// Serial against parallel execution of the kernels that carry an Execution policy.
#include <benchmark/benchmark.h>

#include "grating/greens.hpp"
#include "grating/inverse.hpp"
#include "grating/reciprocity_lab.hpp"

using namespace grating;

namespace
{

Execution policy(const benchmark::State &state)
{
  return state.range(0) == 0 ? Execution::serial : Execution::parallel;
}

GratingConfig grating_config(int truncation)
{
  GratingConfig cfg;
  cfg.k0 = 1.3;
  cfg.c = 0.0;
  cfg.b = 1.0;
  cfg.h = 1.5;
  cfg.momentum.alpha = Vec2(0.31, -0.17);
  cfg.truncation = truncation;
  return cfg;
}

void BM_GreenBatch(benchmark::State &state)
{
  GreenParams p;
  p.k = 1.3;
  p.momentum.alpha = Vec2(0.2, 0.1);
  p.truncation = 30;
  std::vector<Vec3> xs;
  for (int i = 0; i < 256; ++i)
  {
    xs.emplace_back(0.05 * i, -0.03 * i, 0.2 + 0.01 * (i % 50));
  }
  for (auto _ : state)
  {
    benchmark::DoNotOptimize(dyadic_green_batch(xs, Vec3::Zero(), p, policy(state)));
  }
}

void BM_DipoleSolve(benchmark::State &state)
{
  const auto cfg = grating_config(6);
  const auto mat = MaterialProfile::fourier(Axis::x1, {{0, cplx(2.0, 0.1)}, {1, 0.3}, {-1, 0.3}});
  SolveOptions opts;
  opts.exec = policy(state);
  for (auto _ : state)
  {
    benchmark::DoNotOptimize(solve_dipole(cfg, mat, Vec3(0.3, 0.2, 1.25), Vec3(0, 1, 0), std::nullopt, opts));
  }
}

void BM_ReciprocitySweep(benchmark::State &state)
{
  auto sweep = standard_sweep(ReciprocityKind::interior, grating_config(4));
  sweep.k1 = 1.3 * std::sqrt(cplx(2.0, 0.3));
  sweep.y0 = Vec3(0.3, 0.2, 0.4);
  for (auto _ : state)
  {
    benchmark::DoNotOptimize(run_sweep(sweep, policy(state)));
  }
}

void BM_SynthesizeData(benchmark::State &state)
{
  auto cfg = grating_config(3);
  cfg.boundary = BoundaryCondition::impedance(0.8);
  const auto mat = MaterialProfile::homogeneous(1.0, 2.0);
  for (auto _ : state)
  {
    benchmark::DoNotOptimize(synthesize_data(cfg, mat, orders_within(1), {1, 2, 3}, 0.01, 7, policy(state)));
  }
}

}  // namespace

// Argument 0 is the serial reference path, 1 the OpenMP path.
BENCHMARK(BM_GreenBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DipoleSolve)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ReciprocitySweep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SynthesizeData)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

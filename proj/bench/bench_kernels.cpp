// Serial reference kernels against their OpenMP counterparts.
//
//   bench_kernels --benchmark_filter=linear

#include <benchmark/benchmark.h>

#include <vector>

#include "edgeprune/kernels.hpp"
#include "edgeprune/rng.hpp"

namespace k = edgeprune::kernels;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  const edgeprune::CounterRng r(seed);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = r.normal(i);
  return v;
}

using LinearFn = void (*)(const k::LinearDims&, const double*, const double*, const double*, double*);
using ConvFn = void (*)(const k::ConvDims&, const double*, const double*, const double*, double*);
using LinearParamsFn = void (*)(const k::LinearDims&, const double*, const double*, double*, double*);

void linear_forward(benchmark::State& state, LinearFn fn) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const k::LinearDims d{100, n, n};
  const auto x = normals(d.batch * d.in, 1), w = normals(d.out * d.in, 2), b = normals(d.out, 3);
  std::vector<double> y(d.batch * d.out);
  for (auto _ : state) {
    fn(d, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * d.batch * d.in * d.out));
}

void linear_backward_params(benchmark::State& state, LinearParamsFn fn) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const k::LinearDims d{100, n, n};
  const auto dy = normals(d.batch * d.out, 1), x = normals(d.batch * d.in, 2);
  std::vector<double> dw(d.out * d.in), db(d.out);
  for (auto _ : state) {
    fn(d, dy.data(), x.data(), dw.data(), db.data());
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * d.batch * d.in * d.out));
}

void conv_forward(benchmark::State& state, ConvFn fn) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const k::ConvDims d{32, c, c, 64, 1};
  const auto x = normals(d.batch * d.cin * d.n, 1), w = normals(d.cout * d.cin * d.taps(), 2),
             b = normals(d.cout, 3);
  std::vector<double> y(d.batch * d.cout * d.n);
  for (auto _ : state) {
    fn(d, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(
      static_cast<std::int64_t>(state.iterations() * d.batch * d.cout * d.cin * d.taps() * d.n));
}

}  // namespace

BENCHMARK_CAPTURE(linear_forward, serial, k::serial::linear_forward)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK_CAPTURE(linear_forward, parallel, k::parallel::linear_forward)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK_CAPTURE(linear_backward_params, serial, k::serial::linear_backward_params)
    ->RangeMultiplier(4)
    ->Range(64, 1024);
BENCHMARK_CAPTURE(linear_backward_params, parallel, k::parallel::linear_backward_params)
    ->RangeMultiplier(4)
    ->Range(64, 1024);
BENCHMARK_CAPTURE(conv_forward, serial, k::serial::conv_forward)->RangeMultiplier(2)->Range(16, 64);
BENCHMARK_CAPTURE(conv_forward, parallel, k::parallel::conv_forward)->RangeMultiplier(2)->Range(16, 64);

BENCHMARK_MAIN();

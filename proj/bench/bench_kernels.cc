#include <benchmark/benchmark.h>

#include <random>

#include "kwmlp/encoder.h"
#include "kwmlp/kernels.h"

namespace {

using kwmlp::Matrix;

Matrix random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Matrix m(r, c);
  for (double& v : m.flat()) v = u(rng);
  return m;
}

// Shapes from the encoder: the U projection (98x64 * 64x256) and the
// temporal projection (98x98 * 98x128).
void args(benchmark::internal::Benchmark* b) {
  b->Args({98, 64, 256})->Args({98, 98, 128})->Args({256, 256, 256});
}

void BM_MatmulReference(benchmark::State& state) {
  const Matrix a = random_matrix(state.range(0), state.range(1), 1);
  const Matrix b = random_matrix(state.range(1), state.range(2), 2);
  Matrix c;
  for (auto _ : state) {
    kwmlp::kernels::reference::matmul(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1) * state.range(2));
}
BENCHMARK(BM_MatmulReference)->Apply(args);

void BM_MatmulParallel(benchmark::State& state) {
  const Matrix a = random_matrix(state.range(0), state.range(1), 1);
  const Matrix b = random_matrix(state.range(1), state.range(2), 2);
  Matrix c;
  for (auto _ : state) {
    kwmlp::kernels::matmul(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1) * state.range(2));
}
BENCHMARK(BM_MatmulParallel)->Apply(args);

void BM_EncodeSegment(benchmark::State& state) {
  const auto w = kwmlp::init_weights(kwmlp::EncoderConfig{}, 0);
  const kwmlp::dsp::Mfcc x{random_matrix(40, 98, 3)};
  for (auto _ : state) benchmark::DoNotOptimize(kwmlp::encode_segment(x, w, 12));
}
BENCHMARK(BM_EncodeSegment)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "seqlab/numerics/ops.hpp"
#include "seqlab/util/rng.hpp"

namespace seqlab {
namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, bool grad) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = 2.0 * uniform01(rng) - 1.0;
  return Tensor({rows, cols}, std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1, false);
  const Tensor b = random_matrix(n, n, 2, false);
  for (auto _ : state) {
    Tape tape;
    tape.set_recording(false);
    benchmark::DoNotOptimize(matmul(tape, a, b));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = random_matrix(n, n, 1, true);
  Tensor b = random_matrix(n, n, 2, true);
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    Tape tape;
    tape.backward(sum(tape, matmul(tape, a, b)));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(16)->Arg(64);

void BM_LogSoftmax(benchmark::State& state) {
  const Tensor x = random_matrix(16, static_cast<std::size_t>(state.range(0)), 3, false);
  for (auto _ : state) {
    Tape tape;
    tape.set_recording(false);
    benchmark::DoNotOptimize(log_softmax(tape, x));
  }
}
BENCHMARK(BM_LogSoftmax)->Arg(128)->Arg(1024);

void BM_LayerNormBackward(benchmark::State& state) {
  Tensor x = random_matrix(16, 64, 4, true);
  Tensor gain = Tensor::filled({64}, 1.0, true);
  Tensor bias = Tensor::zeros({64}, true);
  for (auto _ : state) {
    x.zero_grad();
    gain.zero_grad();
    bias.zero_grad();
    Tape tape;
    tape.backward(sum(tape, layer_norm(tape, x, gain, bias)));
  }
}
BENCHMARK(BM_LayerNormBackward);

}  // namespace
}  // namespace seqlab

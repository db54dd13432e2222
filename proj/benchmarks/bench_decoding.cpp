#include <benchmark/benchmark.h>

#include "seqlab/decoding/decoders.hpp"
#include "seqlab/model/transformer.hpp"
#include "seqlab/oracle/oracle.hpp"

namespace seqlab {
namespace {

const TokenSeq kContext = {3, 9, 14, 20, 27, 33};

const Transformer& bench_model() {
  static const Transformer model = [] {
    ModelConfig c;
    c.vocab_size = 123;
    c.d_model = 48;
    c.n_heads = 4;
    c.d_ff = 96;
    c.max_len = 16;
    return Transformer(c, 7);
  }();
  return model;
}

void BM_BeamSearch(benchmark::State& state) {
  BeamConfig config;
  config.beam_size = static_cast<std::size_t>(state.range(0));
  config.max_len = 11;
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(bench_model(), kContext, config));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(6)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_DiverseBeamSearch(benchmark::State& state) {
  BeamConfig config;
  config.beam_size = 6;
  config.n_groups = 3;
  config.max_len = 11;
  for (auto _ : state) {
    benchmark::DoNotOptimize(diverse_beam_search(bench_model(), kContext, config));
  }
}
BENCHMARK(BM_DiverseBeamSearch)->Unit(benchmark::kMillisecond);

void BM_NucleusSample(benchmark::State& state) {
  std::uint64_t seed = 0;
  SamplingConfig config{11, ScoreFn::kLogProbAvg};
  for (auto _ : state) {
    benchmark::DoNotOptimize(nucleus_sample(bench_model(), kContext, 0.9, ++seed, config));
  }
}
BENCHMARK(BM_NucleusSample)->Unit(benchmark::kMillisecond);

void BM_EnumerateMicroModel(benchmark::State& state) {
  const RandomMicroModel model(7, 4, 3);
  const TokenSeq x = {3};
  const EnumerationBudget budget{4, 5};
  for (auto _ : state) {
    benchmark::DoNotOptimize(enumerate_scored(model, x, ScoreFn::kLogitsAvg, budget, true));
  }
}
BENCHMARK(BM_EnumerateMicroModel)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace seqlab

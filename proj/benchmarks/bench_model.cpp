#include <vector>

#include <benchmark/benchmark.h>

#include "seqlab/losses/losses.hpp"
#include "seqlab/model/transformer.hpp"

namespace seqlab {
namespace {

ModelConfig bench_config() {
  ModelConfig c;
  c.vocab_size = 123;
  c.d_model = 48;
  c.n_heads = 4;
  c.n_enc_layers = 2;
  c.n_dec_layers = 2;
  c.d_ff = 96;
  c.max_len = 16;
  c.dropout = 0.1;
  return c;
}

const TokenSeq kContext = {3, 9, 14, 20, 27, 33};
const TokenSeq kTarget = {40, 41, 52, 63, 70, 81, 90, kEos};

void BM_TeacherForcedForward(benchmark::State& state) {
  const Transformer model(bench_config(), 1);
  for (auto _ : state) {
    Tape tape;
    tape.set_recording(false);
    benchmark::DoNotOptimize(model.forward_teacher_forcing(tape, kContext, kTarget));
  }
}
BENCHMARK(BM_TeacherForcedForward)->Unit(benchmark::kMicrosecond);

void BM_TokenLossForwardBackward(benchmark::State& state) {
  const Transformer model(bench_config(), 1);
  std::uint64_t step = 0;
  for (auto _ : state) {
    model.parameters().zero_grad();
    Tape tape(Mode::kTrain, ++step);
    const Tensor logits = model.forward_teacher_forcing(tape, kContext, kTarget);
    tape.backward(token_ce(tape, logits, kTarget));
  }
}
BENCHMARK(BM_TokenLossForwardBackward)->Unit(benchmark::kMicrosecond);

void BM_IncrementalDecodeStep(benchmark::State& state) {
  const Transformer model(bench_config(), 1);
  for (auto _ : state) {
    DecoderState s = model.begin_decoding(kContext);
    TokenId next = kBos;
    for (TokenId t : kTarget) {
      benchmark::DoNotOptimize(model.decode_step(s, next));
      next = t;
    }
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kTarget.size()));
}
BENCHMARK(BM_IncrementalDecodeStep)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace seqlab

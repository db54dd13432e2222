#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqlab/datagen/grammar.hpp"
#include "seqlab/decoding/decoders.hpp"
#include "seqlab/metrics/metrics.hpp"
#include "seqlab/model/step_model.hpp"

namespace seqlab {

struct EvalConfig {
  // Decoding for BLEU / distinct-n; its score_fn also scores the ranking.
  BeamConfig beam;
};

struct EvalReport {
  double perplexity = 0.0;
  double bleu4 = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  double distinct3 = 0.0;
  RankReport rank;
  // Beam top-1 output (without EOS) per evaluation pair.
  std::vector<TokenSeq> outputs;
};

// Top-1 beam output per pair, without EOS. Each distinct context is decoded
// once.
std::vector<TokenSeq> decode_top1(const StepModel& model, std::span<const DialoguePair> pairs,
                                  const BeamConfig& beam);

EvalReport evaluate(const StepModel& model, std::span<const DialoguePair> pairs,
                    std::span<const TokenSeq> distractors, const EvalConfig& config);

// One metric record per line: perplexity, bleu4, distinct_1..3, mean_rank.
std::string metric_records(const EvalReport& report, const std::string& config_hash,
                           std::uint64_t seed);

}  // namespace seqlab

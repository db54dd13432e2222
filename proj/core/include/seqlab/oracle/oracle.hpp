#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "seqlab/decoding/decoders.hpp"
#include "seqlab/losses/losses.hpp"
#include "seqlab/model/step_model.hpp"

namespace seqlab {

// Size limits for exhaustive enumeration. `vocab_size` counts the tokens a
// decoder may emit (EOS plus content), i.e. the model vocabulary without PAD
// and BOS; `max_len` counts output tokens including EOS.
struct EnumerationBudget {
  std::size_t max_len = 4;
  std::size_t vocab_size = 4;
  std::size_t cap = 1'000'000;

  // Throws ValidationError unless vocab_size^max_len <= cap.
  void validate() const;
};

// Every EOS-terminated output of at most budget.max_len tokens, scored with
// `score_fn` exactly as the decoders score them, in depth-first token order.
// With `include_truncated`, the max_len-token outputs that never emit EOS are
// listed too (finished == false); these are exactly the outputs a decoder
// can return when it hits the length cap.
std::vector<Hypothesis> enumerate_scored(const StepModel& model, std::span<const TokenId> x,
                                         ScoreFn score_fn, const EnumerationBudget& budget,
                                         bool include_truncated = false);

// Stable log-sum-exp.
double exact_partition(std::span<const double> scores);
double exact_partition(std::span<const Hypothesis> sequences);

// Highest score; among equal scores the lexicographically smallest tokens.
const Hypothesis& exact_argmax(std::span<const Hypothesis> sequences);

// A small model whose logits are a fixed pseudo-random function of the input
// and the decoded prefix, uniform in [-scale, scale]. scale 0 gives the
// uniform distribution.
class RandomMicroModel : public StepModel {
 public:
  RandomMicroModel(std::size_t vocab_size, std::size_t max_len, std::uint64_t seed,
                   double scale = 2.0);

  std::size_t vocab_size() const override { return vocab_size_; }
  std::size_t max_len() const override { return max_len_; }
  std::unique_ptr<DecoderSession> start(std::span<const TokenId> x) const override;

  std::vector<double> logits_after(std::span<const TokenId> x,
                                   std::span<const TokenId> consumed) const;

 private:
  std::size_t vocab_size_;
  std::size_t max_len_;
  std::uint64_t seed_;
  double scale_;
};

}  // namespace seqlab

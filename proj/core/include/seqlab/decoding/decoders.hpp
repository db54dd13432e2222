#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "seqlab/losses/losses.hpp"
#include "seqlab/model/step_model.hpp"
#include "seqlab/types.hpp"

namespace seqlab {

struct Hypothesis {
  TokenSeq tokens;  // ends in kEos unless truncated at max_len
  bool finished = false;
  double score = 0.0;  // average(per_step_values)
  std::vector<double> per_step_values;
};

struct BeamConfig {
  std::size_t beam_size = 6;
  // Output length cap including EOS; 0 means the model's own max_len.
  std::size_t max_len = 0;
  ScoreFn score_fn = ScoreFn::kLogProbAvg;
  std::size_t n_groups = 1;
  double diversity_strength = 0.5;

  void validate() const;
};

// Length-normalised beam search. Each step the beam_size best candidates
// (ranked by running score average, ties broken lexicographically on token
// ids) are kept; a kept candidate ending in EOS moves to the finished pool,
// so one fewer beam stays live. The search stops once beam_size hypotheses are finished and no
// live beam can reach a better average: for logprob_avg future steps are
// bounded by 0, for logits_avg by the largest logit seen so far.
// Returns at most beam_size distinct hypotheses, best first.
std::vector<Hypothesis> beam_search(const StepModel& model, std::span<const TokenId> x,
                                    const BeamConfig& config);

// Diverse beam search with Hamming diversity: groups of width
// beam_size / n_groups are advanced one after another at every step, and a
// candidate token is penalised by diversity_strength times the number of
// earlier groups' selections of that token at the same step. The penalty only
// affects selection; reported scores are the model's. With n_groups == 1 this
// is beam_search.
std::vector<Hypothesis> diverse_beam_search(const StepModel& model, std::span<const TokenId> x,
                                            const BeamConfig& config);

// Argmax decoding (lowest id on ties) until EOS or max_len.
Hypothesis greedy(const StepModel& model, std::span<const TokenId> x, std::size_t max_len = 0,
                  ScoreFn score_fn = ScoreFn::kLogProbAvg);

struct SamplingConfig {
  std::size_t max_len = 0;
  ScoreFn score_fn = ScoreFn::kLogProbAvg;
};

Hypothesis top_k_sample(const StepModel& model, std::span<const TokenId> x, std::size_t k,
                        double temperature, std::uint64_t seed, const SamplingConfig& config = {});
Hypothesis nucleus_sample(const StepModel& model, std::span<const TokenId> x, double p,
                          std::uint64_t seed, const SamplingConfig& config = {});

// Candidate sets over a probability vector indexed by token id, ordered by
// probability (descending, lower id first on ties). Zero-probability entries
// never enter a set.
std::vector<TokenId> top_k_set(std::span<const double> probs, std::size_t k);
// Smallest prefix whose cumulative mass reaches p.
std::vector<TokenId> nucleus_set(std::span<const double> probs, double p);

// Whether a decoder may emit this id (PAD and BOS are never emitted).
inline bool is_emittable(TokenId t) { return t != kPad && t != kBos; }

}  // namespace seqlab

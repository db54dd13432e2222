#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqlab/numerics/tape.hpp"
#include "seqlab/numerics/tensor.hpp"
#include "seqlab/types.hpp"

namespace seqlab {

// Sequence score used for decoding, sequence-level training and ranking.
//   kLogProbAvg: mean over steps of log P(y_i | x, y_<i)
//   kLogitsAvg:  mean over steps of the raw logit u_{y_i}
// Both average over |y| with the terminal EOS counted.
enum class ScoreFn { kLogProbAvg, kLogitsAvg };

std::string to_string(ScoreFn fn);
// Accepts "logprob_avg" and "logits_avg".
ScoreFn parse_score_fn(std::string_view name);

// Length normalisation shared by every score path: sum(values) * (1 / n).
double average(std::span<const double> values);

struct ScoredSequence {
  TokenSeq tokens;
  double score = 0.0;  // == average(per_step_values)
  std::vector<double> per_step_values;
};

struct LossBreakdown {
  double l_token = 0.0;
  double l_seq = 0.0;
  double total = 0.0;  // alpha * l_token + beta * l_seq
  double alpha = 1.0;
  double beta = 5.0;
};

inline constexpr double kDefaultAlpha = 1.0;
inline constexpr double kDefaultBeta = 5.0;

// --- Differentiable forms; `logits` is |y| × V from teacher forcing. ---

// -(1/|y|) Σ log P(y_i | x, y_<i)
Tensor token_ce(Tape& tape, const Tensor& logits, std::span<const TokenId> y);
Tensor score_logprob_avg(Tape& tape, const Tensor& logits, std::span<const TokenId> y);
Tensor score_logits_avg(Tape& tape, const Tensor& logits, std::span<const TokenId> y);
Tensor sequence_score(Tape& tape, ScoreFn fn, const Tensor& logits, std::span<const TokenId> y);

// -log[ exp(s_gt) / (exp(s_gt) + Σ_h exp(s_h)) ], a (k+1)-way classification
// over the groundtruth and k hypotheses. Throws ContractError when empty.
Tensor seq_ce_approx(Tape& tape, const Tensor& gt_score, std::span<const Tensor> hyp_scores);
Tensor combined_loss(Tape& tape, const Tensor& l_token, const Tensor& l_seq, double alpha,
                     double beta);

// --- Value forms. ---

std::vector<double> per_step_values(ScoreFn fn, const Tensor& logits, std::span<const TokenId> y);
// Per-token values of one decoding step: log_softmax(logits) or the logits.
std::vector<double> next_token_values(ScoreFn fn, std::vector<double> logits);
ScoredSequence score_sequence(ScoreFn fn, const Tensor& logits, std::span<const TokenId> y);
double seq_ce_approx(double gt_score, std::span<const double> hyp_scores);
LossBreakdown combined_loss(double l_token, double l_seq, double alpha = kDefaultAlpha,
                            double beta = kDefaultBeta);

// Hypotheses with the groundtruth removed by exact token equality, so the
// groundtruth is never counted twice in the partition estimate.
std::vector<TokenSeq> without_groundtruth(std::span<const TokenSeq> hypotheses,
                                          std::span<const TokenId> groundtruth);

}  // namespace seqlab

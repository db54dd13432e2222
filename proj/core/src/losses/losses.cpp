#include "seqlab/losses/losses.hpp"

#include <algorithm>
#include <cmath>

#include "seqlab/error.hpp"
#include "seqlab/numerics/ops.hpp"

namespace seqlab {
namespace {

void check_alignment(const Tensor& logits, std::span<const TokenId> y) {
  if (logits.rank() != 2) {
    throw DimensionError("logits must be |y| x V, got " + to_string(logits.shape()));
  }
  if (y.empty()) throw ValidationError("target sequence is empty");
  if (logits.rows() != y.size()) {
    throw ValidationError("target has " + std::to_string(y.size()) + " tokens but logits have " +
                          std::to_string(logits.rows()) + " rows");
  }
}

}  // namespace

std::string to_string(ScoreFn fn) {
  return fn == ScoreFn::kLogProbAvg ? "logprob_avg" : "logits_avg";
}

ScoreFn parse_score_fn(std::string_view name) {
  if (name == "logprob_avg") return ScoreFn::kLogProbAvg;
  if (name == "logits_avg") return ScoreFn::kLogitsAvg;
  throw ValidationError("unknown score function '" + std::string(name) +
                        "' (expected logprob_avg or logits_avg)");
}

double average(std::span<const double> values) {
  if (values.empty()) throw ContractError("average of an empty sequence");
  double total = 0.0;
  for (double v : values) total += v;
  return total * (1.0 / static_cast<double>(values.size()));
}

Tensor score_logprob_avg(Tape& tape, const Tensor& logits, std::span<const TokenId> y) {
  check_alignment(logits, y);
  return mean(tape, pick(tape, log_softmax(tape, logits, -1), y));
}

Tensor token_ce(Tape& tape, const Tensor& logits, std::span<const TokenId> y) {
  return scale(tape, score_logprob_avg(tape, logits, y), -1.0);
}

Tensor score_logits_avg(Tape& tape, const Tensor& logits, std::span<const TokenId> y) {
  check_alignment(logits, y);
  return mean(tape, pick(tape, logits, y));
}

Tensor sequence_score(Tape& tape, ScoreFn fn, const Tensor& logits, std::span<const TokenId> y) {
  return fn == ScoreFn::kLogProbAvg ? score_logprob_avg(tape, logits, y)
                                    : score_logits_avg(tape, logits, y);
}

Tensor seq_ce_approx(Tape& tape, const Tensor& gt_score, std::span<const Tensor> hyp_scores) {
  if (hyp_scores.empty()) {
    throw ContractError("sequence loss needs at least one hypothesis besides the groundtruth");
  }
  std::vector<Tensor> all;
  all.reserve(hyp_scores.size() + 1);
  all.push_back(gt_score);
  all.insert(all.end(), hyp_scores.begin(), hyp_scores.end());
  return sub(tape, logsumexp(tape, stack(tape, all)), reshape(tape, gt_score, {}));
}

Tensor combined_loss(Tape& tape, const Tensor& l_token, const Tensor& l_seq, double alpha,
                     double beta) {
  return add(tape, scale(tape, reshape(tape, l_token, {}), alpha),
             scale(tape, reshape(tape, l_seq, {}), beta));
}

std::vector<double> per_step_values(ScoreFn fn, const Tensor& logits, std::span<const TokenId> y) {
  check_alignment(logits, y);
  Tape tape(Mode::kEval);
  tape.set_recording(false);
  const Tensor source = fn == ScoreFn::kLogProbAvg ? log_softmax(tape, logits, -1) : logits;
  const Tensor picked = pick(tape, source, y);
  return {picked.data().begin(), picked.data().end()};
}

std::vector<double> next_token_values(ScoreFn fn, std::vector<double> logits) {
  if (fn == ScoreFn::kLogitsAvg) return logits;
  Tape tape(Mode::kEval);
  tape.set_recording(false);
  const std::size_t v = logits.size();
  const Tensor lp = log_softmax(tape, Tensor({v}, std::move(logits)), -1);
  return {lp.data().begin(), lp.data().end()};
}

ScoredSequence score_sequence(ScoreFn fn, const Tensor& logits, std::span<const TokenId> y) {
  ScoredSequence s;
  s.tokens.assign(y.begin(), y.end());
  s.per_step_values = per_step_values(fn, logits, y);
  s.score = average(s.per_step_values);
  return s;
}

double seq_ce_approx(double gt_score, std::span<const double> hyp_scores) {
  if (hyp_scores.empty()) {
    throw ContractError("sequence loss needs at least one hypothesis besides the groundtruth");
  }
  double mx = gt_score;
  for (double s : hyp_scores) mx = std::max(mx, s);
  double z = std::exp(gt_score - mx);
  for (double s : hyp_scores) z += std::exp(s - mx);
  return mx + std::log(z) - gt_score;
}

LossBreakdown combined_loss(double l_token, double l_seq, double alpha, double beta) {
  if (!std::isfinite(l_token) || !std::isfinite(l_seq) || !std::isfinite(alpha) ||
      !std::isfinite(beta)) {
    throw NumericError("combined_loss: non-finite input");
  }
  return LossBreakdown{l_token, l_seq, alpha * l_token + beta * l_seq, alpha, beta};
}

std::vector<TokenSeq> without_groundtruth(std::span<const TokenSeq> hypotheses,
                                          std::span<const TokenId> groundtruth) {
  std::vector<TokenSeq> kept;
  for (const TokenSeq& h : hypotheses) {
    if (!std::equal(h.begin(), h.end(), groundtruth.begin(), groundtruth.end())) kept.push_back(h);
  }
  return kept;
}

}  // namespace seqlab

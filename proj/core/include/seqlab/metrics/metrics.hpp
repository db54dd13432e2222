#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "seqlab/datagen/grammar.hpp"
#include "seqlab/losses/losses.hpp"
#include "seqlab/model/step_model.hpp"
#include "seqlab/types.hpp"

namespace seqlab {

// Summed log-likelihood of one text and the number of tokens it covers.
struct LogLikelihood {
  double logprob = 0.0;
  std::size_t n_tokens = 0;
};

// exp(-Σ logprob / Σ n_tokens). Throws ValidationError when empty or when no
// tokens are covered.
double perplexity(std::span<const LogLikelihood> items);

// Token-weighted perplexity of the model on the responses, EOS included.
double perplexity(const StepModel& model, std::span<const DialoguePair> pairs);
// Same weighting for the oracle; `conditional` scores P(y | x) instead of P(y).
double perplexity(const OracleLM& oracle, std::span<const DialoguePair> pairs,
                  bool conditional = false);

// Corpus BLEU with uniform 1..4-gram weights and brevity penalty. A zero
// matched count for some order is replaced by (0 + 1) / (total + 1).
double bleu4(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references);

// Distinct n-grams over total n-grams across all texts.
double distinct_n(std::span<const TokenSeq> texts, std::size_t n);

// Ranks are 0-indexed: the number of distractors scoring at least as high as
// the groundtruth, so ties go against the groundtruth and a random scorer
// averages n_distractors / 2.
struct RankReport {
  std::vector<std::size_t> ranks;
  double mean_rank = 0.0;
  std::size_t n_distractors = 0;
  ScoreFn score_fn = ScoreFn::kLogProbAvg;
};

std::size_t rank_of(double groundtruth_score, std::span<const double> distractor_scores);
RankReport make_rank_report(std::vector<std::size_t> ranks, std::size_t n_distractors,
                            ScoreFn score_fn);

// Scores every groundtruth response against the same distractors. Pairs
// whose response is itself one of the distractors are skipped. Distractor
// scores are computed once per distinct context.
RankReport mean_rank(const StepModel& model, ScoreFn score_fn, std::span<const DialoguePair> pairs,
                     std::span<const TokenSeq> distractors);

struct HistogramSeries {
  std::string name;
  std::vector<double> values;
};

// Shared log-spaced bins over the pooled finite values. Non-finite values
// are counted in `overflow` rather than in any bin.
struct Histogram {
  std::vector<double> edges;  // n_bins + 1, increasing
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> counts;  // per series, per bin
  std::vector<std::size_t> overflow;             // per series

  std::string to_csv() const;
};

inline constexpr std::size_t kDefaultHistogramBins = 30;

Histogram ppl_histogram(std::span<const HistogramSeries> series,
                        std::size_t n_bins = kDefaultHistogramBins);

double median(std::vector<double> values);

// One JSON object per line: {"metric", "value", "config_hash", "seed"}.
std::string metric_record(const std::string& metric, double value, const std::string& config_hash,
                          std::uint64_t seed);

}  // namespace seqlab

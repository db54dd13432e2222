#include "seqlab/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "seqlab/error.hpp"
#include "seqlab/util/kv_config.hpp"

namespace seqlab {
namespace {

using NGram = std::vector<TokenId>;

std::map<NGram, std::size_t> count_ngrams(const TokenSeq& text, std::size_t n) {
  std::map<NGram, std::size_t> counts;
  if (text.size() < n) return counts;
  for (std::size_t i = 0; i + n <= text.size(); ++i) {
    ++counts[NGram(text.begin() + static_cast<std::ptrdiff_t>(i),
                   text.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

// Groups pair indices by context so each context is encoded once.
std::map<TokenSeq, std::vector<std::size_t>> by_context(std::span<const DialoguePair> pairs) {
  std::map<TokenSeq, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pairs.size(); ++i) groups[pairs[i].context].push_back(i);
  return groups;
}

}  // namespace

double perplexity(std::span<const LogLikelihood> items) {
  if (items.empty()) throw ValidationError("perplexity of an empty corpus");
  double logprob = 0.0;
  std::size_t tokens = 0;
  for (const auto& item : items) {
    logprob += item.logprob;
    tokens += item.n_tokens;
  }
  if (tokens == 0) throw ValidationError("perplexity over zero tokens");
  return std::exp(-logprob / static_cast<double>(tokens));
}

double perplexity(const StepModel& model, std::span<const DialoguePair> pairs) {
  if (pairs.empty()) throw ValidationError("perplexity of an empty corpus");
  std::vector<LogLikelihood> items(pairs.size());
  for (const auto& [context, indices] : by_context(pairs)) {
    std::vector<TokenSeq> targets;
    for (const std::size_t i : indices) targets.push_back(with_eos(pairs[i].response));
    const std::vector<Tensor> logits = model.teacher_forced_logits(context, targets);
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const auto values = per_step_values(ScoreFn::kLogProbAvg, logits[j], targets[j]);
      double sum = 0.0;
      for (const double v : values) sum += v;
      items[indices[j]] = LogLikelihood{sum, targets[j].size()};
    }
  }
  return perplexity(items);
}

double perplexity(const OracleLM& oracle, std::span<const DialoguePair> pairs, bool conditional) {
  std::vector<LogLikelihood> items;
  for (const auto& p : pairs) {
    const double lp = conditional ? oracle.conditional_logprob(p.context, p.response)
                                  : oracle.logprob(p.response);
    items.push_back(LogLikelihood{lp, p.response.size() + 1});
  }
  return perplexity(items);
}

double bleu4(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references) {
  if (hypotheses.size() != references.size()) {
    throw DimensionError("bleu4: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                         std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw ValidationError("bleu4 of an empty corpus");
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  double log_precision = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::size_t matched = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
      const auto hyp = count_ngrams(hypotheses[i], n);
      const auto ref = count_ngrams(references[i], n);
      for (const auto& [gram, count] : hyp) {
        total += count;
        const auto it = ref.find(gram);
        if (it != ref.end()) matched += std::min(count, it->second);
      }
    }
    const double p = matched == 0
                         ? 1.0 / static_cast<double>(total + 1)
                         : static_cast<double>(matched) / static_cast<double>(total);
    log_precision += 0.25 * std::log(p);
  }
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += hypotheses[i].size();
    ref_len += references[i].size();
  }
  if (hyp_len == 0) return 0.0;
  const double brevity =
      hyp_len > ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return brevity * std::exp(log_precision);
}

double distinct_n(std::span<const TokenSeq> texts, std::size_t n) {
  if (n == 0) throw ValidationError("distinct_n needs n >= 1");
  std::set<NGram> distinct;
  std::size_t total = 0;
  for (const auto& text : texts) {
    for (const auto& [gram, count] : count_ngrams(text, n)) {
      distinct.insert(gram);
      total += count;
    }
  }
  if (total == 0) {
    throw ValidationError("distinct_n: no text has " + std::to_string(n) + " or more tokens");
  }
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

std::size_t rank_of(double groundtruth_score, std::span<const double> distractor_scores) {
  return static_cast<std::size_t>(
      std::count_if(distractor_scores.begin(), distractor_scores.end(),
                    [&](double d) { return !(d < groundtruth_score); }));
}

RankReport make_rank_report(std::vector<std::size_t> ranks, std::size_t n_distractors,
                            ScoreFn score_fn) {
  if (ranks.empty()) throw ValidationError("rank report over zero examples");
  RankReport report;
  double sum = 0.0;
  for (const std::size_t r : ranks) {
    if (r > n_distractors) throw ContractError("rank exceeds the number of distractors");
    sum += static_cast<double>(r);
  }
  report.mean_rank = sum / static_cast<double>(ranks.size());
  report.ranks = std::move(ranks);
  report.n_distractors = n_distractors;
  report.score_fn = score_fn;
  return report;
}

RankReport mean_rank(const StepModel& model, ScoreFn score_fn, std::span<const DialoguePair> pairs,
                     std::span<const TokenSeq> distractors) {
  if (distractors.empty()) throw ValidationError("mean_rank needs at least one distractor");
  const std::set<TokenSeq> distractor_set(distractors.begin(), distractors.end());
  std::vector<TokenSeq> distractor_targets;
  for (const auto& d : distractors) distractor_targets.push_back(with_eos(d));

  std::vector<std::size_t> ranks;
  for (const auto& [context, indices] : by_context(pairs)) {
    std::vector<TokenSeq> targets = distractor_targets;
    std::vector<std::size_t> kept;
    for (const std::size_t i : indices) {
      if (distractor_set.contains(pairs[i].response)) continue;
      kept.push_back(i);
      targets.push_back(with_eos(pairs[i].response));
    }
    if (kept.empty()) continue;
    const std::vector<Tensor> logits = model.teacher_forced_logits(context, targets);
    std::vector<double> scores;
    for (std::size_t j = 0; j < targets.size(); ++j) {
      scores.push_back(score_sequence(score_fn, logits[j], targets[j]).score);
    }
    const std::span<const double> distractor_scores(scores.data(), distractors.size());
    for (std::size_t k = 0; k < kept.size(); ++k) {
      ranks.push_back(rank_of(scores[distractors.size() + k], distractor_scores));
    }
  }
  return make_rank_report(std::move(ranks), distractors.size(), score_fn);
}

Histogram ppl_histogram(std::span<const HistogramSeries> series, std::size_t n_bins) {
  if (series.empty()) throw ValidationError("histogram needs at least one series");
  if (n_bins == 0) throw ValidationError("histogram needs at least one bin");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : series) {
    if (s.values.empty()) throw ValidationError("histogram series '" + s.name + "' is empty");
    for (const double v : s.values) {
      if (!std::isfinite(v)) continue;
      if (!(v > 0.0)) throw ValidationError("histogram values must be positive");
      lo = std::min(lo, std::log(v));
      hi = std::max(hi, std::log(v));
    }
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  } else if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  for (std::size_t b = 0; b <= n_bins; ++b) {
    const double t = static_cast<double>(b) / static_cast<double>(n_bins);
    h.edges.push_back(std::exp(lo + (hi - lo) * t));
  }
  for (const auto& s : series) {
    h.names.push_back(s.name);
    std::vector<std::size_t> counts(n_bins, 0);
    std::size_t overflow = 0;
    for (const double v : s.values) {
      if (!std::isfinite(v)) {
        ++overflow;
        continue;
      }
      const double pos = (std::log(v) - lo) / (hi - lo) * static_cast<double>(n_bins);
      const auto bin = std::min(static_cast<std::size_t>(std::max(pos, 0.0)), n_bins - 1);
      ++counts[bin];
    }
    h.counts.push_back(std::move(counts));
    h.overflow.push_back(overflow);
  }
  return h;
}

std::string Histogram::to_csv() const {
  std::string out = "bin_low,bin_high";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    out += format_double(edges[b]) + "," + format_double(edges[b + 1]);
    for (const auto& c : counts) out += "," + std::to_string(c[b]);
    out += "\n";
  }
  out += format_double(edges.back()) + ",inf";
  for (const std::size_t o : overflow) out += "," + std::to_string(o);
  out += "\n";
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 == 1 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

std::string metric_record(const std::string& metric, double value, const std::string& config_hash,
                          std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["metric"] = metric;
  j["value"] = value;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  return j.dump();
}

}  // namespace seqlab

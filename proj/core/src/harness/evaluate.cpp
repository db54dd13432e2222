#include "seqlab/harness/evaluate.hpp"

#include <map>

#include "seqlab/error.hpp"

namespace seqlab {

std::vector<TokenSeq> decode_top1(const StepModel& model, std::span<const DialoguePair> pairs,
                                  const BeamConfig& beam) {
  std::map<TokenSeq, TokenSeq> cache;
  std::vector<TokenSeq> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    auto it = cache.find(p.context);
    if (it == cache.end()) {
      const auto hyps = beam.n_groups > 1 ? diverse_beam_search(model, p.context, beam)
                                          : beam_search(model, p.context, beam);
      it = cache.emplace(p.context, hyps.empty() ? TokenSeq{} : strip_eos(hyps.front().tokens))
               .first;
    }
    out.push_back(it->second);
  }
  return out;
}

EvalReport evaluate(const StepModel& model, std::span<const DialoguePair> pairs,
                    std::span<const TokenSeq> distractors, const EvalConfig& config) {
  if (pairs.empty()) throw ValidationError("evaluation corpus is empty");
  EvalReport r;
  r.perplexity = perplexity(model, pairs);
  r.outputs = decode_top1(model, pairs, config.beam);
  std::vector<TokenSeq> references;
  for (const auto& p : pairs) references.push_back(p.response);
  r.bleu4 = bleu4(r.outputs, references);
  // Outputs too short to contain any n-gram have no diversity to measure.
  auto distinct_or_zero = [&](std::size_t n) {
    try {
      return distinct_n(r.outputs, n);
    } catch (const ValidationError&) {
      return 0.0;
    }
  };
  r.distinct1 = distinct_or_zero(1);
  r.distinct2 = distinct_or_zero(2);
  r.distinct3 = distinct_or_zero(3);
  r.rank = mean_rank(model, config.beam.score_fn, pairs, distractors);
  return r;
}

std::string metric_records(const EvalReport& report, const std::string& config_hash,
                           std::uint64_t seed) {
  std::string out;
  const std::pair<const char*, double> rows[] = {
      {"perplexity", report.perplexity}, {"bleu4", report.bleu4},
      {"distinct_1", report.distinct1},  {"distinct_2", report.distinct2},
      {"distinct_3", report.distinct3},  {"mean_rank", report.rank.mean_rank},
  };
  for (const auto& [name, value] : rows) out += metric_record(name, value, config_hash, seed) + "\n";
  return out;
}

}  // namespace seqlab

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "acceptance.hpp"
#include "seqlab/datagen/grammar.hpp"
#include "seqlab/harness/evaluate.hpp"
#include "seqlab/harness/train.hpp"
#include "seqlab/metrics/metrics.hpp"
#include "seqlab/util/kv_config.hpp"

namespace seqlab::acceptance {
namespace {

namespace fs = std::filesystem;

// The two-stage recipe at desk scale. Every arm fine-tunes from the same
// MLE checkpoint for the same number of steps; the MLE arm keeps training
// with the token loss only.
struct Recipe {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::size_t n_pairs = 4000;
  std::size_t d_model = 48;
  std::size_t n_layers = 2;
  std::size_t model_max_len = 16;
  std::size_t batch_size = 16;
  std::size_t pretrain_steps = 6000;
  double pretrain_lr = 1e-3;
  std::size_t pretrain_warmup = 100;
  std::size_t finetune_steps = 500;
  double finetune_lr = 3e-4;
  HypothesisDecoder hypotheses = HypothesisDecoder::kDiverseBeam;
  std::size_t beam_size = 6;
  std::size_t decode_max_len = 11;
  std::size_t n_distractors = 50;
  double budget_seconds = 30.0 * 60.0;
};

struct ArmResult {
  std::string name;
  double ppl = 0.0;
  double distinct2 = 0.0;
  double mean_rank = 0.0;
  double median_output_ppl = 0.0;
  std::vector<double> output_ppl;
};

struct SeedResult {
  std::uint64_t seed = 0;
  ArmResult mle, logprob, logits;
  double median_human_ppl = 0.0;
  fs::path histogram;
};

TrainConfig base_config(const Recipe& r, std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.model.d_model = r.d_model;
  c.model.d_ff = 2 * r.d_model;
  c.model.n_heads = 4;
  c.model.n_enc_layers = r.n_layers;
  c.model.n_dec_layers = r.n_layers;
  c.model.max_len = r.model_max_len;
  c.batch_size = r.batch_size;
  c.max_steps = r.pretrain_steps;
  c.eval_every = r.pretrain_steps;
  c.learning_rate = r.pretrain_lr;
  c.warmup_steps = r.pretrain_warmup;
  c.beam.beam_size = r.beam_size;
  c.beam.max_len = r.decode_max_len;
  return c;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

SeedResult run_seed(const Recipe& r, std::uint64_t seed, const fs::path& work_dir,
                    std::ostream& log) {
  const GrammarSpec spec;
  const Grammar grammar(spec);
  const OracleLM oracle(grammar);
  const Corpus corpus = generate_corpus(spec, r.n_pairs, seed);
  const std::vector<TokenSeq> distractors = select_distractors(oracle, r.n_distractors);
  const fs::path runs = work_dir / "runs";

  const TrainConfig pre = base_config(r, seed);
  const TrainResult pretrained = train(pre, corpus.train, corpus.valid, runs);

  TrainConfig fine = pre;
  fine.init_checkpoint = pretrained.files.checkpoint().string();
  fine.max_steps = r.finetune_steps;
  fine.eval_every = r.finetune_steps;
  fine.learning_rate = r.finetune_lr;
  fine.warmup_steps = 0;
  fine.hypothesis_decoder = r.hypotheses;
  fine.beam.n_groups = r.hypotheses == HypothesisDecoder::kDiverseBeam ? 3 : 1;

  auto assess = [&](const std::string& name, const StepModel& model, ScoreFn fn) {
    EvalConfig ec;
    ec.beam.beam_size = r.beam_size;
    ec.beam.max_len = r.decode_max_len;
    ec.beam.score_fn = fn;
    const EvalReport report = evaluate(model, corpus.valid, distractors, ec);
    ArmResult a{name, report.perplexity, report.distinct2, report.rank.mean_rank, 0.0, {}};
    for (const TokenSeq& y : report.outputs) a.output_ppl.push_back(oracle.perplexity(y));
    a.median_output_ppl = median(a.output_ppl);
    log << "  seed " << seed << " " << name << ": ppl " << fmt("%.4f", a.ppl) << ", distinct-2 "
        << fmt("%.4f", a.distinct2) << ", mean rank " << fmt("%.3f", a.mean_rank)
        << ", median oracle ppl of outputs " << fmt("%.3f", a.median_output_ppl) << "\n";
    log.flush();
    return a;
  };

  SeedResult s;
  s.seed = seed;
  s.mle = assess("mle", train(fine, corpus.train, corpus.valid, runs).model, ScoreFn::kLogProbAvg);
  for (ScoreFn fn : {ScoreFn::kLogProbAvg, ScoreFn::kLogitsAvg}) {
    TrainConfig c = fine;
    c.stage = Stage::kCombined;
    c.score_fn = fn;
    const TrainResult trained = train(c, corpus.train, corpus.valid, runs);
    (fn == ScoreFn::kLogProbAvg ? s.logprob : s.logits) =
        assess(to_string(fn), trained.model, fn);
  }

  HistogramSeries human{"human", {}};
  for (const auto& p : corpus.valid) human.values.push_back(oracle.perplexity(p.response));
  s.median_human_ppl = median(human.values);
  const std::vector<HistogramSeries> series = {
      human, {"mle", s.mle.output_ppl}, {"logprob_avg", s.logprob.output_ppl},
      {"logits_avg", s.logits.output_ppl}};
  s.histogram = work_dir / ("ppl_hist_seed" + std::to_string(seed) + ".csv");
  write_file_atomic(s.histogram, ppl_histogram(series).to_csv());
  log << "  seed " << seed << " human responses: median oracle ppl "
      << fmt("%.3f", s.median_human_ppl) << "; histogram " << s.histogram.string() << "\n";
  return s;
}

std::string per_seed(const std::vector<SeedResult>& results, auto&& holds) {
  std::string out;
  for (const SeedResult& s : results) {
    out += (out.empty() ? "" : " ") + std::string("s") + std::to_string(s.seed) + "=" +
           (holds(s) ? "yes" : "no");
  }
  return out;
}

}  // namespace

std::vector<Outcome> directional_reproduction(const fs::path& work_dir, std::ostream& log) {
  const Recipe recipe;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<SeedResult> results;
  for (std::uint64_t seed : recipe.seeds) results.push_back(run_seed(recipe, seed, work_dir, log));
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  auto count = [&](auto&& holds) {
    std::size_t n = 0;
    for (const SeedResult& s : results) n += holds(s) ? 1 : 0;
    return n;
  };
  const std::size_t majority = recipe.seeds.size() / 2 + 1;

  auto distinct_order = [](const SeedResult& s) {
    return s.logits.distinct2 > s.logprob.distinct2 && s.logprob.distinct2 > s.mle.distinct2;
  };
  auto ppl_order = [](const SeedResult& s) {
    return s.mle.ppl <= s.logits.ppl && s.logits.ppl <= s.logprob.ppl;
  };
  auto rank_order = [](const SeedResult& s) { return s.logits.mean_rank < s.mle.mean_rank; };
  auto low_ppl_bias = [](const SeedResult& s) {
    return s.mle.median_output_ppl < s.median_human_ppl && fs::exists(s.histogram);
  };

  const bool within_budget = elapsed < recipe.budget_seconds;
  Outcome six{6,
              count(distinct_order) >= majority && count(ppl_order) >= majority && within_budget,
              ""};
  six.detail = "(a) distinct-2 logits > logprob > mle: " + per_seed(results, distinct_order) +
               "; (b) ppl mle <= logits <= logprob: " + per_seed(results, ppl_order) + "; " +
               fmt("%.0fs", elapsed) + " of " + fmt("%.0fs", recipe.budget_seconds) + " budget";
  Outcome seven{7, count(rank_order) >= majority, ""};
  seven.detail = "mean rank logits < mle: " + per_seed(results, rank_order);
  for (const SeedResult& s : results) {
    seven.detail += "; s" + std::to_string(s.seed) + " " + fmt("%.2f", s.logits.mean_rank) +
                    " vs " + fmt("%.2f", s.mle.mean_rank);
  }
  Outcome eight{8, count(low_ppl_bias) == results.size(), ""};
  eight.detail = "median oracle ppl mle outputs < human: " + per_seed(results, low_ppl_bias);
  for (const SeedResult& s : results) {
    eight.detail += "; s" + std::to_string(s.seed) + " " + fmt("%.3f", s.mle.median_output_ppl) +
                    " vs " + fmt("%.3f", s.median_human_ppl);
  }
  eight.detail += "; histograms for mle, logprob_avg, logits_avg in " + work_dir.string();
  return {six, seven, eight};
}

}  // namespace seqlab::acceptance

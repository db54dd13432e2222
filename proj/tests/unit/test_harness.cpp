#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "seqlab/datagen/grammar.hpp"
#include "seqlab/error.hpp"
#include "seqlab/harness/evaluate.hpp"
#include "seqlab/harness/train.hpp"
#include "seqlab/model/checkpoint.hpp"
#include "test_support.hpp"

namespace seqlab {
namespace {

GrammarSpec tiny_spec() {
  GrammarSpec s;
  s.vocab_size = 24;
  s.n_context_classes = 4;
  s.specific_responses_per_class = 3;
  s.generic_pool_size = 3;
  s.min_response_len = 2;
  s.max_response_len = 4;
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.vocab_size = Vocab(tiny_spec().vocab_size).size();
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.n_enc_layers = 1;
  c.model.n_dec_layers = 1;
  c.model.d_ff = 32;
  c.model.max_len = 8;
  c.learning_rate = 3e-3;
  c.warmup_steps = 10;
  c.batch_size = 4;
  c.max_steps = 12;
  c.eval_every = 4;
  c.seed = 5;
  c.beam.beam_size = 3;
  c.beam.max_len = 6;
  return c;
}

std::vector<std::string> without_wall_clock(const std::vector<RunRecord>& log) {
  std::vector<std::string> out;
  for (const auto& r : log) out.push_back(r.to_json(false));
  return out;
}

void expect_same_parameters(const Parameters& a, const Parameters& b) {
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [path, t] : a) {
    const Tensor& u = b.at(path);
    EXPECT_TRUE(std::equal(t.data().begin(), t.data().end(), u.data().begin())) << path;
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.beta = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.stage = Stage::kCombined;
  EXPECT_THROW(c.validate(), ValidationError);
  c.init_checkpoint = "some.ckpt";
  EXPECT_NO_THROW(c.validate());
  c = tiny_config();
  c.beam.n_groups = 2;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(TrainConfig, ConfigRoundTripAndHash) {
  TrainConfig c = tiny_config();
  c.stage = Stage::kCombined;
  c.init_checkpoint = "a/b.ckpt";
  c.score_fn = ScoreFn::kLogitsAvg;
  c.hypothesis_decoder = HypothesisDecoder::kDiverseBeam;
  c.beam.beam_size = 6;
  c.beam.n_groups = 3;
  c.beam.diversity_strength = 0.25;
  c.model.dropout = 0.05;
  const TrainConfig back = TrainConfig::from_config(c.to_config());
  EXPECT_EQ(back.to_config().serialize(), c.to_config().serialize());
  EXPECT_EQ(back.hash(), c.hash());
  TrainConfig other = c;
  other.beta = 4.0;
  EXPECT_NE(other.hash(), c.hash());
  EXPECT_EQ(run_dir_name(c), hex64(c.hash()) + "-s5");

  KeyValueConfig unknown = c.to_config();
  unknown.set("betta", 3.0);
  EXPECT_THROW(TrainConfig::from_config(unknown), ValidationError);
  KeyValueConfig bad = c.to_config();
  bad.set("stage", std::string("pretrain"));
  EXPECT_THROW(TrainConfig::from_config(bad), ValidationError);
}

TEST(Schedule, WarmupIsExactlyLinear) {
  for (std::size_t s = 1; s <= 200; ++s) {
    EXPECT_EQ(scheduled_learning_rate(3e-4, 200, s), 3e-4 * (static_cast<double>(s) / 200.0));
  }
  EXPECT_EQ(scheduled_learning_rate(3e-4, 200, 201), 3e-4);
  EXPECT_EQ(scheduled_learning_rate(3e-4, 200, 5000), 3e-4);
  EXPECT_EQ(scheduled_learning_rate(3e-4, 0, 1), 3e-4);
}

Parameters params_with_grads(std::uint64_t seed) {
  Parameters p;
  Tensor a = testing::random_tensor({3, 4}, seed);
  Tensor b = testing::random_tensor({5}, seed + 100);
  p.add("a", a);
  p.add("b", b);
  Tape tape;
  const Tensor w = testing::random_tensor({3, 4}, seed + 7, -5.0, 5.0, false);
  tape.backward(add(tape, sum(tape, mul(tape, a, w)),
                    scale(tape, sum(tape, b), 3.0 * static_cast<double>(seed))));
  return p;
}

TEST(Clipping, PostClipNormBoundedAndPreNormReturned) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const double before = global_grad_norm(params_with_grads(seed));
    for (double max_norm : {0.5, 1.0, 1e6}) {
      const Parameters q = params_with_grads(seed);
      EXPECT_EQ(clip_grad_norm(q, max_norm), before);
      EXPECT_LE(global_grad_norm(q), max_norm + 1e-9);
      if (before <= max_norm) {
        EXPECT_EQ(global_grad_norm(q), before);
      }
    }
  }
}

TEST(Adam, FirstStepMovesBySignTimesRate) {
  Parameters p;
  Tensor w({3}, {1.0, -2.0, 0.5}, true);
  p.add("w", w);
  Adam adam(p);
  {
    Tape tape;
    tape.backward(sum(tape, mul(tape, w, Tensor({3}, {0.3, -4.0, 1e-3}))));
  }
  adam.step(p, 0.1);
  EXPECT_NEAR(w.data()[0], 1.0 - 0.1 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(w.data()[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w.data()[2], 0.5 - 0.1 * 1e-3 / (1e-3 + 1e-8), 1e-15);
  EXPECT_EQ(adam.steps_taken(), 1u);
}

TEST(Adam, RestoreRejectsMismatchedState) {
  Parameters p;
  p.add("w", Tensor({2}, {1.0, 2.0}, true));
  Adam adam(p);
  std::map<std::string, Tensor> m = {{"w", Tensor::zeros({3})}};
  std::map<std::string, Tensor> v = {{"w", Tensor::zeros({3})}};
  EXPECT_THROW(adam.restore(4, m, v), IoError);
}

TEST(RunLog, JsonRoundTripAndOrdering) {
  RunRecord r;
  r.step = 7;
  r.l_token = 1.25;
  r.l_seq = 0.5;
  r.total = 3.75;
  r.learning_rate = 1e-4;
  r.grad_norm = 0.3;
  r.wall_seconds = 12.5;
  const RunRecord back = RunRecord::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_FALSE(back.valid_ppl.has_value());
  EXPECT_EQ(nlohmann::json::parse(r.to_json(false)).count("wall_seconds"), 0u);
  EXPECT_THROW(RunRecord::from_json("{\"step\": 1}"), ValidationError);

  const auto dir = testing::scratch_dir("runlog");
  RunLog log(dir / "log.jsonl");
  log.append(r);
  RunRecord later = r;
  later.step = 8;
  later.valid_ppl = 3.5;
  log.append(later);
  EXPECT_THROW(log.append(r), ContractError);
  const auto read = RunLog::read(dir / "log.jsonl");
  ASSERT_EQ(read.size(), 2u);
  EXPECT_EQ(read[1].valid_ppl, 3.5);
  EXPECT_EQ(RunLog(dir / "log.jsonl", false).records().size(), 2u);
  EXPECT_THROW(RunLog::read(dir / "missing.jsonl"), IoError);
}

TEST(BatchIndices, EpochPermutationsArePure) {
  const std::size_t n = 10;
  std::vector<std::size_t> epoch;
  for (std::size_t step = 1; step <= 5; ++step) {
    const auto b = batch_indices(3, step, 2, n);
    EXPECT_EQ(b, batch_indices(3, step, 2, n));
    epoch.insert(epoch.end(), b.begin(), b.end());
  }
  std::vector<std::size_t> sorted = epoch;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  EXPECT_EQ(sorted, all);
  std::vector<std::size_t> next;
  for (std::size_t step = 6; step <= 10; ++step) {
    const auto b = batch_indices(3, step, 2, n);
    next.insert(next.end(), b.begin(), b.end());
  }
  EXPECT_NE(next, epoch);
  EXPECT_NE(batch_indices(4, 1, 10, n), batch_indices(3, 1, 10, n));
  EXPECT_THROW(batch_indices(3, 0, 2, n), ContractError);
}

TEST(Train, OverfitsThirtyTwoPairs) {
  const Corpus corpus = generate_corpus(tiny_spec(), 36, 1);
  ASSERT_EQ(corpus.train.size(), 33u);
  const std::vector<DialoguePair> pairs(corpus.train.begin(), corpus.train.begin() + 32);
  TrainConfig c = tiny_config();
  c.max_steps = 500;
  c.eval_every = 500;
  c.batch_size = 8;
  c.model.dropout = 0.0;
  const auto dir = testing::scratch_dir("overfit");
  const TrainResult r = train(c, pairs, pairs, dir);
  ASSERT_TRUE(r.log.back().valid_ppl.has_value());
  EXPECT_LT(*r.log.back().valid_ppl, 1.5);
  EXPECT_LT(perplexity(r.model, pairs), 1.5);
}

TEST(Train, WritesRunDirectory) {
  const Corpus corpus = generate_corpus(tiny_spec(), 60, 2);
  const TrainConfig c = tiny_config();
  const auto dir = testing::scratch_dir("rundir");
  const TrainResult r = train(c, corpus.train, corpus.valid, dir);
  EXPECT_EQ(r.files.dir, dir / run_dir_name(c));
  for (const auto& p : {r.files.config(), r.files.log(), r.files.checkpoint(),
                        r.files.trainer_state(), r.files.checkpoint_at(4), r.files.checkpoint_at(8),
                        r.files.checkpoint_at(12)}) {
    EXPECT_TRUE(std::filesystem::exists(p)) << p;
  }
  ASSERT_EQ(r.log.size(), 12u);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].step, i + 1);
    EXPECT_EQ(r.log[i].valid_ppl.has_value(), (i + 1) % 4 == 0);
    EXPECT_FALSE(r.log[i].l_seq.has_value());
    EXPECT_EQ(r.log[i].learning_rate, scheduled_learning_rate(c.learning_rate, 10, i + 1));
  }
  EXPECT_EQ(RunLog::read(r.files.log()).size(), 12u);
  EXPECT_EQ(TrainConfig::from_config(KeyValueConfig::load(r.files.config())).hash(), c.hash());
  const Checkpoint ck = read_checkpoint(r.files.checkpoint());
  expect_same_parameters(ck.parameters, r.model.parameters());
}

TEST(Train, SameSeedIsBitIdentical) {
  const Corpus corpus = generate_corpus(tiny_spec(), 60, 3);
  const TrainConfig c = tiny_config();
  const TrainResult a = train(c, corpus.train, corpus.valid, testing::scratch_dir("det_a"));
  const TrainResult b = train(c, corpus.train, corpus.valid, testing::scratch_dir("det_b"));
  EXPECT_EQ(without_wall_clock(a.log), without_wall_clock(b.log));
  expect_same_parameters(a.model.parameters(), b.model.parameters());
  TrainConfig other = c;
  other.seed = 6;
  const TrainResult d = train(other, corpus.train, corpus.valid, testing::scratch_dir("det_c"));
  EXPECT_NE(without_wall_clock(a.log), without_wall_clock(d.log));
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const Corpus corpus = generate_corpus(tiny_spec(), 60, 4);
  const TrainConfig c = tiny_config();
  const TrainResult full = train(c, corpus.train, corpus.valid, testing::scratch_dir("full"));
  const auto dir = testing::scratch_dir("resumed");
  TrainOptions first;
  first.stop_after = 8;
  const TrainResult part = train(c, corpus.train, corpus.valid, dir, first);
  EXPECT_EQ(part.log.size(), 8u);
  EXPECT_FALSE(std::filesystem::exists(part.files.checkpoint()));
  TrainOptions second;
  second.resume = true;
  const TrainResult rest = train(c, corpus.train, corpus.valid, dir, second);
  EXPECT_EQ(without_wall_clock(rest.log), without_wall_clock(full.log));
  expect_same_parameters(rest.model.parameters(), full.model.parameters());
}

TEST(Train, CombinedStageWithZeroBetaFollowsMle) {
  const Corpus corpus = generate_corpus(tiny_spec(), 60, 5);
  TrainConfig pre = tiny_config();
  pre.max_steps = 4;
  const auto dir = testing::scratch_dir("beta0");
  const TrainResult base = train(pre, corpus.train, corpus.valid, dir);

  TrainConfig mle = tiny_config();
  mle.init_checkpoint = base.files.checkpoint().string();
  mle.max_steps = 6;
  mle.eval_every = 6;
  TrainConfig combined = mle;
  combined.stage = Stage::kCombined;
  combined.beta = 0.0;
  const TrainResult a = train(mle, corpus.train, corpus.valid, dir);
  const TrainResult b = train(combined, corpus.train, corpus.valid, dir);
  expect_same_parameters(a.model.parameters(), b.model.parameters());
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_EQ(a.log[i].grad_norm, b.log[i].grad_norm);
  }
}

TEST(Train, CombinedStageRecordsSequenceLoss) {
  const Corpus corpus = generate_corpus(tiny_spec(), 60, 6);
  TrainConfig pre = tiny_config();
  pre.max_steps = 4;
  const auto dir = testing::scratch_dir("combined");
  const TrainResult base = train(pre, corpus.train, corpus.valid, dir);
  for (HypothesisDecoder dec : {HypothesisDecoder::kBeam, HypothesisDecoder::kDiverseBeam}) {
    for (ScoreFn fn : {ScoreFn::kLogProbAvg, ScoreFn::kLogitsAvg}) {
      TrainConfig c = tiny_config();
      c.stage = Stage::kCombined;
      c.init_checkpoint = base.files.checkpoint().string();
      c.max_steps = 3;
      c.score_fn = fn;
      c.hypothesis_decoder = dec;
      if (dec == HypothesisDecoder::kDiverseBeam) c.beam.n_groups = 3;
      const TrainResult r = train(c, corpus.train, corpus.valid, dir);
      for (const RunRecord& rec : r.log) {
        ASSERT_TRUE(rec.l_seq.has_value());
        EXPECT_GE(*rec.l_seq, 0.0);
        EXPECT_TRUE(std::isfinite(rec.total));
        EXPECT_GT(rec.total, rec.l_token);
      }
    }
  }
}

TEST(Train, DivergenceWritesDiagnosticCheckpoint) {
  const Corpus corpus = generate_corpus(tiny_spec(), 60, 7);
  TrainConfig c = tiny_config();
  c.learning_rate = 1e300;
  c.warmup_steps = 0;
  c.max_steps = 5;
  const auto dir = testing::scratch_dir("diverge");
  EXPECT_THROW(train(c, corpus.train, corpus.valid, dir), NumericError);
  EXPECT_TRUE(std::filesystem::exists(dir / run_dir_name(c) / "diverged.ckpt"));
}

TEST(Train, RejectsEmptyCorpusAndMissingCheckpoint) {
  const auto dir = testing::scratch_dir("train_errors");
  EXPECT_THROW(train(tiny_config(), {}, {}, dir), ValidationError);
  TrainConfig c = tiny_config();
  c.stage = Stage::kCombined;
  c.init_checkpoint = (dir / "nope.ckpt").string();
  const Corpus corpus = generate_corpus(tiny_spec(), 20, 1);
  EXPECT_THROW(train(c, corpus.train, corpus.valid, dir), IoError);
}

TEST(Evaluate, DeterministicAndConsistent) {
  const GrammarSpec spec = tiny_spec();
  const Grammar g(spec);
  const OracleLM oracle(g);
  const Corpus corpus = generate_corpus(spec, 80, 8);
  TrainConfig c = tiny_config();
  c.max_steps = 30;
  const TrainResult r = train(c, corpus.train, corpus.valid, testing::scratch_dir("eval"));
  const auto distractors = select_distractors(oracle, 10);
  EvalConfig ec;
  ec.beam.beam_size = 3;
  ec.beam.max_len = 6;
  const EvalReport a = evaluate(r.model, corpus.valid, distractors, ec);
  const EvalReport b = evaluate(r.model, corpus.valid, distractors, ec);
  EXPECT_EQ(metric_records(a, "abc", 5), metric_records(b, "abc", 5));
  EXPECT_EQ(a.outputs.size(), corpus.valid.size());
  EXPECT_EQ(a.outputs, decode_top1(r.model, corpus.valid, ec.beam));
  EXPECT_DOUBLE_EQ(a.perplexity, perplexity(r.model, corpus.valid));
  std::vector<TokenSeq> refs;
  for (const auto& p : corpus.valid) refs.push_back(p.response);
  EXPECT_DOUBLE_EQ(a.bleu4, bleu4(a.outputs, refs));
  for (std::size_t i = 0; i < corpus.valid.size(); ++i) {
    for (std::size_t j = 0; j < corpus.valid.size(); ++j) {
      if (corpus.valid[i].context == corpus.valid[j].context) {
        EXPECT_EQ(a.outputs[i], a.outputs[j]);
      }
    }
    EXPECT_EQ(std::count(a.outputs[i].begin(), a.outputs[i].end(), kEos), 0);
  }
  const std::string records = metric_records(a, "abc", 5);
  std::set<std::string> names;
  std::size_t start = 0;
  while (start < records.size()) {
    const auto nl = records.find('\n', start);
    const auto j = nlohmann::json::parse(records.substr(start, nl - start));
    names.insert(j["metric"].get<std::string>());
    EXPECT_EQ(j["config_hash"], "abc");
    EXPECT_EQ(j["seed"], 5);
    start = nl + 1;
  }
  EXPECT_EQ(names, (std::set<std::string>{"perplexity", "bleu4", "distinct_1", "distinct_2",
                                          "distinct_3", "mean_rank"}));
  EXPECT_THROW(evaluate(r.model, std::span<const DialoguePair>{}, distractors, ec),
               ValidationError);
}

}  // namespace
}  // namespace seqlab

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "acceptance.hpp"
#include "seqlab/decoding/decoders.hpp"
#include "seqlab/losses/losses.hpp"
#include "seqlab/metrics/metrics.hpp"
#include "seqlab/model/transformer.hpp"
#include "seqlab/numerics/ops.hpp"
#include "seqlab/oracle/oracle.hpp"
#include "test_support.hpp"

namespace seqlab::acceptance {
namespace {

using testing::gradient_check;
using testing::LossFn;
using testing::random_tensor;

constexpr double kPrimitiveTol = 1e-4;
constexpr double kEndToEndTol = 1e-3;
constexpr double kGradientBudgetSeconds = 60.0;
constexpr double kShiftTol = 1e-10;
constexpr double kExhaustiveTol = 1e-12;
constexpr double kPartitionBudgetSeconds = 120.0;
constexpr std::size_t kMicroModels = 24;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

Tensor weighted_sum(Tape& tape, const Tensor& out) {
  const Tensor w = random_tensor(out.shape(), 99, -1.0, 1.0, false);
  return sum(tape, mul(tape, out, w));
}

struct Primitive {
  const char* name;
  std::vector<Shape> shapes;
  LossFn loss;
  Mode mode = Mode::kEval;
};

std::vector<Primitive> primitives() {
  static const TokenId ids[] = {2, 0, 4, 2};
  auto ws = [](auto op) {
    return [op](Tape& t, const std::vector<Tensor>& in) { return weighted_sum(t, op(t, in)); };
  };
  using In = const std::vector<Tensor>&;
  return {
      {"matmul", {{3, 4}, {4, 2}}, ws([](Tape& t, In in) { return matmul(t, in[0], in[1]); })},
      {"matmul_nt", {{3, 4}, {5, 4}}, ws([](Tape& t, In in) { return matmul_nt(t, in[0], in[1]); })},
      {"transpose", {{3, 4}}, ws([](Tape& t, In in) { return transpose(t, in[0]); })},
      {"reshape", {{3, 4}}, ws([](Tape& t, In in) { return reshape(t, in[0], {2, 6}); })},
      {"add", {{3, 4}, {3, 4}}, ws([](Tape& t, In in) { return add(t, in[0], in[1]); })},
      {"sub", {{3, 4}, {3, 4}}, ws([](Tape& t, In in) { return sub(t, in[0], in[1]); })},
      {"mul", {{3, 4}, {3, 4}}, ws([](Tape& t, In in) { return mul(t, in[0], in[1]); })},
      {"scale", {{3, 4}}, ws([](Tape& t, In in) { return scale(t, in[0], -2.5); })},
      {"add_scalar", {{3, 4}},
       ws([](Tape& t, In in) { return mul(t, add_scalar(t, in[0], 0.7), in[0]); })},
      {"add_bias", {{3, 4}, {4}}, ws([](Tape& t, In in) { return add_bias(t, in[0], in[1]); })},
      {"sum", {{3, 4}},
       [](Tape& t, In in) {
         const Tensor s = sum(t, in[0]);
         return mul(t, s, s);
       }},
      {"mean", {{3, 4}},
       [](Tape& t, In in) {
         const Tensor m = mean(t, in[0]);
         return mul(t, m, m);
       }},
      {"embedding", {{5, 3}}, ws([](Tape& t, In in) { return embedding(t, in[0], ids); })},
      {"layer_norm", {{3, 6}, {6}, {6}},
       ws([](Tape& t, In in) { return layer_norm(t, in[0], in[1], in[2]); })},
      {"gelu", {{4, 4}}, ws([](Tape& t, In in) { return gelu(t, in[0]); })},
      {"dropout", {{4, 4}}, ws([](Tape& t, In in) { return dropout(t, in[0], 0.25); }),
       Mode::kTrain},
      {"softmax", {{3, 5}}, ws([](Tape& t, In in) { return softmax(t, in[0], -1); })},
      {"softmax_axis0", {{3, 5}}, ws([](Tape& t, In in) { return softmax(t, in[0], 0); })},
      {"log_softmax", {{3, 5}}, ws([](Tape& t, In in) { return log_softmax(t, in[0], -1); })},
      {"log_softmax_axis0", {{3, 5}}, ws([](Tape& t, In in) { return log_softmax(t, in[0], 0); })},
      {"causal_softmax", {{4, 4}}, ws([](Tape& t, In in) { return causal_softmax(t, in[0], 0); })},
      {"causal_softmax_offset", {{2, 5}},
       ws([](Tape& t, In in) { return causal_softmax(t, in[0], 3); })},
      {"pick", {{4, 5}}, ws([](Tape& t, In in) { return pick(t, in[0], ids); })},
      {"slice_cols", {{3, 6}}, ws([](Tape& t, In in) { return slice_cols(t, in[0], 2, 3); })},
      {"concat_cols", {{3, 2}, {3, 4}},
       ws([](Tape& t, In in) { return concat_cols(t, std::span<const Tensor>(in)); })},
      {"concat_rows", {{2, 3}, {4, 3}},
       ws([](Tape& t, In in) { return concat_rows(t, in[0], in[1]); })},
      {"stack", {{}, {}, {}}, ws([](Tape& t, In in) { return stack(t, std::span<const Tensor>(in)); })},
      {"logsumexp", {{3, 4}}, [](Tape& t, In in) { return logsumexp(t, in[0]); }},
  };
}

// Worst relative error of the combined loss on a micro encoder-decoder.
double combined_loss_error(ScoreFn fn, double dropout, std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = 9;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 2;
  c.n_dec_layers = 2;
  c.d_ff = 12;
  c.max_len = 6;
  c.dropout = dropout;
  const Transformer model(c, seed);
  std::vector<Tensor> leaves;
  for (const auto& [path, t] : model.parameters()) leaves.push_back(t);
  const TokenSeq x = {3, 5, 7};
  const TokenSeq gt = {4, 6, 2};
  const std::vector<TokenSeq> hyps = {{4, 2}, {8, 8, 3, 2}, {5, 2}};
  auto loss = [&](Tape& tape, const std::vector<Tensor>&) {
    const Tensor gt_logits = model.forward_teacher_forcing(tape, x, gt);
    std::vector<Tensor> scores;
    for (const TokenSeq& h : hyps) {
      scores.push_back(sequence_score(tape, fn, model.forward_teacher_forcing(tape, x, h), h));
    }
    const Tensor l_seq = seq_ce_approx(tape, sequence_score(tape, fn, gt_logits, gt), scores);
    return combined_loss(tape, token_ce(tape, gt_logits, gt), l_seq, kDefaultAlpha, kDefaultBeta);
  };
  const Mode mode = dropout > 0.0 ? Mode::kTrain : Mode::kEval;
  return gradient_check(loss, leaves, 1e-6, 1e-5, mode, seed + 11);
}

struct MicroInstance {
  RandomMicroModel model;
  EnumerationBudget budget;
};

std::vector<MicroInstance> micro_models() {
  std::vector<MicroInstance> out;
  for (std::size_t i = 0; i < kMicroModels; ++i) {
    const std::size_t vocab = 6 + i % 2;
    const std::size_t max_len = 3 + (i / 2) % 2;
    out.push_back({RandomMicroModel(vocab, max_len, 1000 + i, 1.0 + 0.25 * static_cast<double>(i % 5)),
                   EnumerationBudget{max_len, vocab - 2}});
  }
  return out;
}

const TokenSeq kMicroInput = {3};

bool bit_equal(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

bool bit_identical(const std::vector<Hypothesis>& a, const std::vector<Hypothesis>& b,
                   std::size_t n) {
  if (a.size() < n || b.size() < n) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].tokens != b[i].tokens || a[i].finished != b[i].finished ||
        !bit_equal(a[i].score, b[i].score) ||
        a[i].per_step_values.size() != b[i].per_step_values.size()) {
      return false;
    }
    for (std::size_t j = 0; j < a[i].per_step_values.size(); ++j) {
      if (!bit_equal(a[i].per_step_values[j], b[i].per_step_values[j])) return false;
    }
  }
  return true;
}

}  // namespace

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_primitive = 0.0;
  std::string worst_name;
  for (const Primitive& p : primitives()) {
    std::vector<Tensor> leaves;
    for (std::size_t i = 0; i < p.shapes.size(); ++i) {
      leaves.push_back(random_tensor(p.shapes[i], 100 + i));
    }
    const double err = gradient_check(p.loss, leaves, 1e-6, 1e-6, p.mode);
    if (err >= worst_primitive) {
      worst_primitive = err;
      worst_name = p.name;
    }
  }
  double worst_e2e = 0.0;
  for (ScoreFn fn : {ScoreFn::kLogProbAvg, ScoreFn::kLogitsAvg}) {
    worst_e2e = std::max(worst_e2e, combined_loss_error(fn, 0.0, 5));
    worst_e2e = std::max(worst_e2e, combined_loss_error(fn, 0.2, 6));
  }
  const double elapsed = seconds_since(t0);
  Outcome o{1, worst_primitive < kPrimitiveTol && worst_e2e < kEndToEndTol &&
                   elapsed < kGradientBudgetSeconds,
            ""};
  o.detail = "primitives max rel err " + fmt("%.2e", worst_primitive) + " (" + worst_name +
             "), combined loss " + fmt("%.2e", worst_e2e) + ", " + fmt("%.1fs", elapsed);
  return o;
}

Outcome shift_calibration() {
  double worst_ce = 0.0, worst_prob = 0.0, worst_logprob = 0.0, worst_shift = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Tensor logits = random_tensor({6, 9}, seed, -4.0, 4.0, false);
    std::mt19937_64 rng(seed);
    TokenSeq y(6);
    for (TokenId& t : y) t = static_cast<TokenId>(rng() % 9);
    for (double delta : {-7.5, 0.01, 17.3}) {
      Tape tape;
      const Tensor shifted = add_scalar(tape, logits, delta);
      worst_ce = std::max(worst_ce, std::abs(token_ce(tape, shifted, y).item() -
                                             token_ce(tape, logits, y).item()));
      const Tensor p0 = softmax(tape, logits);
      const Tensor p1 = softmax(tape, shifted);
      for (std::size_t i = 0; i < p0.size(); ++i) {
        worst_prob = std::max(worst_prob, std::abs(p0.data()[i] - p1.data()[i]));
      }
      worst_logprob = std::max(worst_logprob, std::abs(score_logprob_avg(tape, shifted, y).item() -
                                                       score_logprob_avg(tape, logits, y).item()));
      worst_shift = std::max(worst_shift, std::abs(score_logits_avg(tape, shifted, y).item() -
                                                    score_logits_avg(tape, logits, y).item() -
                                                    delta));
    }
  }
  Outcome o{2, worst_ce <= kShiftTol && worst_prob <= kShiftTol && worst_logprob <= kShiftTol &&
                   worst_shift <= kShiftTol,
            ""};
  o.detail = "max |dCE| " + fmt("%.1e", worst_ce) + ", max |dP| " + fmt("%.1e", worst_prob) +
             ", max |dlogprob_avg| " + fmt("%.1e", worst_logprob) +
             ", max |dlogits_avg - delta| " + fmt("%.1e", worst_shift);
  return o;
}

Outcome partition_bound() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t checks = 0, violations = 0;
  double worst_exhaustive = 0.0;
  std::mt19937_64 rng(2024);
  for (const MicroInstance& m : micro_models()) {
    for (ScoreFn fn : {ScoreFn::kLogProbAvg, ScoreFn::kLogitsAvg}) {
      const auto all = enumerate_scored(m.model, kMicroInput, fn, m.budget, true);
      std::vector<double> all_scores;
      for (const Hypothesis& h : all) all_scores.push_back(h.score);
      const double z = exact_partition(all_scores);
      const std::size_t gt_index = all.size() / 3;
      std::vector<double> rest;
      for (std::size_t i = 0; i < all.size(); ++i) {
        if (i != gt_index) rest.push_back(all_scores[i]);
      }
      const double exact_lseq = seq_ce_approx(all[gt_index].score, rest);

      // Beam sets of several widths plus random proper subsets.
      std::vector<std::vector<std::size_t>> subsets;
      for (std::size_t k : {1u, 2u, 3u, 6u}) {
        BeamConfig cfg;
        cfg.beam_size = k;
        cfg.score_fn = fn;
        std::vector<std::size_t> idx;
        for (const Hypothesis& h : beam_search(m.model, kMicroInput, cfg)) {
          const auto it = std::find_if(all.begin(), all.end(),
                                       [&](const Hypothesis& u) { return u.tokens == h.tokens; });
          if (it == all.end()) {
            ++violations;
            continue;
          }
          idx.push_back(static_cast<std::size_t>(it - all.begin()));
        }
        subsets.push_back(idx);
      }
      for (int r = 0; r < 4; ++r) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < all.size(); ++i) {
          if (rng() % 2 == 0) idx.push_back(i);
        }
        if (idx.size() == all.size()) idx.pop_back();
        if (!idx.empty()) subsets.push_back(idx);
      }
      for (const auto& idx : subsets) {
        std::vector<double> s;
        std::vector<double> hyp;
        for (std::size_t i : idx) {
          s.push_back(all_scores[i]);
          if (i != gt_index) hyp.push_back(all_scores[i]);
        }
        ++checks;
        if (idx.size() == all.size()) {
          if (std::abs(exact_partition(s) - z) > kExhaustiveTol) ++violations;
          continue;
        }
        if (!(exact_partition(s) < z)) ++violations;
        if (!(seq_ce_approx(all[gt_index].score, hyp) < exact_lseq)) ++violations;
      }
      ++checks;
      worst_exhaustive = std::max(worst_exhaustive, std::abs(exact_partition(all_scores) - z));
      worst_exhaustive =
          std::max(worst_exhaustive, std::abs(seq_ce_approx(all[gt_index].score, rest) - exact_lseq));
    }
  }
  const double elapsed = seconds_since(t0);
  Outcome o{3, violations == 0 && worst_exhaustive <= kExhaustiveTol &&
                   elapsed < kPartitionBudgetSeconds,
            ""};
  o.detail = std::to_string(kMicroModels) + " micro-models x 2 score fns, " +
             std::to_string(checks) + " subset checks, " + std::to_string(violations) +
             " violations, exhaustive gap " + fmt("%.1e", worst_exhaustive) + ", " +
             fmt("%.1fs", elapsed);
  return o;
}

Outcome decoding_optimality() {
  std::size_t argmax_mismatch = 0, group_mismatch = 0, zero_lambda_mismatch = 0, cases = 0;
  auto compare_groups = [&](const StepModel& model, const TokenSeq& x, ScoreFn fn) {
    for (std::size_t k : {2u, 4u, 6u}) {
      BeamConfig beam;
      beam.beam_size = k;
      beam.score_fn = fn;
      BeamConfig one_group = beam;
      one_group.n_groups = 1;
      one_group.diversity_strength = 3.0;
      const auto reference = beam_search(model, x, beam);
      if (!bit_identical(reference, diverse_beam_search(model, x, one_group),
                         reference.size()) ||
          diverse_beam_search(model, x, one_group).size() != reference.size()) {
        ++group_mismatch;
      }
      // λ = 0 leaves every group an independent beam of width k / G.
      BeamConfig zero = beam;
      zero.n_groups = 2;
      zero.diversity_strength = 0.0;
      BeamConfig narrow = beam;
      narrow.beam_size = k / 2;
      const auto per_group = beam_search(model, x, narrow);
      if (!bit_identical(per_group, diverse_beam_search(model, x, zero), per_group.size())) {
        ++zero_lambda_mismatch;
      }
    }
  };
  for (const MicroInstance& m : micro_models()) {
    for (ScoreFn fn : {ScoreFn::kLogProbAvg, ScoreFn::kLogitsAvg}) {
      const auto all = enumerate_scored(m.model, kMicroInput, fn, m.budget, true);
      const Hypothesis& best = exact_argmax(all);
      BeamConfig saturated;
      saturated.beam_size = all.size();
      saturated.score_fn = fn;
      const auto found = beam_search(m.model, kMicroInput, saturated);
      ++cases;
      if (found.empty() || found.front().tokens != best.tokens ||
          std::abs(found.front().score - best.score) > kExhaustiveTol) {
        ++argmax_mismatch;
      }
      compare_groups(m.model, kMicroInput, fn);
    }
  }
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 32;
  c.max_len = 8;
  const Transformer transformer(c, 3);
  for (ScoreFn fn : {ScoreFn::kLogProbAvg, ScoreFn::kLogitsAvg}) {
    compare_groups(transformer, TokenSeq{4, 9, 12}, fn);
  }
  Outcome o{4, argmax_mismatch == 0 && group_mismatch == 0 && zero_lambda_mismatch == 0, ""};
  o.detail = "saturated beam vs exact argmax: " + std::to_string(argmax_mismatch) + "/" +
             std::to_string(cases) + " mismatches; G=1 vs beam: " +
             std::to_string(group_mismatch) + " mismatches; lambda=0 vs per-group beam: " +
             std::to_string(zero_lambda_mismatch) + " mismatches";
  return o;
}

namespace {

// Emits `path` (then EOS) with overwhelming confidence.
class ForcedModel : public StepModel {
 public:
  ForcedModel(std::size_t vocab, TokenSeq path) : vocab_(vocab), path_(std::move(path)) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::size_t max_len() const override { return 8; }
  std::unique_ptr<DecoderSession> start(std::span<const TokenId>) const override {
    return std::make_unique<Session>(this);
  }

 private:
  class Session : public DecoderSession {
   public:
    explicit Session(const ForcedModel* m) : m_(m) {}
    std::unique_ptr<DecoderSession> clone() const override {
      return std::make_unique<Session>(*this);
    }
    std::vector<double> step(TokenId) override {
      std::vector<double> logits(m_->vocab_, -1000.0);
      const TokenId next = n_ < m_->path_.size() ? m_->path_[n_] : kEos;
      logits[static_cast<std::size_t>(next)] = 0.0;
      ++n_;
      return logits;
    }
    std::size_t length() const override { return n_; }

   private:
    const ForcedModel* m_;
    std::size_t n_ = 0;
  };

  std::size_t vocab_;
  TokenSeq path_;
};

}  // namespace

Outcome metric_unit_values() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  auto near = [](double a, double b, double tol) { return std::abs(a - b) <= tol; };

  const std::vector<DialoguePair> pairs = {{{3, 4}, {5, 6, 7}, false}, {{4}, {8}, false}};
  expect(near(perplexity(RandomMicroModel(9, 6, 1, 0.0), pairs), 9.0, 1e-12), "uniform ppl");
  const std::vector<DialoguePair> forced = {{{3}, {5, 6}, false}, {{3}, {5, 6}, false}};
  expect(perplexity(ForcedModel(9, {5, 6}), forced) == 1.0, "deterministic ppl");
  const LogLikelihood items[] = {{std::log(0.5) + std::log(0.25), 2}, {std::log(0.5), 1}};
  expect(near(perplexity(items), std::cbrt(16.0), 1e-12), "hand-computed ppl");

  const std::vector<TokenSeq> refs = {{3, 4, 5, 6, 7}, {8, 9, 10, 11}};
  expect(bleu4(refs, refs) == 1.0, "identical bleu");
  const std::vector<TokenSeq> hyp1 = {{3, 4, 5, 6}};
  const std::vector<TokenSeq> ref1 = {{3, 4, 5, 6, 7}};
  expect(near(bleu4(hyp1, ref1), std::exp(-0.25), 1e-12), "brevity bleu");
  std::vector<TokenSeq> disjoint_h, disjoint_r;
  for (TokenId i = 0; i < 100; ++i) {
    TokenSeq h, r;
    for (TokenId j = 0; j < 10; ++j) {
      h.push_back(3 + (i * 10 + j) % 50);
      r.push_back(60 + (i * 10 + j) % 50);
    }
    disjoint_h.push_back(h);
    disjoint_r.push_back(r);
  }
  expect(bleu4(disjoint_h, disjoint_r) < 0.01, "zero-overlap bleu");

  const std::vector<TokenSeq> ab_ab = {{3, 4}, {3, 4}};
  expect(distinct_n(ab_ab, 1) == 0.5, "distinct-1 of [ab, ab]");
  const std::vector<TokenSeq> unique = {{3, 4, 5}, {6, 7, 8, 9}};
  for (std::size_t n = 1; n <= 3; ++n) expect(distinct_n(unique, n) == 1.0, "distinct unique");
  const std::vector<TokenSeq> abc_bcd = {{3, 4, 5}, {4, 5, 6}};
  expect(distinct_n(abc_bcd, 2) == 0.75, "distinct-2 of [abc, bcd]");

  std::vector<double> low(50, -1.0), high(50, 1.0);
  expect(rank_of(0.0, low) == 0, "rank 0");
  expect(rank_of(0.0, high) == 50, "rank 50");
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double total = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> d(50);
    for (double& v : d) v = u(rng);
    total += static_cast<double>(rank_of(u(rng), d));
  }
  const double random_mean = total / trials;
  expect(near(random_mean, 25.0, 0.5), "random mean rank");

  std::string detail = "perplexity, BLEU-4, distinct-n and rank examples; random mean rank " +
                       fmt("%.3f", random_mean);
  if (!failures.empty()) {
    detail += "; failed:";
    for (const auto& f : failures) detail += " [" + f + "]";
  }
  return {5, failures.empty(), detail};
}

}  // namespace seqlab::acceptance

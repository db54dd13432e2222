#include "seqlab/oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "seqlab/error.hpp"
#include "seqlab/numerics/ops.hpp"
#include "seqlab/util/rng.hpp"

namespace seqlab {
namespace {

struct Enumerator {
  ScoreFn fn;
  std::size_t max_len;
  bool include_truncated;
  std::vector<Hypothesis>* out;

  void visit(DecoderSession& session, TokenId input, TokenSeq& prefix,
             std::vector<double>& values) {
    const std::vector<double> step = next_token_values(fn, session.step(input));
    for (std::size_t t = 0; t < step.size(); ++t) {
      const auto token = static_cast<TokenId>(t);
      if (!is_emittable(token)) continue;
      prefix.push_back(token);
      values.push_back(step[t]);
      if (token == kEos || prefix.size() == max_len) {
        if (token == kEos || include_truncated) {
          Hypothesis h;
          h.tokens = prefix;
          h.finished = token == kEos;
          h.per_step_values = values;
          h.score = average(values);
          out->push_back(std::move(h));
        }
      } else {
        auto child = session.clone();
        visit(*child, token, prefix, values);
      }
      prefix.pop_back();
      values.pop_back();
    }
  }
};

class MicroSession : public DecoderSession {
 public:
  MicroSession(const RandomMicroModel& model, TokenSeq x) : model_(&model), x_(std::move(x)) {}

  std::unique_ptr<DecoderSession> clone() const override {
    return std::make_unique<MicroSession>(*this);
  }

  std::vector<double> step(TokenId token) override {
    if (consumed_.size() >= model_->max_len()) {
      throw LengthError("micro-model session already holds max_len tokens");
    }
    consumed_.push_back(token);
    return model_->logits_after(x_, consumed_);
  }

  std::size_t length() const override { return consumed_.size(); }

 private:
  const RandomMicroModel* model_;
  TokenSeq x_;
  TokenSeq consumed_;
};

}  // namespace

void EnumerationBudget::validate() const {
  if (max_len == 0 || vocab_size == 0) {
    throw ValidationError("enumeration budget needs max_len >= 1 and vocab_size >= 1");
  }
  double count = 1.0;
  for (std::size_t i = 0; i < max_len; ++i) count *= static_cast<double>(vocab_size);
  if (count > static_cast<double>(cap)) {
    throw ValidationError("enumeration budget exceeded: " + std::to_string(vocab_size) + "^" +
                          std::to_string(max_len) + " > cap " + std::to_string(cap));
  }
}

std::vector<Hypothesis> enumerate_scored(const StepModel& model, std::span<const TokenId> x,
                                         ScoreFn score_fn, const EnumerationBudget& budget,
                                         bool include_truncated) {
  budget.validate();
  if (model.vocab_size() < 3 || budget.vocab_size != model.vocab_size() - 2) {
    throw ValidationError("enumeration budget vocab_size " + std::to_string(budget.vocab_size) +
                          " does not match the model's " + std::to_string(model.vocab_size() - 2) +
                          " emittable tokens");
  }
  if (budget.max_len > model.max_len()) {
    throw LengthError("enumeration max_len exceeds the model's max_len");
  }
  std::vector<Hypothesis> out;
  Enumerator e{score_fn, budget.max_len, include_truncated, &out};
  auto session = model.start(x);
  TokenSeq prefix;
  std::vector<double> values;
  e.visit(*session, kBos, prefix, values);
  return out;
}

double exact_partition(std::span<const double> scores) {
  if (scores.empty()) throw ValidationError("partition over an empty set");
  const double mx = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(mx)) throw NumericError("partition over non-finite scores");
  double z = 0.0;
  for (const double s : scores) z += std::exp(s - mx);
  return mx + std::log(z);
}

double exact_partition(std::span<const Hypothesis> sequences) {
  std::vector<double> scores;
  scores.reserve(sequences.size());
  for (const auto& h : sequences) scores.push_back(h.score);
  return exact_partition(scores);
}

const Hypothesis& exact_argmax(std::span<const Hypothesis> sequences) {
  if (sequences.empty()) throw ValidationError("argmax over an empty set");
  const Hypothesis* best = &sequences.front();
  for (const auto& h : sequences) {
    if (h.score > best->score || (h.score == best->score && h.tokens < best->tokens)) best = &h;
  }
  return *best;
}

RandomMicroModel::RandomMicroModel(std::size_t vocab_size, std::size_t max_len,
                                   std::uint64_t seed, double scale)
    : vocab_size_(vocab_size), max_len_(max_len), seed_(seed), scale_(scale) {
  if (vocab_size < 3) throw ValidationError("micro-model needs PAD, BOS and EOS at least");
  if (max_len == 0) throw ValidationError("micro-model needs max_len >= 1");
  if (!(scale >= 0.0)) throw ValidationError("micro-model scale must be >= 0");
}

std::unique_ptr<DecoderSession> RandomMicroModel::start(std::span<const TokenId> x) const {
  return std::make_unique<MicroSession>(*this, TokenSeq(x.begin(), x.end()));
}

std::vector<double> RandomMicroModel::logits_after(std::span<const TokenId> x,
                                                   std::span<const TokenId> consumed) const {
  std::uint64_t h = mix_seed(seed_, x.size(), consumed.size());
  for (const TokenId t : x) h = mix_seed(h, static_cast<std::uint64_t>(t) + 1);
  h = mix_seed(h, 0xFFFF);
  for (const TokenId t : consumed) h = mix_seed(h, static_cast<std::uint64_t>(t) + 1);
  std::mt19937_64 rng(h);
  std::vector<double> logits(vocab_size_);
  for (double& l : logits) l = scale_ * (2.0 * uniform01(rng) - 1.0);
  return logits;
}

}  // namespace seqlab

#include "seqlab/decoding/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "seqlab/error.hpp"
#include "seqlab/numerics/ops.hpp"
#include "seqlab/util/rng.hpp"

namespace seqlab {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t effective_max_len(const StepModel& model, std::size_t requested) {
  const std::size_t cap = model.max_len();
  if (requested == 0) return cap;
  return std::min(requested, cap);
}

void validate_input(std::span<const TokenId> x) {
  if (x.empty()) throw ValidationError("decoder input is empty");
}

double max_emittable(std::span<const double> values) {
  double mx = kNegInf;
  for (std::size_t t = 0; t < values.size(); ++t) {
    if (is_emittable(static_cast<TokenId>(t))) mx = std::max(mx, values[t]);
  }
  return mx;
}

double running_average(double sum, std::size_t n) { return sum * (1.0 / static_cast<double>(n)); }

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

struct LiveBeam {
  std::unique_ptr<DecoderSession> session;
  TokenSeq tokens;
  std::vector<double> values;
  double sum = 0.0;
  std::vector<double> next;  // step values for the following token
};

struct Candidate {
  std::size_t parent;
  TokenId token;
  double sum;
  double selection;
};

struct Group {
  std::vector<LiveBeam> live;
  std::vector<Hypothesis> pool;
  bool done = false;
};

double optimistic_average(const LiveBeam& beam, std::size_t cap, double future_bound) {
  const std::size_t n = beam.tokens.size();
  const std::size_t room = cap - n;
  const double current = running_average(beam.sum, n);
  if (future_bound >= current) {
    return (beam.sum + static_cast<double>(room) * future_bound) / static_cast<double>(n + room);
  }
  return (beam.sum + future_bound) / static_cast<double>(n + 1);
}

std::vector<Hypothesis> group_search(const StepModel& model, std::span<const TokenId> x,
                                     const BeamConfig& config) {
  config.validate();
  validate_input(x);
  const std::size_t cap = effective_max_len(model, config.max_len);
  const std::size_t groups = config.n_groups;
  const std::size_t width = config.beam_size / groups;
  const std::size_t vocab = model.vocab_size();
  const double lambda = config.diversity_strength;

  LiveBeam root;
  root.session = model.start(x);
  root.next = next_token_values(config.score_fn, root.session->step(kBos));
  double max_seen = max_emittable(root.next);

  std::vector<Group> search(groups);
  for (Group& g : search) {
    LiveBeam b;
    b.session = root.session->clone();
    b.next = root.next;
    g.live.push_back(std::move(b));
  }

  std::vector<Candidate> candidates;
  for (std::size_t t = 0; t < cap; ++t) {
    std::vector<int> chosen_counts(vocab, 0);
    bool any_live = false;
    for (Group& group : search) {
      if (group.done) continue;
      candidates.clear();
      for (std::size_t b = 0; b < group.live.size(); ++b) {
        const LiveBeam& beam = group.live[b];
        for (std::size_t tok = 0; tok < vocab; ++tok) {
          const auto token = static_cast<TokenId>(tok);
          if (!is_emittable(token)) continue;
          const double sum = beam.sum + beam.next[tok];
          const double rank = running_average(sum, t + 1);
          candidates.push_back(Candidate{b, token, sum, rank - lambda * chosen_counts[tok]});
        }
      }
      const auto& live = group.live;
      auto order = [&live](const Candidate& a, const Candidate& b) {
        if (a.selection != b.selection) return a.selection > b.selection;
        if (a.parent != b.parent) return live[a.parent].tokens < live[b.parent].tokens;
        return a.token < b.token;
      };
      const std::size_t keep = std::min(width, candidates.size());
      std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(), order);

      std::vector<LiveBeam> next_live;
      for (std::size_t c = 0; c < keep; ++c) {
        const Candidate& cand = candidates[c];
        const LiveBeam& parent = group.live[cand.parent];
        ++chosen_counts[cand.token];
        TokenSeq tokens = parent.tokens;
        tokens.push_back(cand.token);
        std::vector<double> values = parent.values;
        values.push_back(parent.next[cand.token]);
        if (cand.token == kEos || tokens.size() == cap) {
          Hypothesis h;
          h.finished = cand.token == kEos;
          h.tokens = std::move(tokens);
          h.per_step_values = std::move(values);
          h.score = average(h.per_step_values);
          group.pool.push_back(std::move(h));
          continue;
        }
        LiveBeam child;
        child.session = parent.session->clone();
        child.next = next_token_values(config.score_fn, child.session->step(cand.token));
        max_seen = std::max(max_seen, max_emittable(child.next));
        child.tokens = std::move(tokens);
        child.values = std::move(values);
        child.sum = cand.sum;
        next_live.push_back(std::move(child));
      }
      group.live = std::move(next_live);

      if (group.live.empty()) {
        group.done = true;
        continue;
      }
      if (group.pool.size() >= width) {
        std::vector<double> scores;
        for (const Hypothesis& h : group.pool) scores.push_back(h.score);
        std::nth_element(scores.begin(), scores.begin() + (width - 1), scores.end(),
                         std::greater<>());
        const double kth = scores[width - 1];
        const double future = config.score_fn == ScoreFn::kLogProbAvg ? 0.0 : max_seen;
        double best_bound = kNegInf;
        for (const LiveBeam& beam : group.live) {
          best_bound = std::max(best_bound, optimistic_average(beam, cap, future));
        }
        if (best_bound <= kth) {
          group.done = true;
          group.live.clear();
          continue;
        }
      }
      any_live = true;
    }
    if (!any_live) break;
  }

  std::vector<Hypothesis> merged;
  for (Group& g : search) {
    for (Hypothesis& h : g.pool) merged.push_back(std::move(h));
  }
  std::sort(merged.begin(), merged.end(), better);
  std::vector<Hypothesis> out;
  for (Hypothesis& h : merged) {
    if (out.size() == config.beam_size) break;
    const bool seen = std::any_of(out.begin(), out.end(),
                                  [&](const Hypothesis& o) { return o.tokens == h.tokens; });
    if (!seen) out.push_back(std::move(h));
  }
  return out;
}

std::vector<double> temperature_probs(std::span<const double> logits, double temperature) {
  double mx = kNegInf;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (is_emittable(static_cast<TokenId>(t))) mx = std::max(mx, logits[t] / temperature);
  }
  std::vector<double> probs(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (!is_emittable(static_cast<TokenId>(t))) continue;
    probs[t] = std::exp(logits[t] / temperature - mx);
    z += probs[t];
  }
  for (double& p : probs) p /= z;
  return probs;
}

std::vector<TokenId> by_probability(std::span<const double> probs) {
  std::vector<TokenId> order;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    if (probs[t] > 0.0) order.push_back(static_cast<TokenId>(t));
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](TokenId a, TokenId b) { return probs[a] > probs[b]; });
  return order;
}

TokenId draw(std::span<const double> probs, std::span<const TokenId> support, std::mt19937_64& rng) {
  double total = 0.0;
  for (TokenId t : support) total += probs[t];
  const double u = uniform01(rng) * total;
  double cumulative = 0.0;
  for (TokenId t : support) {
    cumulative += probs[t];
    if (u < cumulative) return t;
  }
  return support.back();
}

template <typename SupportFn>
Hypothesis sample_sequence(const StepModel& model, std::span<const TokenId> x, double temperature,
                           std::uint64_t seed, const SamplingConfig& config, SupportFn support_of) {
  validate_input(x);
  const std::size_t cap = effective_max_len(model, config.max_len);
  std::mt19937_64 rng(seed);
  auto session = model.start(x);
  Hypothesis h;
  std::vector<double> logits = session->step(kBos);
  while (true) {
    const std::vector<double> probs = temperature_probs(logits, temperature);
    const TokenId token = draw(probs, support_of(probs), rng);
    h.per_step_values.push_back(next_token_values(config.score_fn, logits)[token]);
    h.tokens.push_back(token);
    if (token == kEos) {
      h.finished = true;
      break;
    }
    if (h.tokens.size() == cap) break;
    logits = session->step(token);
  }
  h.score = average(h.per_step_values);
  return h;
}

}  // namespace

void BeamConfig::validate() const {
  if (beam_size == 0) throw ValidationError("beam_size must be >= 1");
  if (n_groups == 0) throw ValidationError("n_groups must be >= 1");
  if (beam_size % n_groups != 0) {
    throw ValidationError("beam_size " + std::to_string(beam_size) +
                          " is not divisible by n_groups " + std::to_string(n_groups));
  }
  if (!(diversity_strength >= 0.0) || !std::isfinite(diversity_strength)) {
    throw ValidationError("diversity_strength must be a finite value >= 0");
  }
}

std::vector<Hypothesis> beam_search(const StepModel& model, std::span<const TokenId> x,
                                    const BeamConfig& config) {
  BeamConfig single = config;
  single.n_groups = 1;
  return group_search(model, x, single);
}

std::vector<Hypothesis> diverse_beam_search(const StepModel& model, std::span<const TokenId> x,
                                            const BeamConfig& config) {
  return group_search(model, x, config);
}

Hypothesis greedy(const StepModel& model, std::span<const TokenId> x, std::size_t max_len,
                  ScoreFn score_fn) {
  validate_input(x);
  const std::size_t cap = effective_max_len(model, max_len);
  auto session = model.start(x);
  Hypothesis h;
  std::vector<double> logits = session->step(kBos);
  while (true) {
    TokenId best = kEos;
    double best_logit = kNegInf;
    for (std::size_t t = 0; t < logits.size(); ++t) {
      const auto token = static_cast<TokenId>(t);
      if (is_emittable(token) && logits[t] > best_logit) {
        best = token;
        best_logit = logits[t];
      }
    }
    h.per_step_values.push_back(next_token_values(score_fn, logits)[best]);
    h.tokens.push_back(best);
    if (best == kEos) {
      h.finished = true;
      break;
    }
    if (h.tokens.size() == cap) break;
    logits = session->step(best);
  }
  h.score = average(h.per_step_values);
  return h;
}

std::vector<TokenId> top_k_set(std::span<const double> probs, std::size_t k) {
  std::vector<TokenId> order = by_probability(probs);
  if (order.size() > k) order.resize(k);
  return order;
}

std::vector<TokenId> nucleus_set(std::span<const double> probs, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("nucleus p must be in (0, 1]");
  std::vector<TokenId> order = by_probability(probs);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    cumulative += probs[order[i]];
    if (cumulative >= p) {
      order.resize(i + 1);
      break;
    }
  }
  return order;
}

Hypothesis top_k_sample(const StepModel& model, std::span<const TokenId> x, std::size_t k,
                        double temperature, std::uint64_t seed, const SamplingConfig& config) {
  if (k < 1 || k > model.vocab_size()) {
    throw ValidationError("top-k needs 1 <= k <= vocab_size, got k=" + std::to_string(k));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError("temperature must be a finite value > 0");
  }
  return sample_sequence(model, x, temperature, seed, config,
                         [k](std::span<const double> probs) { return top_k_set(probs, k); });
}

Hypothesis nucleus_sample(const StepModel& model, std::span<const TokenId> x, double p,
                          std::uint64_t seed, const SamplingConfig& config) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("nucleus p must be in (0, 1]");
  return sample_sequence(model, x, 1.0, seed, config,
                         [p](std::span<const double> probs) { return nucleus_set(probs, p); });
}

}  // namespace seqlab

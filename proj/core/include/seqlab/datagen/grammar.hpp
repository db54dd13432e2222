#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqlab/types.hpp"
#include "seqlab/util/kv_config.hpp"

namespace seqlab {

// Id <-> string bijection. Ids 0..2 are <pad>, <bos>, <eos>; content tokens
// follow and are named by role: c* (context), g* (generic), s* (specific).
class Vocab {
 public:
  explicit Vocab(std::size_t content_size);

  std::size_t size() const { return tokens_.size(); }
  std::size_t content_size() const { return tokens_.size() - kFirstContentToken; }
  const std::string& token(TokenId id) const;
  TokenId id(std::string_view token) const;
  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }

  // Space-separated token strings.
  TokenSeq encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  // Content id ranges [begin, end) of each role.
  TokenId context_begin() const { return kFirstContentToken; }
  TokenId generic_begin() const { return generic_begin_; }
  TokenId specific_begin() const { return specific_begin_; }
  TokenId end() const { return static_cast<TokenId>(size()); }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId, std::less<>> ids_;
  TokenId generic_begin_ = 0;
  TokenId specific_begin_ = 0;
};

struct GrammarSpec {
  std::size_t vocab_size = 120;  // content tokens
  std::size_t n_context_classes = 20;
  std::size_t specific_responses_per_class = 30;
  std::size_t generic_pool_size = 60;
  double p_generic = 0.3;
  std::size_t min_response_len = 4;
  std::size_t max_response_len = 10;
  std::uint64_t seed = 1234;

  void validate() const;
  // Also checks that responses plus BOS/EOS fit the model.
  void validate_against(std::size_t model_max_len) const;

  KeyValueConfig to_config() const;
  static GrammarSpec from_config(const KeyValueConfig& cfg);
  std::uint64_t hash() const;

  bool operator==(const GrammarSpec&) const = default;
};

GrammarSpec read_grammar_spec(const std::filesystem::path& path);
void write_grammar_spec(const std::filesystem::path& path, const GrammarSpec& spec);

struct DialoguePair {
  TokenSeq context;
  TokenSeq response;  // no EOS
  bool is_generic = false;

  bool operator==(const DialoguePair&) const = default;
};

struct Corpus {
  std::vector<DialoguePair> train;
  std::vector<DialoguePair> valid;

  bool operator==(const Corpus&) const = default;
};

// The generative process. Every class owns one context template and a set of
// specific responses built from a class-private token subset. Generic
// responses share three stems and differ only in a two-token tail, so they
// have little branching and high unconditional probability.
class Grammar {
 public:
  explicit Grammar(const GrammarSpec& spec);

  const GrammarSpec& spec() const { return spec_; }
  const Vocab& vocab() const { return vocab_; }
  std::size_t n_classes() const { return contexts_.size(); }
  const TokenSeq& context(std::size_t cls) const { return contexts_.at(cls); }
  const std::vector<TokenSeq>& specific(std::size_t cls) const { return specific_.at(cls); }
  const std::vector<TokenSeq>& generic_pool() const { return generic_; }
  std::optional<std::size_t> class_of(std::span<const TokenId> context) const;
  bool is_generic(std::span<const TokenId> response) const;

  // Draws a class uniformly, then a generic response with probability
  // p_generic or a class-specific one otherwise, uniformly within the set.
  DialoguePair sample(std::mt19937_64& rng) const;

  // All distinct responses with nonzero probability, sorted.
  std::vector<TokenSeq> generatable() const;

 private:
  GrammarSpec spec_;
  Vocab vocab_;
  std::vector<TokenSeq> contexts_;
  std::vector<std::vector<TokenSeq>> specific_;
  std::vector<TokenSeq> generic_;
  std::map<TokenSeq, std::size_t> class_by_context_;
};

// First 90% of the draws form the training split, the rest validation.
Corpus generate_corpus(const GrammarSpec& spec, std::size_t n_pairs, std::uint64_t seed);

// Logprob returned for sequences the grammar cannot produce.
inline constexpr double kUngeneratable = -std::numeric_limits<double>::infinity();

// Exact probabilities implied by a grammar. Sequences are responses without
// EOS; perplexity counts the terminating EOS as one more token.
class OracleLM {
 public:
  explicit OracleLM(const Grammar& grammar);

  // log P(y) marginalised over classes, or kUngeneratable.
  double logprob(std::span<const TokenId> response) const;
  // log P(y | context); throws ValidationError for an unknown context.
  double conditional_logprob(std::span<const TokenId> context,
                             std::span<const TokenId> response) const;
  // exp(-logprob / (|y| + 1)); +inf when ungeneratable.
  double perplexity(std::span<const TokenId> response) const;

  const Grammar& grammar() const { return *grammar_; }

 private:
  void check_tokens(std::span<const TokenId> tokens) const;

  const Grammar* grammar_;
  std::map<TokenSeq, double> marginal_;
  std::vector<std::map<TokenSeq, double>> conditional_;
};

// The n generatable responses with the lowest oracle perplexity, ties broken
// lexicographically.
std::vector<TokenSeq> select_distractors(const OracleLM& oracle, std::size_t n = 50);

// Corpus text: `#` header lines, then `context<TAB>response<TAB>label` with
// space-separated tokens and label `generic` or `specific`. A missing label
// column reads as specific.
struct CorpusHeader {
  std::uint64_t spec_hash = 0;
  std::uint64_t seed = 0;
};
std::string serialize_pairs(const Vocab& vocab, std::span<const DialoguePair> pairs,
                            const CorpusHeader& header);
std::vector<DialoguePair> parse_pairs(const Vocab& vocab, std::string_view text,
                                      CorpusHeader* header = nullptr);
void write_pairs(const std::filesystem::path& path, const Vocab& vocab,
                 std::span<const DialoguePair> pairs, const CorpusHeader& header);
std::vector<DialoguePair> read_pairs(const std::filesystem::path& path, const Vocab& vocab,
                                     CorpusHeader* header = nullptr);

}  // namespace seqlab

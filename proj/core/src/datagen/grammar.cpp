#include "seqlab/datagen/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "seqlab/error.hpp"
#include "seqlab/util/rng.hpp"

namespace seqlab {
namespace {

constexpr std::size_t kGenericStems = 3;
constexpr std::size_t kGenericTail = 2;
constexpr std::size_t kClassSubset = 12;
constexpr std::size_t kDrawAttemptsPerItem = 200;

std::size_t context_token_count(std::size_t v) { return std::max<std::size_t>(1, v / 4); }
std::size_t generic_token_count(std::size_t v) { return std::max<std::size_t>(2, v / 6); }

TokenSeq draw_sequence(std::mt19937_64& rng, std::size_t length, std::span<const TokenId> alphabet) {
  TokenSeq out(length);
  for (auto& t : out) t = alphabet[uniform_index(rng, alphabet.size())];
  return out;
}

std::vector<TokenId> id_range(TokenId begin, TokenId end) {
  std::vector<TokenId> out;
  for (TokenId t = begin; t < end; ++t) out.push_back(t);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- Vocab

Vocab::Vocab(std::size_t content_size) {
  if (content_size < 4) throw ValidationError("vocab_size must be >= 4 content tokens");
  tokens_ = {"<pad>", "<bos>", "<eos>"};
  const std::size_t n_ctx = context_token_count(content_size);
  const std::size_t n_gen = generic_token_count(content_size);
  const std::size_t n_spec = content_size - n_ctx - n_gen;
  for (std::size_t i = 0; i < n_ctx; ++i) tokens_.push_back("c" + std::to_string(i));
  generic_begin_ = static_cast<TokenId>(tokens_.size());
  for (std::size_t i = 0; i < n_gen; ++i) tokens_.push_back("g" + std::to_string(i));
  specific_begin_ = static_cast<TokenId>(tokens_.size());
  for (std::size_t i = 0; i < n_spec; ++i) tokens_.push_back("s" + std::to_string(i));
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<TokenId>(i));
}

const std::string& Vocab::token(TokenId id) const {
  if (!contains(id)) throw ValidationError("token id " + std::to_string(id) + " outside vocab");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::id(std::string_view token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) throw ValidationError("unknown token '" + std::string(token) + "'");
  return it->second;
}

TokenSeq Vocab::encode(std::string_view text) const {
  TokenSeq out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto start = text.find_first_not_of(' ', pos);
    if (start == std::string_view::npos) break;
    const auto stop = std::min(text.find(' ', start), text.size());
    out.push_back(id(text.substr(start, stop - start)));
    pos = stop;
  }
  return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------- GrammarSpec

void GrammarSpec::validate() const {
  if (vocab_size < 6) throw ValidationError("vocab_size must be >= 6");
  if (n_context_classes == 0) throw ValidationError("n_context_classes must be >= 1");
  if (specific_responses_per_class == 0) {
    throw ValidationError("specific_responses_per_class must be >= 1");
  }
  if (generic_pool_size == 0) throw ValidationError("generic_pool_size must be >= 1");
  if (!(p_generic >= 0.0 && p_generic <= 1.0)) throw ValidationError("p_generic must be in [0, 1]");
  if (min_response_len == 0 || min_response_len > max_response_len) {
    throw ValidationError("response length range must satisfy 1 <= min <= max");
  }
}

void GrammarSpec::validate_against(std::size_t model_max_len) const {
  validate();
  if (max_response_len + 2 > model_max_len) {
    throw LengthError("max_response_len " + std::to_string(max_response_len) +
                      " exceeds model max_len - 2 = " +
                      std::to_string(model_max_len < 2 ? 0 : model_max_len - 2));
  }
}

KeyValueConfig GrammarSpec::to_config() const {
  KeyValueConfig cfg;
  cfg.set("version", std::uint64_t{1});
  cfg.set("vocab_size", std::uint64_t{vocab_size});
  cfg.set("n_context_classes", std::uint64_t{n_context_classes});
  cfg.set("specific_responses_per_class", std::uint64_t{specific_responses_per_class});
  cfg.set("generic_pool_size", std::uint64_t{generic_pool_size});
  cfg.set("p_generic", p_generic);
  cfg.set("min_response_len", std::uint64_t{min_response_len});
  cfg.set("max_response_len", std::uint64_t{max_response_len});
  cfg.set("seed", seed);
  return cfg;
}

GrammarSpec GrammarSpec::from_config(const KeyValueConfig& cfg) {
  cfg.require_known({"version", "vocab_size", "n_context_classes", "specific_responses_per_class",
                     "generic_pool_size", "p_generic", "min_response_len", "max_response_len",
                     "seed"});
  if (cfg.get_uint("version", 1) != 1) throw ValidationError("unsupported grammar spec version");
  GrammarSpec s;
  s.vocab_size = cfg.get_uint("vocab_size", s.vocab_size);
  s.n_context_classes = cfg.get_uint("n_context_classes", s.n_context_classes);
  s.specific_responses_per_class =
      cfg.get_uint("specific_responses_per_class", s.specific_responses_per_class);
  s.generic_pool_size = cfg.get_uint("generic_pool_size", s.generic_pool_size);
  s.p_generic = cfg.get_double("p_generic", s.p_generic);
  s.min_response_len = cfg.get_uint("min_response_len", s.min_response_len);
  s.max_response_len = cfg.get_uint("max_response_len", s.max_response_len);
  s.seed = cfg.get_uint("seed", s.seed);
  s.validate();
  return s;
}

std::uint64_t GrammarSpec::hash() const { return fnv1a64(to_config().serialize()); }

GrammarSpec read_grammar_spec(const std::filesystem::path& path) {
  return GrammarSpec::from_config(KeyValueConfig::load(path));
}

void write_grammar_spec(const std::filesystem::path& path, const GrammarSpec& spec) {
  spec.to_config().save(path);
}

// ---------------------------------------------------------------- Grammar

Grammar::Grammar(const GrammarSpec& spec) : spec_(spec), vocab_(spec.vocab_size) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);

  const auto context_tokens = id_range(vocab_.context_begin(), vocab_.generic_begin());
  const std::size_t n_classes = spec_.n_context_classes;
  for (std::size_t attempts = 0; contexts_.size() < n_classes; ++attempts) {
    if (attempts > kDrawAttemptsPerItem * n_classes) {
      throw ValidationError("cannot draw " + std::to_string(n_classes) +
                            " distinct context templates from " +
                            std::to_string(context_tokens.size()) + " context tokens");
    }
    TokenSeq ctx = draw_sequence(rng, 3 + uniform_index(rng, 4), context_tokens);
    if (class_by_context_.emplace(ctx, contexts_.size()).second) contexts_.push_back(std::move(ctx));
  }

  const auto generic_tokens = id_range(vocab_.generic_begin(), vocab_.specific_begin());
  const std::size_t max_len = spec_.max_response_len;
  const std::size_t tail = std::min(kGenericTail, max_len);
  const std::size_t generic_min =
      std::max({spec_.min_response_len, tail, max_len > kGenericTail ? max_len - kGenericTail : 0});
  std::vector<TokenSeq> stems;
  for (std::size_t i = 0; i < kGenericStems; ++i) {
    stems.push_back(draw_sequence(rng, max_len - tail, generic_tokens));
  }
  std::set<TokenSeq> seen;
  for (std::size_t attempts = 0; generic_.size() < spec_.generic_pool_size; ++attempts) {
    if (attempts > kDrawAttemptsPerItem * spec_.generic_pool_size) {
      throw ValidationError("cannot draw " + std::to_string(spec_.generic_pool_size) +
                            " distinct generic responses");
    }
    const TokenSeq& stem = stems[uniform_index(rng, stems.size())];
    const std::size_t len = generic_min + uniform_index(rng, max_len - generic_min + 1);
    TokenSeq y(stem.begin(), stem.begin() + static_cast<std::ptrdiff_t>(len - tail));
    const TokenSeq t = draw_sequence(rng, tail, generic_tokens);
    y.insert(y.end(), t.begin(), t.end());
    if (seen.insert(y).second) generic_.push_back(std::move(y));
  }

  auto specific_tokens = id_range(vocab_.specific_begin(), vocab_.end());
  const std::size_t per_class = spec_.specific_responses_per_class;
  const std::size_t len_span = max_len - spec_.min_response_len + 1;
  specific_.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    shuffle(specific_tokens, rng);
    const std::span<const TokenId> subset(specific_tokens.data(),
                                          std::min(kClassSubset, specific_tokens.size()));
    for (std::size_t attempts = 0; specific_[c].size() < per_class; ++attempts) {
      if (attempts > kDrawAttemptsPerItem * per_class) {
        throw ValidationError("cannot draw " + std::to_string(per_class) +
                              " distinct specific responses for class " + std::to_string(c));
      }
      TokenSeq y = draw_sequence(rng, spec_.min_response_len + uniform_index(rng, len_span), subset);
      if (seen.insert(y).second) specific_[c].push_back(std::move(y));
    }
  }
}

std::optional<std::size_t> Grammar::class_of(std::span<const TokenId> context) const {
  const auto it = class_by_context_.find(TokenSeq(context.begin(), context.end()));
  if (it == class_by_context_.end()) return std::nullopt;
  return it->second;
}

bool Grammar::is_generic(std::span<const TokenId> response) const {
  return std::find(generic_.begin(), generic_.end(),
                   TokenSeq(response.begin(), response.end())) != generic_.end();
}

DialoguePair Grammar::sample(std::mt19937_64& rng) const {
  const std::size_t cls = uniform_index(rng, contexts_.size());
  DialoguePair pair;
  pair.context = contexts_[cls];
  pair.is_generic = uniform01(rng) < spec_.p_generic;
  const auto& pool = pair.is_generic ? generic_ : specific_[cls];
  pair.response = pool[uniform_index(rng, pool.size())];
  return pair;
}

std::vector<TokenSeq> Grammar::generatable() const {
  std::set<TokenSeq> all;
  if (spec_.p_generic > 0.0) all.insert(generic_.begin(), generic_.end());
  if (spec_.p_generic < 1.0) {
    for (const auto& s : specific_) all.insert(s.begin(), s.end());
  }
  return {all.begin(), all.end()};
}

Corpus generate_corpus(const GrammarSpec& spec, std::size_t n_pairs, std::uint64_t seed) {
  if (n_pairs == 0) throw ValidationError("n_pairs must be >= 1");
  const Grammar grammar(spec);
  std::mt19937_64 rng(seed);
  const std::size_t n_valid = n_pairs / 10;
  Corpus corpus;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    auto& split = i < n_pairs - n_valid ? corpus.train : corpus.valid;
    split.push_back(grammar.sample(rng));
  }
  return corpus;
}

// ---------------------------------------------------------------- OracleLM

OracleLM::OracleLM(const Grammar& grammar) : grammar_(&grammar) {
  const GrammarSpec& spec = grammar.spec();
  const double p = spec.p_generic;
  const auto n_classes = static_cast<double>(grammar.n_classes());
  std::map<TokenSeq, double> generic_prob;
  if (p > 0.0) {
    const double each = p / static_cast<double>(grammar.generic_pool().size());
    for (const auto& y : grammar.generic_pool()) generic_prob[y] += each;
  }
  marginal_ = generic_prob;
  conditional_.assign(grammar.n_classes(), generic_prob);
  if (p < 1.0) {
    for (std::size_t c = 0; c < grammar.n_classes(); ++c) {
      const auto& set = grammar.specific(c);
      const double each = (1.0 - p) / static_cast<double>(set.size());
      for (const auto& y : set) {
        conditional_[c][y] += each;
        marginal_[y] += each / n_classes;
      }
    }
  }
  for (auto& [y, prob] : marginal_) prob = std::log(prob);
  for (auto& table : conditional_) {
    for (auto& [y, prob] : table) prob = std::log(prob);
  }
}

void OracleLM::check_tokens(std::span<const TokenId> tokens) const {
  for (const TokenId t : tokens) {
    if (!grammar_->vocab().contains(t)) {
      throw ValidationError("token id " + std::to_string(t) + " outside vocab");
    }
  }
}

double OracleLM::logprob(std::span<const TokenId> response) const {
  check_tokens(response);
  const auto it = marginal_.find(TokenSeq(response.begin(), response.end()));
  return it == marginal_.end() ? kUngeneratable : it->second;
}

double OracleLM::conditional_logprob(std::span<const TokenId> context,
                                     std::span<const TokenId> response) const {
  check_tokens(context);
  check_tokens(response);
  const auto cls = grammar_->class_of(context);
  if (!cls) throw ValidationError("context is not produced by the grammar");
  const auto& table = conditional_[*cls];
  const auto it = table.find(TokenSeq(response.begin(), response.end()));
  return it == table.end() ? kUngeneratable : it->second;
}

double OracleLM::perplexity(std::span<const TokenId> response) const {
  const double lp = logprob(response);
  if (lp == kUngeneratable) return std::numeric_limits<double>::infinity();
  return std::exp(-lp / static_cast<double>(response.size() + 1));
}

std::vector<TokenSeq> select_distractors(const OracleLM& oracle, std::size_t n) {
  if (n == 0) throw ValidationError("distractor count must be >= 1");
  std::vector<std::pair<double, TokenSeq>> ranked;
  for (auto& y : oracle.grammar().generatable()) {
    ranked.emplace_back(oracle.perplexity(y), std::move(y));
  }
  if (ranked.size() < n) {
    throw ValidationError("only " + std::to_string(ranked.size()) +
                          " generatable responses, cannot select " + std::to_string(n) +
                          " distractors");
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::move(ranked[i].second));
  return out;
}

// ---------------------------------------------------------------- corpus files

std::string serialize_pairs(const Vocab& vocab, std::span<const DialoguePair> pairs,
                            const CorpusHeader& header) {
  std::string out = "# seqlab corpus\n# spec_hash=" + hex64(header.spec_hash) +
                    "\n# seed=" + std::to_string(header.seed) + "\n";
  for (const auto& p : pairs) {
    out += vocab.decode(p.context) + '\t' + vocab.decode(p.response) + '\t' +
           (p.is_generic ? "generic" : "specific") + '\n';
  }
  return out;
}

std::vector<DialoguePair> parse_pairs(const Vocab& vocab, std::string_view text,
                                      CorpusHeader* header) {
  std::vector<DialoguePair> pairs;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (header) {
        const auto eq = line.find('=');
        if (eq != std::string_view::npos) {
          const auto key = line.substr(1, eq - 1);
          const std::string value(line.substr(eq + 1));
          try {
            if (key.find("spec_hash") != std::string_view::npos) {
              header->spec_hash = std::stoull(value, nullptr, 16);
            } else if (key.find("seed") != std::string_view::npos) {
              header->seed = std::stoull(value);
            }
          } catch (const std::logic_error&) {
            throw ValidationError("corpus line " + std::to_string(line_no) + ": bad header value");
          }
        }
      }
      continue;
    }
    std::vector<std::string_view> fields;
    for (std::size_t start = 0;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 3) {
      throw ValidationError("corpus line " + std::to_string(line_no) +
                            ": expected context<TAB>response");
    }
    DialoguePair p;
    p.context = vocab.encode(fields[0]);
    p.response = vocab.encode(fields[1]);
    if (p.context.empty() || p.response.empty()) {
      throw ValidationError("corpus line " + std::to_string(line_no) + ": empty context or response");
    }
    if (fields.size() == 3) {
      if (fields[2] != "generic" && fields[2] != "specific") {
        throw ValidationError("corpus line " + std::to_string(line_no) + ": bad label '" +
                              std::string(fields[2]) + "'");
      }
      p.is_generic = fields[2] == "generic";
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_pairs(const std::filesystem::path& path, const Vocab& vocab,
                 std::span<const DialoguePair> pairs, const CorpusHeader& header) {
  write_file_atomic(path, serialize_pairs(vocab, pairs, header));
}

std::vector<DialoguePair> read_pairs(const std::filesystem::path& path, const Vocab& vocab,
                                     CorpusHeader* header) {
  return parse_pairs(vocab, read_file(path), header);
}

}  // namespace seqlab

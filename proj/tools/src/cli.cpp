#include "seqlab/cli/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "seqlab/datagen/grammar.hpp"
#include "seqlab/decoding/decoders.hpp"
#include "seqlab/error.hpp"
#include "seqlab/harness/evaluate.hpp"
#include "seqlab/harness/train.hpp"
#include "seqlab/metrics/metrics.hpp"
#include "seqlab/model/checkpoint.hpp"
#include "seqlab/model/transformer.hpp"
#include "seqlab/util/kv_config.hpp"
#include "seqlab/util/rng.hpp"

namespace seqlab::cli {
namespace {

namespace fs = std::filesystem;

// Files written by gen-data and read by every later stage.
struct DataFiles {
  fs::path dir;
  fs::path grammar() const { return dir / "grammar.cfg"; }
  fs::path train() const { return dir / "train.tsv"; }
  fs::path valid() const { return dir / "valid.tsv"; }
  fs::path distractors() const { return dir / "distractors.txt"; }
};

struct Data {
  std::unique_ptr<Grammar> grammar;
  std::vector<DialoguePair> train;
  std::vector<DialoguePair> valid;

  const Vocab& vocab() const { return grammar->vocab(); }
  const std::vector<DialoguePair>& split(const std::string& name) const {
    return name == "train" ? train : valid;
  }
};

Data load_data(const fs::path& dir) {
  const DataFiles files{dir};
  Data d;
  d.grammar = std::make_unique<Grammar>(read_grammar_spec(files.grammar()));
  d.train = read_pairs(files.train(), d.vocab());
  d.valid = read_pairs(files.valid(), d.vocab());
  return d;
}

std::vector<TokenSeq> load_distractors(const fs::path& dir, const Vocab& vocab) {
  const std::string text = read_file(DataFiles{dir}.distractors());
  std::vector<TokenSeq> out;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) out.push_back(vocab.encode(line));
  }
  if (out.empty()) throw IoError("no distractors in " + DataFiles{dir}.distractors().string());
  return out;
}

Transformer load_model(const fs::path& checkpoint, const Vocab& vocab) {
  Checkpoint ck = read_checkpoint(checkpoint);
  if (ck.config.vocab_size != vocab.size()) {
    throw ValidationError("checkpoint vocabulary (" + std::to_string(ck.config.vocab_size) +
                          ") does not match the data vocabulary (" +
                          std::to_string(vocab.size()) + ")");
  }
  return Transformer(ck.config, std::move(ck.parameters));
}

// Decoding settings shared by decode, evaluate, rank and ppl-hist. The file
// uses the same beam keys as a training config.
struct DecodeSettings {
  BeamConfig beam;
  KeyValueConfig source;
};

DecodeSettings load_decode_settings(const std::string& path) {
  DecodeSettings s;
  if (!path.empty()) s.source = KeyValueConfig::load(path);
  const KeyValueConfig& c = s.source;
  c.require_known({"version", "score_fn", "beam.size", "beam.max_len", "beam.groups",
                   "beam.diversity"});
  if (c.get_uint("version", 1) != 1) throw ValidationError("unsupported decode config version");
  s.beam.score_fn = parse_score_fn(c.get_string("score_fn", to_string(s.beam.score_fn)));
  s.beam.beam_size = c.get_uint("beam.size", s.beam.beam_size);
  s.beam.max_len = c.get_uint("beam.max_len", s.beam.max_len);
  s.beam.n_groups = c.get_uint("beam.groups", s.beam.n_groups);
  s.beam.diversity_strength = c.get_double("beam.diversity", s.beam.diversity_strength);
  return s;
}

void sync_settings(DecodeSettings& s) {
  s.source.set("version", std::uint64_t{1});
  s.source.set("score_fn", to_string(s.beam.score_fn));
  s.source.set("beam.size", std::uint64_t{s.beam.beam_size});
  s.source.set("beam.max_len", std::uint64_t{s.beam.max_len});
  s.source.set("beam.groups", std::uint64_t{s.beam.n_groups});
  s.source.set("beam.diversity", s.beam.diversity_strength);
  s.beam.validate();
}

// Identifies an evaluation: decode settings, checkpoint bytes and corpus.
std::string evaluation_hash(const DecodeSettings& s, const fs::path& checkpoint,
                            const fs::path& data_dir, const std::string& split) {
  std::string key = s.source.serialize();
  key += hex64(fnv1a64(read_file(checkpoint)));
  key += hex64(fnv1a64(read_file(DataFiles{data_dir}.grammar())));
  key += hex64(fnv1a64(read_file(split == "train" ? DataFiles{data_dir}.train()
                                                  : DataFiles{data_dir}.valid())));
  key += split;
  return hex64(fnv1a64(key));
}

void write_output(const std::string& out, const std::string& contents) {
  const fs::path path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, contents);
}

std::vector<std::size_t> first_of_each_context(const std::vector<DialoguePair>& pairs) {
  std::set<TokenSeq> seen;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (seen.insert(pairs[i].context).second) idx.push_back(i);
  }
  return idx;
}

// ------------------------------------------------------------------ commands

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& config_help,
                const std::string& out_help) {
  cmd->add_option("--config", c.config, config_help);
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--out", c.out, out_help)->required();
}

struct GenDataArgs {
  Common common;
  std::size_t pairs = 5000;
  std::size_t distractors = 50;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  const GrammarSpec spec = a.common.config.empty() ? GrammarSpec{}
                                                   : read_grammar_spec(a.common.config);
  const Grammar grammar(spec);
  const Corpus corpus = generate_corpus(spec, a.pairs, a.common.seed);
  const OracleLM oracle(grammar);
  const std::vector<TokenSeq> distractors = select_distractors(oracle, a.distractors);

  const DataFiles files{a.common.out};
  fs::create_directories(files.dir);
  write_grammar_spec(files.grammar(), spec);
  const CorpusHeader header{spec.hash(), a.common.seed};
  write_pairs(files.train(), grammar.vocab(), corpus.train, header);
  write_pairs(files.valid(), grammar.vocab(), corpus.valid, header);
  std::string text;
  for (const TokenSeq& d : distractors) text += grammar.vocab().decode(d) + "\n";
  write_file_atomic(files.distractors(), text);
  out << "wrote " << corpus.train.size() << " train and " << corpus.valid.size()
      << " valid pairs to " << files.dir.string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  Common common;
  bool seed_given = false;
  std::string data;
  std::optional<std::string> stage;
  std::optional<std::string> init;
  std::optional<std::string> score_fn;
  std::optional<std::string> hypotheses;
  std::optional<std::size_t> max_steps;
  std::size_t stop_after = 0;
  bool resume = false;
};

int train_cmd(const TrainArgs& a, std::ostream& out) {
  const Data data = load_data(a.data);
  KeyValueConfig kv;
  if (!a.common.config.empty()) kv = KeyValueConfig::load(a.common.config);
  if (a.seed_given) kv.set("seed", a.common.seed);
  if (a.stage) kv.set("stage", *a.stage);
  if (a.init) kv.set("init_checkpoint", *a.init);
  if (a.score_fn) kv.set("score_fn", *a.score_fn);
  if (a.hypotheses) kv.set("hypothesis_decoder", *a.hypotheses);
  if (a.max_steps) kv.set("max_steps", std::uint64_t{*a.max_steps});
  if (!kv.contains("model.vocab_size")) kv.set("model.vocab_size", std::uint64_t{data.vocab().size()});
  const TrainConfig config = TrainConfig::from_config(kv);
  if (config.init_checkpoint.empty()) {
    if (config.model.vocab_size != data.vocab().size()) {
      throw ValidationError("model.vocab_size does not match the data vocabulary");
    }
    data.grammar->spec().validate_against(config.model.max_len);
  }

  TrainOptions options;
  options.resume = a.resume;
  options.stop_after = a.stop_after;
  const TrainResult r = train(config, data.train, data.valid, a.common.out, options);
  out << r.files.dir.string() << "\n";
  if (!r.log.empty()) out << r.log.back().to_json(false) << "\n";
  return kExitOk;
}

struct DecodeArgs {
  Common common;
  std::string data;
  std::string checkpoint;
  std::string split = "valid";
  std::string decoder = "beam";
  std::optional<std::size_t> beam;
  std::optional<std::size_t> groups;
  std::optional<double> lambda;
  std::optional<std::string> score_fn;
  std::optional<std::size_t> max_len;
  std::size_t top_k = 10;
  double top_p = 0.9;
  double temperature = 1.0;
};

int decode_cmd(const DecodeArgs& a, std::ostream& out) {
  const Data data = load_data(a.data);
  const Transformer model = load_model(a.checkpoint, data.vocab());
  DecodeSettings s = load_decode_settings(a.common.config);
  if (a.beam) s.beam.beam_size = *a.beam;
  if (a.groups) s.beam.n_groups = *a.groups;
  if (a.lambda) s.beam.diversity_strength = *a.lambda;
  if (a.score_fn) s.beam.score_fn = parse_score_fn(*a.score_fn);
  if (a.max_len) s.beam.max_len = *a.max_len;
  if (a.decoder == "beam") s.beam.n_groups = 1;
  sync_settings(s);
  SamplingConfig sampling{s.beam.max_len, s.beam.score_fn};

  const auto& pairs = data.split(a.split);
  const Vocab& vocab = data.vocab();
  std::ostringstream tsv;
  tsv << "# decoder=" << a.decoder << " seed=" << a.common.seed << "\n";
  std::size_t n_contexts = 0;
  for (std::size_t i : first_of_each_context(pairs)) {
    const TokenSeq& x = pairs[i].context;
    std::vector<Hypothesis> hyps;
    const std::uint64_t seed = mix_seed(a.common.seed, n_contexts);
    if (a.decoder == "beam") {
      hyps = beam_search(model, x, s.beam);
    } else if (a.decoder == "diverse_beam") {
      hyps = diverse_beam_search(model, x, s.beam);
    } else if (a.decoder == "greedy") {
      hyps = {greedy(model, x, s.beam.max_len, s.beam.score_fn)};
    } else if (a.decoder == "top_k") {
      hyps = {top_k_sample(model, x, a.top_k, a.temperature, seed, sampling)};
    } else {
      hyps = {nucleus_sample(model, x, a.top_p, seed, sampling)};
    }
    for (std::size_t r = 0; r < hyps.size(); ++r) {
      tsv << vocab.decode(x) << "\t" << r << "\t" << vocab.decode(strip_eos(hyps[r].tokens)) << "\t"
          << format_double(hyps[r].score) << "\n";
    }
    ++n_contexts;
  }
  write_output(a.common.out, tsv.str());
  out << "decoded " << n_contexts << " contexts with " << a.decoder << "\n";
  return kExitOk;
}

struct EvalArgs {
  Common common;
  std::string data;
  std::string checkpoint;
  std::string split = "valid";
};

int evaluate_cmd(const EvalArgs& a, std::ostream& out) {
  const Data data = load_data(a.data);
  const Transformer model = load_model(a.checkpoint, data.vocab());
  DecodeSettings s = load_decode_settings(a.common.config);
  sync_settings(s);
  const std::vector<TokenSeq> distractors = load_distractors(a.data, data.vocab());
  const EvalReport report =
      evaluate(model, data.split(a.split), distractors, EvalConfig{s.beam});
  const std::string records =
      metric_records(report, evaluation_hash(s, a.checkpoint, a.data, a.split), a.common.seed);
  write_output(a.common.out, records);
  out << records;
  return kExitOk;
}

struct RankArgs {
  EvalArgs eval;
  std::optional<std::string> score_fn;
};

int rank_cmd(const RankArgs& a, std::ostream& out) {
  const Data data = load_data(a.eval.data);
  const Transformer model = load_model(a.eval.checkpoint, data.vocab());
  DecodeSettings s = load_decode_settings(a.eval.common.config);
  if (a.score_fn) s.beam.score_fn = parse_score_fn(*a.score_fn);
  sync_settings(s);
  const std::vector<TokenSeq> distractors = load_distractors(a.eval.data, data.vocab());
  const auto& pairs = data.split(a.eval.split);
  const RankReport report = mean_rank(model, s.beam.score_fn, pairs, distractors);

  const std::set<TokenSeq> distractor_set(distractors.begin(), distractors.end());
  std::ostringstream csv;
  csv << "pair,rank\n";
  std::size_t k = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (distractor_set.count(pairs[i].response) != 0) continue;
    csv << i << "," << report.ranks.at(k++) << "\n";
  }
  write_output(a.eval.common.out, csv.str());
  out << metric_record("mean_rank", report.mean_rank,
                       evaluation_hash(s, a.eval.checkpoint, a.eval.data, a.eval.split),
                       a.eval.common.seed)
      << "\n";
  return kExitOk;
}

struct HistArgs {
  Common common;
  std::string data;
  std::vector<std::string> models;
  std::string split = "valid";
  std::size_t bins = kDefaultHistogramBins;
};

int ppl_hist_cmd(const HistArgs& a, std::ostream& out) {
  const Data data = load_data(a.data);
  const OracleLM oracle(*data.grammar);
  DecodeSettings s = load_decode_settings(a.common.config);
  sync_settings(s);
  const auto& pairs = data.split(a.split);

  std::vector<HistogramSeries> series;
  HistogramSeries human{"human", {}};
  for (const auto& p : pairs) human.values.push_back(oracle.perplexity(p.response));
  series.push_back(std::move(human));
  for (const std::string& spec : a.models) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw ValidationError("--model expects NAME=CHECKPOINT, got '" + spec + "'");
    }
    const Transformer model = load_model(spec.substr(eq + 1), data.vocab());
    HistogramSeries h{spec.substr(0, eq), {}};
    for (const TokenSeq& y : decode_top1(model, pairs, s.beam)) {
      h.values.push_back(oracle.perplexity(y));
    }
    series.push_back(std::move(h));
  }
  write_output(a.common.out, ppl_histogram(series, a.bins).to_csv());
  const std::string hash = hex64(fnv1a64(s.source.serialize() + a.split));
  for (const auto& h : series) {
    out << metric_record("median_oracle_ppl_" + h.name, median(h.values), hash, a.common.seed)
        << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic dialogue experiments with sequence-level training"};
  app.name("seqlab");
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a grammar corpus and distractors");
  add_common(gen_cmd, gen.common, "Grammar spec file", "Output data directory");
  gen_cmd->add_option("--pairs", gen.pairs, "Number of dialogue pairs")->capture_default_str();
  gen_cmd->add_option("--distractors", gen.distractors, "Number of ranking distractors")
      ->capture_default_str();

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "Train with MLE or the combined loss");
  add_common(train_sub, tr.common, "Training config file", "Runs root directory");
  train_sub->add_option("--data", tr.data, "Data directory from gen-data")->required();
  train_sub->add_option("--stage", tr.stage, "mle or combined")
      ->check(CLI::IsMember({"mle", "combined"}));
  train_sub->add_option("--init", tr.init, "Checkpoint to start from");
  train_sub->add_option("--score-fn", tr.score_fn, "logprob_avg or logits_avg")
      ->check(CLI::IsMember({"logprob_avg", "logits_avg"}));
  train_sub->add_option("--hypotheses", tr.hypotheses, "beam or diverse_beam")
      ->check(CLI::IsMember({"beam", "diverse_beam"}));
  train_sub->add_option("--max-steps", tr.max_steps, "Override max_steps");
  train_sub->add_option("--stop-after", tr.stop_after, "Stop after this step, keeping state");
  train_sub->add_flag("--resume", tr.resume, "Continue from saved trainer state");

  DecodeArgs dec;
  auto* decode_sub = app.add_subcommand("decode", "Decode every distinct context of a split");
  add_common(decode_sub, dec.common, "Decode config file", "Output TSV file");
  decode_sub->add_option("--data", dec.data, "Data directory")->required();
  decode_sub->add_option("--checkpoint", dec.checkpoint, "Model checkpoint")->required();
  decode_sub->add_option("--split", dec.split)->check(CLI::IsMember({"train", "valid"}))
      ->capture_default_str();
  decode_sub->add_option("--decoder", dec.decoder)
      ->check(CLI::IsMember({"beam", "diverse_beam", "greedy", "top_k", "nucleus"}))
      ->capture_default_str();
  decode_sub->add_option("--beam", dec.beam, "Beam size");
  decode_sub->add_option("--groups", dec.groups, "Diverse beam groups");
  decode_sub->add_option("--lambda", dec.lambda, "Diversity strength");
  decode_sub->add_option("--score-fn", dec.score_fn)
      ->check(CLI::IsMember({"logprob_avg", "logits_avg"}));
  decode_sub->add_option("--max-len", dec.max_len, "Output cap including EOS");
  decode_sub->add_option("--top-k", dec.top_k)->capture_default_str();
  decode_sub->add_option("--top-p", dec.top_p)->capture_default_str();
  decode_sub->add_option("--temperature", dec.temperature)->capture_default_str();

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("evaluate", "Write metric JSON-lines for a checkpoint");
  add_common(eval_sub, ev.common, "Decode config file", "Output JSON-lines file");
  eval_sub->add_option("--data", ev.data, "Data directory")->required();
  eval_sub->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  eval_sub->add_option("--split", ev.split)->check(CLI::IsMember({"train", "valid"}))
      ->capture_default_str();

  RankArgs rk;
  auto* rank_sub = app.add_subcommand("rank", "Rank groundtruth responses against distractors");
  add_common(rank_sub, rk.eval.common, "Decode config file", "Output CSV file");
  rank_sub->add_option("--data", rk.eval.data, "Data directory")->required();
  rank_sub->add_option("--checkpoint", rk.eval.checkpoint, "Model checkpoint")->required();
  rank_sub->add_option("--split", rk.eval.split)->check(CLI::IsMember({"train", "valid"}))
      ->capture_default_str();
  rank_sub->add_option("--score-fn", rk.score_fn)
      ->check(CLI::IsMember({"logprob_avg", "logits_avg"}));

  HistArgs hist;
  auto* hist_sub =
      app.add_subcommand("ppl-hist", "Oracle perplexity histogram of human and model responses");
  add_common(hist_sub, hist.common, "Decode config file", "Output CSV file");
  hist_sub->add_option("--data", hist.data, "Data directory")->required();
  hist_sub->add_option("--model", hist.models, "NAME=CHECKPOINT, repeatable");
  hist_sub->add_option("--split", hist.split)->check(CLI::IsMember({"train", "valid"}))
      ->capture_default_str();
  hist_sub->add_option("--bins", hist.bins)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    CLI::App* shown = &app;
    for (CLI::App* sub : app.get_subcommands()) shown = sub;
    out << shown->help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* shown = &app;
    for (CLI::App* sub : app.get_subcommands()) shown = sub;
    err << shown->help();
    return kExitValidation;
  }

  try {
    if (gen_cmd->parsed()) return gen_data(gen, out);
    if (train_sub->parsed()) {
      tr.seed_given = train_sub->count("--seed") > 0;
      return train_cmd(tr, out);
    }
    if (decode_sub->parsed()) return decode_cmd(dec, out);
    if (eval_sub->parsed()) return evaluate_cmd(ev, out);
    if (rank_sub->parsed()) return rank_cmd(rk, out);
    return ppl_hist_cmd(hist, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace seqlab::cli

#include "seqlab/harness/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "seqlab/error.hpp"
#include "seqlab/metrics/metrics.hpp"
#include "seqlab/model/checkpoint.hpp"
#include "seqlab/numerics/ops.hpp"
#include "seqlab/util/rng.hpp"

namespace seqlab {
namespace {

constexpr char kStateMagic[8] = {'S', 'E', 'Q', 'L', 'A', 'B', 'T', 'S'};
constexpr std::uint32_t kStateVersion = 1;
constexpr std::uint64_t kBatchStream = 0xBA7C4;
constexpr std::uint64_t kDropoutStream = 0xD80F;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated trainer state");
  return value;
}

void write_trainer_state(const std::filesystem::path& path, std::size_t step, const Adam& adam) {
  std::map<std::string, Tensor> records;
  for (const auto& [k, t] : adam.first_moments()) records.emplace("m/" + k, t);
  for (const auto& [k, t] : adam.second_moments()) records.emplace("v/" + k, t);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kStateMagic, sizeof(kStateMagic));
    put<std::uint32_t>(out, kStateVersion);
    put<std::uint64_t>(out, step);
    put<std::uint64_t>(out, adam.steps_taken());
    write_tensor_records(out, records);
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::size_t read_trainer_state(const std::filesystem::path& path, Adam& adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trainer state " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kStateMagic)) {
    throw IoError(path.string() + " is not a trainer state file");
  }
  if (get<std::uint32_t>(in) != kStateVersion) throw IoError("unsupported trainer state version");
  const auto step = static_cast<std::size_t>(get<std::uint64_t>(in));
  const auto adam_steps = static_cast<std::size_t>(get<std::uint64_t>(in));
  std::map<std::string, Tensor> m, v;
  for (auto& [key, t] : read_tensor_records(in)) {
    if (key.rfind("m/", 0) == 0) {
      m.emplace(key.substr(2), t);
    } else if (key.rfind("v/", 0) == 0) {
      v.emplace(key.substr(2), t);
    } else {
      throw IoError("unexpected record '" + key + "' in trainer state");
    }
  }
  adam.restore(adam_steps, std::move(m), std::move(v));
  return step;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

// ---------------------------------------------------------------- enums

std::string to_string(Stage stage) { return stage == Stage::kMle ? "mle" : "combined"; }

Stage parse_stage(std::string_view name) {
  if (name == "mle") return Stage::kMle;
  if (name == "combined") return Stage::kCombined;
  throw ValidationError("unknown stage '" + std::string(name) + "' (expected mle or combined)");
}

std::string to_string(HypothesisDecoder decoder) {
  return decoder == HypothesisDecoder::kBeam ? "beam" : "diverse_beam";
}

HypothesisDecoder parse_hypothesis_decoder(std::string_view name) {
  if (name == "beam") return HypothesisDecoder::kBeam;
  if (name == "diverse_beam") return HypothesisDecoder::kDiverseBeam;
  throw ValidationError("unknown hypothesis decoder '" + std::string(name) +
                        "' (expected beam or diverse_beam)");
}

// ---------------------------------------------------------------- TrainConfig

void TrainConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !finite(alpha) || !finite(beta)) {
    throw ValidationError("alpha and beta must be finite and >= 0");
  }
  if (!(learning_rate > 0.0) || !finite(learning_rate)) {
    throw ValidationError("learning_rate must be > 0");
  }
  if (!(clip_norm > 0.0)) throw ValidationError("clip_norm must be > 0");
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  if (max_steps == 0) throw ValidationError("max_steps must be >= 1");
  if (eval_every == 0) throw ValidationError("eval_every must be >= 1");
  if (stage == Stage::kCombined && init_checkpoint.empty()) {
    throw ValidationError("stage=combined requires init_checkpoint");
  }
  beam.validate();
  model.validate();
}

KeyValueConfig TrainConfig::to_config() const {
  KeyValueConfig c;
  c.set("version", std::uint64_t{1});
  c.set("stage", to_string(stage));
  c.set("alpha", alpha);
  c.set("beta", beta);
  c.set("learning_rate", learning_rate);
  c.set("warmup_steps", std::uint64_t{warmup_steps});
  c.set("clip_norm", clip_norm);
  c.set("batch_size", std::uint64_t{batch_size});
  c.set("max_steps", std::uint64_t{max_steps});
  c.set("eval_every", std::uint64_t{eval_every});
  c.set("seed", seed);
  c.set("score_fn", to_string(score_fn));
  c.set("hypothesis_decoder", to_string(hypothesis_decoder));
  c.set("beam.size", std::uint64_t{beam.beam_size});
  c.set("beam.max_len", std::uint64_t{beam.max_len});
  c.set("beam.groups", std::uint64_t{beam.n_groups});
  c.set("beam.diversity", beam.diversity_strength);
  c.set("init_checkpoint", init_checkpoint);
  c.set("model.vocab_size", std::uint64_t{model.vocab_size});
  c.set("model.d_model", std::uint64_t{model.d_model});
  c.set("model.n_heads", std::uint64_t{model.n_heads});
  c.set("model.n_enc_layers", std::uint64_t{model.n_enc_layers});
  c.set("model.n_dec_layers", std::uint64_t{model.n_dec_layers});
  c.set("model.d_ff", std::uint64_t{model.d_ff});
  c.set("model.max_len", std::uint64_t{model.max_len});
  c.set("model.dropout", model.dropout);
  c.set("model.tie_embeddings", model.tie_embeddings);
  return c;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& c) {
  c.require_known({"version", "stage", "alpha", "beta", "learning_rate", "warmup_steps",
                   "clip_norm", "batch_size", "max_steps", "eval_every", "seed", "score_fn",
                   "hypothesis_decoder", "beam.size", "beam.max_len", "beam.groups",
                   "beam.diversity", "init_checkpoint", "model.vocab_size", "model.d_model",
                   "model.n_heads", "model.n_enc_layers", "model.n_dec_layers", "model.d_ff",
                   "model.max_len", "model.dropout", "model.tie_embeddings"});
  if (c.get_uint("version", 1) != 1) throw ValidationError("unsupported train config version");
  TrainConfig t;
  t.stage = parse_stage(c.get_string("stage", to_string(t.stage)));
  t.alpha = c.get_double("alpha", t.alpha);
  t.beta = c.get_double("beta", t.beta);
  t.learning_rate = c.get_double("learning_rate", t.learning_rate);
  t.warmup_steps = c.get_uint("warmup_steps", t.warmup_steps);
  t.clip_norm = c.get_double("clip_norm", t.clip_norm);
  t.batch_size = c.get_uint("batch_size", t.batch_size);
  t.max_steps = c.get_uint("max_steps", t.max_steps);
  t.eval_every = c.get_uint("eval_every", t.eval_every);
  t.seed = c.get_uint("seed", t.seed);
  t.score_fn = parse_score_fn(c.get_string("score_fn", to_string(t.score_fn)));
  t.hypothesis_decoder = parse_hypothesis_decoder(
      c.get_string("hypothesis_decoder", to_string(t.hypothesis_decoder)));
  t.beam.beam_size = c.get_uint("beam.size", t.beam.beam_size);
  t.beam.max_len = c.get_uint("beam.max_len", t.beam.max_len);
  t.beam.n_groups = c.get_uint("beam.groups", t.beam.n_groups);
  t.beam.diversity_strength = c.get_double("beam.diversity", t.beam.diversity_strength);
  t.init_checkpoint = c.get_string("init_checkpoint", "");
  t.model.vocab_size = c.get_uint("model.vocab_size", t.model.vocab_size);
  t.model.d_model = c.get_uint("model.d_model", t.model.d_model);
  t.model.n_heads = c.get_uint("model.n_heads", t.model.n_heads);
  t.model.n_enc_layers = c.get_uint("model.n_enc_layers", t.model.n_enc_layers);
  t.model.n_dec_layers = c.get_uint("model.n_dec_layers", t.model.n_dec_layers);
  t.model.d_ff = c.get_uint("model.d_ff", t.model.d_ff);
  t.model.max_len = c.get_uint("model.max_len", t.model.max_len);
  t.model.dropout = c.get_double("model.dropout", t.model.dropout);
  t.model.tie_embeddings = c.get_bool("model.tie_embeddings", t.model.tie_embeddings);
  t.validate();
  return t;
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(to_config().serialize()); }

// ---------------------------------------------------------------- optimiser

double scheduled_learning_rate(double base, std::size_t warmup_steps, std::size_t step) {
  if (warmup_steps == 0 || step >= warmup_steps) return base;
  return base * (static_cast<double>(step) / static_cast<double>(warmup_steps));
}

double global_grad_norm(const Parameters& params) {
  double sq = 0.0;
  for (const auto& [_, t] : params) {
    if (!t.has_grad()) continue;
    for (const double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const Parameters& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& [_, t] : params) {
      if (!t.has_grad()) continue;
      Tensor handle = t;
      for (double& g : handle.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

Adam::Adam(const Parameters& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [path, t] : params) {
    m_.emplace(path, Tensor::zeros(t.shape()));
    v_.emplace(path, Tensor::zeros(t.shape()));
  }
}

void Adam::step(const Parameters& params, double learning_rate) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [path, param] : params) {
    if (!param.has_grad()) continue;
    Tensor p = param;
    auto w = p.mutable_data();
    const auto g = param.grad();
    auto m = m_.at(path).mutable_data();
    auto v = v_.at(path).mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::restore(std::size_t steps_taken, std::map<std::string, Tensor> m,
                   std::map<std::string, Tensor> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw IoError("trainer state does not match the model's parameters");
  }
  for (const auto& [path, t] : m_) {
    if (!m.contains(path) || !v.contains(path) || m.at(path).shape() != t.shape() ||
        v.at(path).shape() != t.shape()) {
      throw IoError("trainer state is missing or misshapes moments for " + path);
    }
  }
  t_ = steps_taken;
  m_ = std::move(m);
  v_ = std::move(v);
}

// ---------------------------------------------------------------- RunLog

std::string RunRecord::to_json(bool include_wall_clock) const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["l_token"] = l_token;
  j["l_seq"] = optional_json(l_seq);
  j["total"] = total;
  j["learning_rate"] = learning_rate;
  j["grad_norm"] = grad_norm;
  j["valid_ppl"] = optional_json(valid_ppl);
  if (include_wall_clock) j["wall_seconds"] = wall_seconds;
  return j.dump();
}

RunRecord RunRecord::from_json(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    RunRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.l_token = j.at("l_token").get<double>();
    r.l_seq = optional_from(j, "l_seq");
    r.total = j.at("total").get<double>();
    r.learning_rate = j.at("learning_rate").get<double>();
    r.grad_norm = j.at("grad_norm").get<double>();
    r.valid_ppl = optional_from(j, "valid_ppl");
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed run log record: ") + e.what());
  }
}

RunLog::RunLog(std::filesystem::path path, bool truncate) : path_(std::move(path)) {
  if (truncate) {
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw IoError("cannot create run log " + path_.string());
  } else if (std::filesystem::exists(path_)) {
    records_ = read(path_);
  }
}

void RunLog::append(const RunRecord& record) {
  if (!records_.empty() && record.step <= records_.back().step) {
    throw ContractError("run log steps must increase");
  }
  const std::string line = record.to_json() + "\n";
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to run log " + path_.string());
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.flush();
  if (!out) throw IoError("failed writing run log " + path_.string());
  records_.push_back(record);
}

std::vector<RunRecord> RunLog::read(const std::filesystem::path& path) {
  std::vector<RunRecord> out;
  const std::string text = read_file(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = std::string_view(text).substr(pos, nl - pos);
    if (!line.empty()) out.push_back(RunRecord::from_json(line));
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  return out;
}

// ---------------------------------------------------------------- training

std::string run_dir_name(const TrainConfig& config) {
  return hex64(config.hash()) + "-s" + std::to_string(config.seed);
}

std::filesystem::path RunFiles::checkpoint_at(std::size_t step) const {
  return dir / ("model-" + std::to_string(step) + ".ckpt");
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step,
                                       std::size_t batch_size, std::size_t n_examples) {
  if (n_examples == 0) throw ValidationError("no training examples");
  if (step == 0) throw ContractError("training steps are 1-based");
  std::vector<std::size_t> out;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm;
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::size_t position = (step - 1) * batch_size + j;
    const std::size_t epoch = position / n_examples;
    if (epoch != cached_epoch) {
      perm.resize(n_examples);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(mix_seed(seed, epoch, kBatchStream));
      shuffle(perm, rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[position % n_examples]);
  }
  return out;
}

namespace {

struct StepLosses {
  Tensor loss;
  double l_token = 0.0;
  std::optional<double> l_seq;
};

std::vector<Hypothesis> decode_hypotheses(const Transformer& model, const TrainConfig& config,
                                          std::span<const TokenId> x) {
  BeamConfig beam = config.beam;
  beam.score_fn = config.score_fn;
  return config.hypothesis_decoder == HypothesisDecoder::kDiverseBeam
             ? diverse_beam_search(model, x, beam)
             : beam_search(model, x, beam);
}

StepLosses batch_loss(Tape& tape, const Transformer& model, const TrainConfig& config,
                      std::span<const DialoguePair> pairs, std::span<const std::size_t> batch,
                      std::size_t step) {
  std::vector<std::vector<TokenSeq>> hypotheses(batch.size());
  if (config.stage == Stage::kCombined) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const DialoguePair& ex = pairs[batch[i]];
      std::vector<TokenSeq> decoded;
      for (auto& h : decode_hypotheses(model, config, ex.context)) {
        decoded.push_back(std::move(h.tokens));
      }
      hypotheses[i] = without_groundtruth(decoded, with_eos(ex.response));
    }
  }

  std::vector<Tensor> losses;
  double token_sum = 0.0;
  double seq_sum = 0.0;
  std::size_t seq_count = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const DialoguePair& ex = pairs[batch[i]];
    tape.seed_dropout(mix_seed(config.seed, step, kDropoutStream + i));
    const TokenSeq y = with_eos(ex.response);
    const Tensor memory = model.encode(tape, ex.context);
    const Tensor logits = model.forward_teacher_forcing(tape, memory, y);
    const Tensor l_token = token_ce(tape, logits, y);
    token_sum += l_token.item();
    if (config.stage == Stage::kMle) {
      losses.push_back(l_token);
      continue;
    }
    if (hypotheses[i].empty()) {
      losses.push_back(scale(tape, l_token, config.alpha));
      continue;
    }
    const Tensor gt = sequence_score(tape, config.score_fn, logits, y);
    std::vector<Tensor> hyp_scores;
    for (const TokenSeq& h : hypotheses[i]) {
      const Tensor h_logits = model.forward_teacher_forcing(tape, memory, h);
      hyp_scores.push_back(sequence_score(tape, config.score_fn, h_logits, h));
    }
    const Tensor l_seq = seq_ce_approx(tape, gt, hyp_scores);
    seq_sum += l_seq.item();
    ++seq_count;
    losses.push_back(combined_loss(tape, l_token, l_seq, config.alpha, config.beta));
  }
  StepLosses out;
  out.loss = mean(tape, stack(tape, losses));
  out.l_token = token_sum / static_cast<double>(batch.size());
  if (seq_count > 0) out.l_seq = seq_sum / static_cast<double>(seq_count);
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const DialoguePair> train_pairs,
                  std::span<const DialoguePair> valid_pairs, const std::filesystem::path& runs_root,
                  const TrainOptions& options) {
  config.validate();
  if (train_pairs.empty()) throw ValidationError("training corpus is empty");

  RunFiles files{runs_root / run_dir_name(config)};
  std::error_code ec;
  std::filesystem::create_directories(files.dir, ec);
  if (ec) throw IoError("cannot create run directory " + files.dir.string() + ": " + ec.message());

  std::size_t start_step = 0;
  const bool resuming = options.resume && std::filesystem::exists(files.trainer_state());

  Transformer model = [&] {
    if (!config.init_checkpoint.empty()) {
      Checkpoint ck = read_checkpoint(config.init_checkpoint);
      return Transformer(ck.config, std::move(ck.parameters));
    }
    return Transformer(config.model, config.seed);
  }();
  Adam adam(model.parameters());

  if (resuming) {
    start_step = read_trainer_state(files.trainer_state(), adam);
    Checkpoint ck = read_checkpoint(files.checkpoint_at(start_step));
    model = Transformer(ck.config, std::move(ck.parameters));
  } else {
    config.to_config().save(files.config());
  }

  RunLog log(files.log(), !resuming);
  if (resuming) {
    std::vector<RunRecord> kept;
    for (const auto& r : log.records()) {
      if (r.step <= start_step) kept.push_back(r);
    }
    log = RunLog(files.log(), true);
    for (const auto& r : kept) log.append(r);
  }

  const auto clock_start = std::chrono::steady_clock::now();
  const std::size_t last_step =
      options.stop_after > 0 ? std::min(options.stop_after, config.max_steps) : config.max_steps;

  auto save_state = [&](std::size_t step) {
    write_checkpoint(files.checkpoint_at(step), model.config(), model.parameters());
    write_trainer_state(files.trainer_state(), step, adam);
  };

  for (std::size_t step = start_step + 1; step <= last_step; ++step) {
    const auto batch = batch_indices(config.seed, step, config.batch_size, train_pairs.size());
    RunRecord record;
    record.step = step;
    record.learning_rate = scheduled_learning_rate(config.learning_rate, config.warmup_steps, step);
    try {
      model.parameters().zero_grad();
      Tape tape(Mode::kTrain);
      const StepLosses losses = batch_loss(tape, model, config, train_pairs, batch, step);
      record.l_token = losses.l_token;
      record.l_seq = losses.l_seq;
      record.total = losses.loss.item();
      if (!finite(record.total)) throw NumericError("non-finite training loss");
      tape.backward(losses.loss);
      record.grad_norm = clip_grad_norm(model.parameters(), config.clip_norm);
      if (!finite(record.grad_norm)) throw NumericError("non-finite gradient norm");
    } catch (const NumericError& e) {
      write_checkpoint(files.diverged(), model.config(), model.parameters());
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what() +
                         " (diagnostic checkpoint " + files.diverged().string() + ")");
    }
    adam.step(model.parameters(), record.learning_rate);

    const bool eval_point = step % config.eval_every == 0 || step == last_step;
    if (eval_point && !valid_pairs.empty()) record.valid_ppl = perplexity(model, valid_pairs);
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
    log.append(record);
    if (eval_point) save_state(step);
  }
  model.parameters().zero_grad();
  if (last_step == config.max_steps) {
    write_checkpoint(files.checkpoint(), model.config(), model.parameters());
  }
  return TrainResult{std::move(model), files, log.records()};
}

}  // namespace seqlab

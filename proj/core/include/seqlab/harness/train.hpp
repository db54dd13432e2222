#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqlab/datagen/grammar.hpp"
#include "seqlab/decoding/decoders.hpp"
#include "seqlab/losses/losses.hpp"
#include "seqlab/model/config.hpp"
#include "seqlab/model/transformer.hpp"
#include "seqlab/util/kv_config.hpp"

namespace seqlab {

enum class Stage { kMle, kCombined };
enum class HypothesisDecoder { kBeam, kDiverseBeam };

std::string to_string(Stage stage);
Stage parse_stage(std::string_view name);
std::string to_string(HypothesisDecoder decoder);
HypothesisDecoder parse_hypothesis_decoder(std::string_view name);

struct TrainConfig {
  Stage stage = Stage::kMle;
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  double learning_rate = 3e-4;
  std::size_t warmup_steps = 200;
  double clip_norm = 1.0;
  std::size_t batch_size = 32;
  std::size_t max_steps = 3000;
  std::size_t eval_every = 500;
  std::uint64_t seed = 1;
  // Sequence score for the sequence-level loss and for hypothesis search.
  ScoreFn score_fn = ScoreFn::kLogProbAvg;
  HypothesisDecoder hypothesis_decoder = HypothesisDecoder::kBeam;
  BeamConfig beam;
  // Parameters to start from. Required for the combined stage; optional for
  // MLE, which otherwise initialises from `seed`.
  std::string init_checkpoint;
  // Used only when there is no init checkpoint.
  ModelConfig model;

  void validate() const;

  // Flat key=value form with a `version` key; model fields are prefixed
  // with `model.` and beam fields with `beam.`.
  KeyValueConfig to_config() const;
  static TrainConfig from_config(const KeyValueConfig& cfg);
  std::uint64_t hash() const;
};

// Learning rate at 1-based `step`: linear warmup, then constant.
double scheduled_learning_rate(double base, std::size_t warmup_steps, std::size_t step);

// Global L2 norm of all parameter gradients (missing gradients count as 0).
double global_grad_norm(const Parameters& params);
// Rescales gradients so their global norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(const Parameters& params, double max_norm);

class Adam {
 public:
  explicit Adam(const Parameters& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // One update with bias correction using the current gradients.
  void step(const Parameters& params, double learning_rate);

  std::size_t steps_taken() const { return t_; }
  const std::map<std::string, Tensor>& first_moments() const { return m_; }
  const std::map<std::string, Tensor>& second_moments() const { return v_; }
  void restore(std::size_t steps_taken, std::map<std::string, Tensor> m,
               std::map<std::string, Tensor> v);

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct RunRecord {
  std::size_t step = 0;
  double l_token = 0.0;
  std::optional<double> l_seq;  // absent in the MLE stage
  double total = 0.0;
  double learning_rate = 0.0;
  double grad_norm = 0.0;  // before clipping
  std::optional<double> valid_ppl;
  double wall_seconds = 0.0;

  // JSON object on one line; `wall_seconds` is omitted when
  // `include_wall_clock` is false.
  std::string to_json(bool include_wall_clock = true) const;
  static RunRecord from_json(std::string_view line);
};

// Append-only JSON-lines log. Each record is written with a single write
// and flushed before append returns.
class RunLog {
 public:
  explicit RunLog(std::filesystem::path path, bool truncate = true);

  void append(const RunRecord& record);
  const std::vector<RunRecord>& records() const { return records_; }
  const std::filesystem::path& path() const { return path_; }

  static std::vector<RunRecord> read(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  std::vector<RunRecord> records_;
};

// `<config hash>-s<seed>`.
std::string run_dir_name(const TrainConfig& config);

// Files inside a run directory.
struct RunFiles {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "train.cfg"; }
  std::filesystem::path log() const { return dir / "runlog.jsonl"; }
  std::filesystem::path checkpoint() const { return dir / "model.ckpt"; }
  std::filesystem::path checkpoint_at(std::size_t step) const;
  std::filesystem::path trainer_state() const { return dir / "trainer.state"; }
  std::filesystem::path diverged() const { return dir / "diverged.ckpt"; }
};

struct TrainOptions {
  // Continue from the run directory's trainer state if one exists.
  bool resume = false;
  // Stop (saving full state) after this step; 0 means run to max_steps.
  std::size_t stop_after = 0;
};

struct TrainResult {
  Transformer model;
  RunFiles files;
  std::vector<RunRecord> log;
};

// Trains under `runs_root / run_dir_name(config)`. Writes the config, a
// JSON-lines log, a checkpoint and trainer state every eval_every steps and
// at the end, and model.ckpt with the final parameters. A non-finite loss or
// gradient writes diverged.ckpt and throws NumericError.
TrainResult train(const TrainConfig& config, std::span<const DialoguePair> train_pairs,
                  std::span<const DialoguePair> valid_pairs, const std::filesystem::path& runs_root,
                  const TrainOptions& options = {});

// Example indices of the 1-based training step: consecutive slices of a
// fresh permutation per epoch, a pure function of (seed, step).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step,
                                       std::size_t batch_size, std::size_t n_examples);

}  // namespace seqlab

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "seqlab/model/config.hpp"
#include "seqlab/model/step_model.hpp"
#include "seqlab/numerics/tape.hpp"
#include "seqlab/numerics/tensor.hpp"
#include "seqlab/types.hpp"

namespace seqlab {

// Encoder output plus the cross-attention keys/values every decoder layer
// derives from it.
struct EncoderMemory {
  Tensor memory;                  // |x| × d_model
  std::vector<Tensor> cross_keys;  // per decoder layer, |x| × d_model
  std::vector<Tensor> cross_values;
};

// Cached decoder activations for incremental decoding.
struct DecoderState {
  std::shared_ptr<const EncoderMemory> encoder;
  std::vector<Tensor> self_keys;    // per layer, length × d_model
  std::vector<Tensor> self_values;
  TokenSeq consumed;                // decoder inputs so far, starting with kBos
};

// Pre-LayerNorm encoder-decoder transformer with sinusoidal positions and
// (optionally) one embedding matrix shared by encoder input, decoder input
// and output projection.
class Transformer : public StepModel {
 public:
  Transformer(const ModelConfig& config, std::uint64_t seed);
  // Adopts existing parameters, e.g. from a checkpoint.
  Transformer(const ModelConfig& config, Parameters parameters);

  const ModelConfig& config() const { return config_; }
  const Parameters& parameters() const { return params_; }

  const Tensor& encoder_embedding() const { return enc_embed_; }
  const Tensor& decoder_embedding() const { return dec_embed_; }
  // V × d_model; logits are hidden · output_projectionᵀ.
  const Tensor& output_projection() const { return out_proj_; }

  // x: 1..max_len content ids. Returns |x| × d_model.
  Tensor encode(Tape& tape, std::span<const TokenId> x) const;

  // y: target tokens (normally ending in kEos). The decoder reads kBos
  // followed by y without its last token; row i of the result holds the
  // logits of P(y_i | x, y_<i).
  Tensor forward_teacher_forcing(Tape& tape, const Tensor& memory,
                                 std::span<const TokenId> y) const;
  Tensor forward_teacher_forcing(Tape& tape, std::span<const TokenId> x,
                                 std::span<const TokenId> y) const;

  // Eval-mode encoding plus cross-attention caches.
  DecoderState begin_decoding(std::span<const TokenId> x) const;
  // Appends `token` to the state and returns the next-position logits.
  std::vector<double> decode_step(DecoderState& state, TokenId token) const;

  // StepModel
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t max_len() const override { return config_.max_len; }
  std::unique_ptr<DecoderSession> start(std::span<const TokenId> x) const override;
  // Encodes x once and runs one eval-mode teacher-forced pass per target.
  std::vector<Tensor> teacher_forced_logits(std::span<const TokenId> x,
                                            std::span<const TokenSeq> ys) const override;

 private:
  struct Attention {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct FeedForward {
    Tensor w1, b1, w2, b2;
  };
  struct Norm {
    Tensor gain, bias;
  };
  struct EncoderLayer {
    Norm ln_attn, ln_ff;
    Attention self_attn;
    FeedForward ff;
  };
  struct DecoderLayer {
    Norm ln_self, ln_cross, ln_ff;
    Attention self_attn, cross_attn;
    FeedForward ff;
  };

  void bind_parameters();
  void validate_tokens(std::span<const TokenId> tokens, const char* what) const;

  Tensor embed(Tape& tape, const Tensor& table, std::span<const TokenId> ids,
               std::size_t first_position) const;
  Tensor attend(Tape& tape, const Attention& attn, const Tensor& q, const Tensor& k,
                const Tensor& v, bool causal, std::size_t causal_offset) const;
  Tensor feed_forward(Tape& tape, const FeedForward& ff, const Tensor& x) const;
  Tensor norm(Tape& tape, const Norm& n, const Tensor& x) const;
  Tensor project(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) const;
  Tensor logits(Tape& tape, const Tensor& hidden) const;

  ModelConfig config_;
  Parameters params_;
  Tensor positions_;  // max_len × d_model, constant

  Tensor enc_embed_, dec_embed_, out_proj_;
  std::vector<EncoderLayer> enc_layers_;
  std::vector<DecoderLayer> dec_layers_;
  Norm enc_final_, dec_final_;
};

}  // namespace seqlab

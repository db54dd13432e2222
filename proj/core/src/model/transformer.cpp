#include "seqlab/model/transformer.hpp"

#include <cmath>
#include <random>
#include <string>

#include "seqlab/error.hpp"
#include "seqlab/numerics/ops.hpp"

namespace seqlab {
namespace {

Tensor sinusoidal_positions(std::size_t max_len, std::size_t d_model) {
  std::vector<double> pe(max_len * d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) /
                                                static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) * rate;
      pe[pos * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({max_len, d_model}, std::move(pe));
}

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(num_elements(shape));
    for (double& x : v) x = dist(rng_);
    return Tensor(std::move(shape), std::move(v), true);
  }
  // Glorot-normal for a fan_in × fan_out weight.
  Tensor glorot(std::size_t fan_in, std::size_t fan_out) {
    return normal({fan_in, fan_out}, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
  }
  static Tensor constant(std::size_t n, double value) { return Tensor::filled({n}, value, true); }

 private:
  std::mt19937_64 rng_;
};

void add_attention(Parameters& p, Initializer& init, const std::string& prefix, std::size_t d) {
  for (const char* name : {"q", "k", "v", "o"}) {
    p.add(prefix + "." + name + ".weight", init.glorot(d, d));
    p.add(prefix + "." + name + ".bias", Initializer::constant(d, 0.0));
  }
}

void add_norm(Parameters& p, const std::string& prefix, std::size_t d) {
  p.add(prefix + ".gain", Initializer::constant(d, 1.0));
  p.add(prefix + ".bias", Initializer::constant(d, 0.0));
}

void add_feed_forward(Parameters& p, Initializer& init, const std::string& prefix, std::size_t d,
                      std::size_t d_ff) {
  p.add(prefix + ".w1", init.glorot(d, d_ff));
  p.add(prefix + ".b1", Initializer::constant(d_ff, 0.0));
  p.add(prefix + ".w2", init.glorot(d_ff, d));
  p.add(prefix + ".b2", Initializer::constant(d, 0.0));
}

Parameters initial_parameters(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Initializer init(seed);
  Parameters p;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  if (c.tie_embeddings) {
    p.add("embedding.shared", init.normal({c.vocab_size, c.d_model}, embed_std));
  } else {
    p.add("embedding.encoder", init.normal({c.vocab_size, c.d_model}, embed_std));
    p.add("embedding.decoder", init.normal({c.vocab_size, c.d_model}, embed_std));
    p.add("embedding.output", init.normal({c.vocab_size, c.d_model}, embed_std));
  }
  for (std::size_t l = 0; l < c.n_enc_layers; ++l) {
    const std::string prefix = "encoder.layers." + std::to_string(l);
    add_norm(p, prefix + ".ln_attn", c.d_model);
    add_attention(p, init, prefix + ".self_attn", c.d_model);
    add_norm(p, prefix + ".ln_ff", c.d_model);
    add_feed_forward(p, init, prefix + ".ff", c.d_model, c.d_ff);
  }
  add_norm(p, "encoder.final_ln", c.d_model);
  for (std::size_t l = 0; l < c.n_dec_layers; ++l) {
    const std::string prefix = "decoder.layers." + std::to_string(l);
    add_norm(p, prefix + ".ln_self", c.d_model);
    add_attention(p, init, prefix + ".self_attn", c.d_model);
    add_norm(p, prefix + ".ln_cross", c.d_model);
    add_attention(p, init, prefix + ".cross_attn", c.d_model);
    add_norm(p, prefix + ".ln_ff", c.d_model);
    add_feed_forward(p, init, prefix + ".ff", c.d_model, c.d_ff);
  }
  add_norm(p, "decoder.final_ln", c.d_model);
  return p;
}

class TransformerSession : public DecoderSession {
 public:
  TransformerSession(const Transformer& model, DecoderState state)
      : model_(&model), state_(std::move(state)) {}

  std::unique_ptr<DecoderSession> clone() const override {
    return std::make_unique<TransformerSession>(*this);
  }
  std::vector<double> step(TokenId token) override { return model_->decode_step(state_, token); }
  std::size_t length() const override { return state_.consumed.size(); }

 private:
  const Transformer* model_;
  DecoderState state_;
};

}  // namespace

Transformer::Transformer(const ModelConfig& config, std::uint64_t seed)
    : Transformer(config, initial_parameters(config, seed)) {}

Transformer::Transformer(const ModelConfig& config, Parameters parameters)
    : config_(config), params_(std::move(parameters)) {
  config_.validate();
  positions_ = sinusoidal_positions(config_.max_len, config_.d_model);
  bind_parameters();
}

void Transformer::bind_parameters() {
  const std::size_t d = config_.d_model;
  auto get = [&](const std::string& path, const Shape& shape) {
    const Tensor& t = params_.at(path);
    if (t.shape() != shape) {
      throw ValidationError("parameter " + path + " has shape " + to_string(t.shape()) +
                            ", expected " + to_string(shape));
    }
    return t;
  };
  auto attention = [&](const std::string& prefix) {
    Attention a;
    a.wq = get(prefix + ".q.weight", {d, d});
    a.bq = get(prefix + ".q.bias", {d});
    a.wk = get(prefix + ".k.weight", {d, d});
    a.bk = get(prefix + ".k.bias", {d});
    a.wv = get(prefix + ".v.weight", {d, d});
    a.bv = get(prefix + ".v.bias", {d});
    a.wo = get(prefix + ".o.weight", {d, d});
    a.bo = get(prefix + ".o.bias", {d});
    return a;
  };
  auto norm = [&](const std::string& prefix) {
    return Norm{get(prefix + ".gain", {d}), get(prefix + ".bias", {d})};
  };
  auto feed_forward = [&](const std::string& prefix) {
    return FeedForward{get(prefix + ".w1", {d, config_.d_ff}), get(prefix + ".b1", {config_.d_ff}),
                       get(prefix + ".w2", {config_.d_ff, d}), get(prefix + ".b2", {d})};
  };

  const Shape embed_shape{config_.vocab_size, d};
  if (config_.tie_embeddings) {
    enc_embed_ = get("embedding.shared", embed_shape);
    dec_embed_ = enc_embed_;
    out_proj_ = enc_embed_;
  } else {
    enc_embed_ = get("embedding.encoder", embed_shape);
    dec_embed_ = get("embedding.decoder", embed_shape);
    out_proj_ = get("embedding.output", embed_shape);
  }

  enc_layers_.clear();
  for (std::size_t l = 0; l < config_.n_enc_layers; ++l) {
    const std::string prefix = "encoder.layers." + std::to_string(l);
    enc_layers_.push_back(EncoderLayer{norm(prefix + ".ln_attn"), norm(prefix + ".ln_ff"),
                                       attention(prefix + ".self_attn"),
                                       feed_forward(prefix + ".ff")});
  }
  enc_final_ = norm("encoder.final_ln");
  dec_layers_.clear();
  for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
    const std::string prefix = "decoder.layers." + std::to_string(l);
    dec_layers_.push_back(DecoderLayer{norm(prefix + ".ln_self"), norm(prefix + ".ln_cross"),
                                       norm(prefix + ".ln_ff"), attention(prefix + ".self_attn"),
                                       attention(prefix + ".cross_attn"),
                                       feed_forward(prefix + ".ff")});
  }
  dec_final_ = norm("decoder.final_ln");

  const std::size_t expected = 1 + (config_.tie_embeddings ? 0 : 2) + 2 +
                               config_.n_enc_layers * (4 + 8 + 4) +
                               config_.n_dec_layers * (6 + 16 + 4) + 2;
  if (params_.size() != expected) {
    throw ValidationError("parameter set has " + std::to_string(params_.size()) +
                          " tensors, expected " + std::to_string(expected));
  }
}

void Transformer::validate_tokens(std::span<const TokenId> tokens, const char* what) const {
  if (tokens.empty()) throw ValidationError(std::string(what) + " is empty");
  if (tokens.size() > config_.max_len) {
    throw LengthError(std::string(what) + " has " + std::to_string(tokens.size()) +
                      " tokens, max_len is " + std::to_string(config_.max_len));
  }
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw ValidationError(std::string(what) + " contains token " + std::to_string(t) +
                            " outside vocabulary of size " + std::to_string(config_.vocab_size));
    }
  }
}

Tensor Transformer::embed(Tape& tape, const Tensor& table, std::span<const TokenId> ids,
                          std::size_t first_position) const {
  const std::size_t d = config_.d_model;
  Tensor x = scale(tape, embedding(tape, table, ids), std::sqrt(static_cast<double>(d)));
  std::vector<double> pe(positions_.data().begin() + first_position * d,
                         positions_.data().begin() + (first_position + ids.size()) * d);
  x = add(tape, x, Tensor({ids.size(), d}, std::move(pe)));
  return dropout(tape, x, config_.dropout);
}

Tensor Transformer::project(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) const {
  return add_bias(tape, matmul(tape, x, w), b);
}

Tensor Transformer::norm(Tape& tape, const Norm& n, const Tensor& x) const {
  return layer_norm(tape, x, n.gain, n.bias);
}

Tensor Transformer::attend(Tape& tape, const Attention& attn, const Tensor& q, const Tensor& k,
                           const Tensor& v, bool causal, std::size_t causal_offset) const {
  const std::size_t head_dim = config_.d_model / config_.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  heads.reserve(config_.n_heads);
  for (std::size_t h = 0; h < config_.n_heads; ++h) {
    const std::size_t begin = h * head_dim;
    Tensor qh = slice_cols(tape, q, begin, head_dim);
    Tensor kh = slice_cols(tape, k, begin, head_dim);
    Tensor vh = slice_cols(tape, v, begin, head_dim);
    Tensor scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt);
    Tensor weights =
        causal ? causal_softmax(tape, scores, causal_offset) : softmax(tape, scores, -1);
    heads.push_back(matmul(tape, weights, vh));
  }
  return project(tape, concat_cols(tape, heads), attn.wo, attn.bo);
}

Tensor Transformer::feed_forward(Tape& tape, const FeedForward& ff, const Tensor& x) const {
  return project(tape, gelu(tape, project(tape, x, ff.w1, ff.b1)), ff.w2, ff.b2);
}

Tensor Transformer::logits(Tape& tape, const Tensor& hidden) const {
  return matmul_nt(tape, norm(tape, dec_final_, hidden), out_proj_);
}

Tensor Transformer::encode(Tape& tape, std::span<const TokenId> x) const {
  validate_tokens(x, "encoder input");
  Tensor h = embed(tape, enc_embed_, x, 0);
  for (const EncoderLayer& layer : enc_layers_) {
    Tensor a = norm(tape, layer.ln_attn, h);
    Tensor q = project(tape, a, layer.self_attn.wq, layer.self_attn.bq);
    Tensor k = project(tape, a, layer.self_attn.wk, layer.self_attn.bk);
    Tensor v = project(tape, a, layer.self_attn.wv, layer.self_attn.bv);
    h = add(tape, h, dropout(tape, attend(tape, layer.self_attn, q, k, v, false, 0), config_.dropout));
    Tensor b = norm(tape, layer.ln_ff, h);
    h = add(tape, h, dropout(tape, feed_forward(tape, layer.ff, b), config_.dropout));
  }
  return norm(tape, enc_final_, h);
}

Tensor Transformer::forward_teacher_forcing(Tape& tape, const Tensor& memory,
                                            std::span<const TokenId> y) const {
  validate_tokens(y, "target");
  if (memory.rank() != 2 || memory.cols() != config_.d_model) {
    throw DimensionError("encoder memory has shape " + to_string(memory.shape()));
  }
  TokenSeq inputs;
  inputs.reserve(y.size());
  inputs.push_back(kBos);
  inputs.insert(inputs.end(), y.begin(), y.end() - 1);

  Tensor h = embed(tape, dec_embed_, inputs, 0);
  for (const DecoderLayer& layer : dec_layers_) {
    Tensor a = norm(tape, layer.ln_self, h);
    Tensor q = project(tape, a, layer.self_attn.wq, layer.self_attn.bq);
    Tensor k = project(tape, a, layer.self_attn.wk, layer.self_attn.bk);
    Tensor v = project(tape, a, layer.self_attn.wv, layer.self_attn.bv);
    h = add(tape, h, dropout(tape, attend(tape, layer.self_attn, q, k, v, true, 0), config_.dropout));

    Tensor b = norm(tape, layer.ln_cross, h);
    Tensor cq = project(tape, b, layer.cross_attn.wq, layer.cross_attn.bq);
    Tensor ck = project(tape, memory, layer.cross_attn.wk, layer.cross_attn.bk);
    Tensor cv = project(tape, memory, layer.cross_attn.wv, layer.cross_attn.bv);
    h = add(tape, h,
            dropout(tape, attend(tape, layer.cross_attn, cq, ck, cv, false, 0), config_.dropout));

    Tensor c = norm(tape, layer.ln_ff, h);
    h = add(tape, h, dropout(tape, feed_forward(tape, layer.ff, c), config_.dropout));
  }
  return logits(tape, h);
}

Tensor Transformer::forward_teacher_forcing(Tape& tape, std::span<const TokenId> x,
                                            std::span<const TokenId> y) const {
  return forward_teacher_forcing(tape, encode(tape, x), y);
}

DecoderState Transformer::begin_decoding(std::span<const TokenId> x) const {
  Tape tape(Mode::kEval);
  tape.set_recording(false);
  auto enc = std::make_shared<EncoderMemory>();
  enc->memory = encode(tape, x);
  for (const DecoderLayer& layer : dec_layers_) {
    enc->cross_keys.push_back(project(tape, enc->memory, layer.cross_attn.wk, layer.cross_attn.bk));
    enc->cross_values.push_back(
        project(tape, enc->memory, layer.cross_attn.wv, layer.cross_attn.bv));
  }
  DecoderState state;
  state.encoder = std::move(enc);
  state.self_keys.resize(dec_layers_.size());
  state.self_values.resize(dec_layers_.size());
  return state;
}

std::vector<double> Transformer::decode_step(DecoderState& state, TokenId token) const {
  const std::size_t position = state.consumed.size();
  if (position >= config_.max_len) {
    throw LengthError("decoder state already holds max_len=" + std::to_string(config_.max_len) +
                      " tokens");
  }
  const TokenId ids[1] = {token};
  validate_tokens(ids, "decoder input");

  Tape tape(Mode::kEval);
  tape.set_recording(false);
  Tensor h = embed(tape, dec_embed_, ids, position);
  for (std::size_t l = 0; l < dec_layers_.size(); ++l) {
    const DecoderLayer& layer = dec_layers_[l];
    Tensor a = norm(tape, layer.ln_self, h);
    Tensor q = project(tape, a, layer.self_attn.wq, layer.self_attn.bq);
    Tensor k = project(tape, a, layer.self_attn.wk, layer.self_attn.bk);
    Tensor v = project(tape, a, layer.self_attn.wv, layer.self_attn.bv);
    Tensor& keys = state.self_keys[l];
    Tensor& values = state.self_values[l];
    keys = keys.defined() ? concat_rows(tape, keys, k) : k;
    values = values.defined() ? concat_rows(tape, values, v) : v;
    // A single query row at `position` sees every cached key.
    h = add(tape, h, attend(tape, layer.self_attn, q, keys, values, true, position));

    Tensor b = norm(tape, layer.ln_cross, h);
    Tensor cq = project(tape, b, layer.cross_attn.wq, layer.cross_attn.bq);
    h = add(tape, h,
            attend(tape, layer.cross_attn, cq, state.encoder->cross_keys[l],
                   state.encoder->cross_values[l], false, 0));

    Tensor c = norm(tape, layer.ln_ff, h);
    h = add(tape, h, feed_forward(tape, layer.ff, c));
  }
  state.consumed.push_back(token);
  Tensor out = logits(tape, h);
  return {out.data().begin(), out.data().end()};
}

std::unique_ptr<DecoderSession> Transformer::start(std::span<const TokenId> x) const {
  return std::make_unique<TransformerSession>(*this, begin_decoding(x));
}

}  // namespace seqlab

namespace seqlab {

std::vector<Tensor> Transformer::teacher_forced_logits(std::span<const TokenId> x,
                                                       std::span<const TokenSeq> ys) const {
  Tape tape(Mode::kEval);
  tape.set_recording(false);
  const Tensor memory = encode(tape, x);
  std::vector<Tensor> out;
  out.reserve(ys.size());
  for (const TokenSeq& y : ys) out.push_back(forward_teacher_forcing(tape, memory, y));
  return out;
}

}  // namespace seqlab

#include "seqlab/model/config.hpp"

#include "seqlab/error.hpp"
#include "seqlab/types.hpp"

namespace seqlab {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("model config: " + msg);
  };
  require(vocab_size > static_cast<std::size_t>(kFirstContentToken),
          "vocab_size must leave room for content tokens");
  require(d_model >= 1 && n_heads >= 1 && d_ff >= 1 && max_len >= 1, "dimensions must be >= 1");
  require(n_enc_layers >= 1 && n_dec_layers >= 1, "layer counts must be >= 1");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
}

void Parameters::add(const std::string& path, Tensor tensor) {
  if (!tensors_.emplace(path, std::move(tensor)).second) {
    throw ValidationError("duplicate parameter path " + path);
  }
}

const Tensor& Parameters::at(const std::string& path) const {
  auto it = tensors_.find(path);
  if (it == tensors_.end()) throw ValidationError("missing parameter " + path);
  return it->second;
}

std::size_t Parameters::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

void Parameters::zero_grad() const {
  for (const auto& [_, t] : tensors_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

Parameters Parameters::clone() const {
  Parameters out;
  for (const auto& [path, t] : tensors_) out.add(path, t.clone(t.requires_grad()));
  return out;
}

}  // namespace seqlab

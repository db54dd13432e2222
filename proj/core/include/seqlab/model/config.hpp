#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "seqlab/numerics/tensor.hpp"

namespace seqlab {

struct ModelConfig {
  std::size_t vocab_size = 123;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_ff = 128;
  std::size_t max_len = 32;
  double dropout = 0.1;
  bool tie_embeddings = true;

  // Throws ValidationError when a field is out of range.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Named parameter tensors, iterated in path order.
class Parameters {
 public:
  void add(const std::string& path, Tensor tensor);
  bool contains(const std::string& path) const { return tensors_.count(path) != 0; }
  const Tensor& at(const std::string& path) const;

  std::size_t size() const { return tensors_.size(); }
  std::size_t num_scalars() const;
  void zero_grad() const;
  // Deep copy; the result shares no storage with this set.
  Parameters clone() const;

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace seqlab

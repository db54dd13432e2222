#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "seqlab/numerics/tensor.hpp"
#include "seqlab/types.hpp"

namespace seqlab {

// Incremental decoding cursor over one input. Copies are independent.
class DecoderSession {
 public:
  virtual ~DecoderSession() = default;
  virtual std::unique_ptr<DecoderSession> clone() const = 0;
  // Feeds `token` as the next decoder input (kBos first) and returns the
  // logits of the following position.
  virtual std::vector<double> step(TokenId token) = 0;
  // Number of tokens fed so far.
  virtual std::size_t length() const = 0;
};

// Anything that produces next-token logits autoregressively given an input.
// Decoders and the enumeration oracle only see this interface.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual std::size_t vocab_size() const = 0;
  // Longest output, in tokens including the terminal EOS.
  virtual std::size_t max_len() const = 0;
  virtual std::unique_ptr<DecoderSession> start(std::span<const TokenId> x) const = 0;

  // For each target y (normally ending in kEos), the |y| × V logits of
  // P(y_i | x, y_<i). The default steps a session through every target.
  virtual std::vector<Tensor> teacher_forced_logits(std::span<const TokenId> x,
                                                    std::span<const TokenSeq> ys) const;
};

}  // namespace seqlab

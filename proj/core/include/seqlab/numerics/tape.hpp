#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "seqlab/numerics/tensor.hpp"

namespace seqlab {

enum class Mode { kEval, kTrain };

// Records differentiable operations in execution order and replays them in
// reverse for reverse-mode differentiation. A tape and the tensors it creates
// belong to one thread.
//
// Gradients accumulate additively into every input reached by the backward
// pass. Leaf gradients may only be written by one backward pass; calling
// backward again before Tensor::zero_grad() on those leaves throws.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  explicit Tape(Mode mode = Mode::kEval, std::uint64_t dropout_seed = 0);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::kTrain; }

  // When false, no operation is recorded and outputs never require grad.
  void set_recording(bool recording) { recording_ = recording; }
  bool recording() const { return recording_; }

  void seed_dropout(std::uint64_t seed) { rng_.seed(seed); }
  // Uniform double in [0, 1) from the dropout stream.
  double uniform();

  std::size_t num_nodes() const { return nodes_.size(); }

  void backward(const Tensor& loss);

  // Op authoring: whether an op over these inputs must be recorded.
  bool should_record(std::initializer_list<const Tensor*> inputs) const;
  bool should_record(std::span<const Tensor> inputs) const;
  // Marks `out` as produced by a differentiable op and stores its rule.
  void record(const Tensor& out, BackwardFn fn);

  // Gradient buffer of `t` for the running backward pass, zero-initialised on
  // first touch. Only valid inside a BackwardFn.
  std::span<double> grad_of(const Tensor& t);

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  Mode mode_;
  bool recording_ = true;
  bool backward_done_ = false;
  std::uint64_t pass_id_ = 0;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
};

}  // namespace seqlab

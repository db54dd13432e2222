#include "seqlab/numerics/tape.hpp"

#include <algorithm>
#include <atomic>

#include "seqlab/error.hpp"

namespace seqlab {
namespace {

std::atomic<std::uint64_t> g_next_pass_id{1};

}  // namespace

Tape::Tape(Mode mode, std::uint64_t dropout_seed) : mode_(mode), rng_(dropout_seed) {}

double Tape::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

bool Tape::should_record(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

bool Tape::should_record(std::span<const Tensor> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

void Tape::record(const Tensor& out, BackwardFn fn) {
  auto& impl = *out.impl();
  impl.requires_grad = true;
  impl.is_leaf = false;
  nodes_.push_back(Node{out.impl(), std::move(fn)});
}

std::span<double> Tape::grad_of(const Tensor& t) {
  auto& impl = *t.impl();
  if (impl.is_leaf) {
    if (impl.grad_pass != 0 && impl.grad_pass != pass_id_) {
      throw ContractError(
          "leaf gradient already populated by an earlier backward pass; call zero_grad() first");
    }
    impl.grad_pass = pass_id_;
  }
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (backward_done_) throw ContractError("backward() called twice on the same tape");
  backward_done_ = true;
  if (!loss.requires_grad()) return;
  pass_id_ = g_next_pass_id.fetch_add(1);

  grad_of(loss)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const auto& out = *it->output;
    if (out.grad.empty()) continue;  // not on a path to the loss
    it->backward(out.grad);
  }
}

}  // namespace seqlab

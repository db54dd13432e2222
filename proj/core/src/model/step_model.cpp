#include "seqlab/model/step_model.hpp"

#include "seqlab/error.hpp"

namespace seqlab {

std::vector<Tensor> StepModel::teacher_forced_logits(std::span<const TokenId> x,
                                                     std::span<const TokenSeq> ys) const {
  const std::size_t v = vocab_size();
  auto root = start(x);
  std::vector<Tensor> out;
  out.reserve(ys.size());
  for (const TokenSeq& y : ys) {
    if (y.empty()) throw ValidationError("teacher forcing needs a non-empty target");
    if (y.size() > max_len()) {
      throw LengthError("target length " + std::to_string(y.size()) + " exceeds max_len " +
                        std::to_string(max_len()));
    }
    auto session = root->clone();
    std::vector<double> data;
    data.reserve(y.size() * v);
    TokenId input = kBos;
    for (const TokenId t : y) {
      const std::vector<double> row = session->step(input);
      data.insert(data.end(), row.begin(), row.end());
      input = t;
    }
    out.emplace_back(Shape{y.size(), v}, std::move(data));
  }
  return out;
}

}  // namespace seqlab

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "seqlab/numerics/ops.hpp"
#include "seqlab/numerics/tape.hpp"
#include "seqlab/numerics/tensor.hpp"

namespace seqlab::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(num_elements(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Largest relative error between the analytic gradient of `loss` and central
// differences, over every element of every leaf. Near-zero gradients are
// compared against `floor` instead of their own magnitude.
inline double gradient_check(const LossFn& loss, const std::vector<Tensor>& leaves,
                             double step = 1e-6, double floor = 1e-6, Mode mode = Mode::kEval,
                             std::uint64_t dropout_seed = 7) {
  for (const Tensor& leaf : leaves) {
    Tensor t = leaf;
    t.zero_grad();
  }
  {
    Tape tape(mode, dropout_seed);
    tape.backward(loss(tape, leaves));
  }
  double worst = 0.0;
  for (const Tensor& leaf : leaves) {
    Tensor t = leaf;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double original = t.data()[i];
      auto value_at = [&](double v) {
        t.mutable_data()[i] = v;
        Tape tape(mode, dropout_seed);
        tape.set_recording(false);
        return loss(tape, leaves).item();
      };
      const double up = value_at(original + step);
      const double down = value_at(original - step);
      t.mutable_data()[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    t.zero_grad();
  }
  return worst;
}

// Fresh empty directory under the system temp dir, unique per name.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("seqlab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace seqlab::testing

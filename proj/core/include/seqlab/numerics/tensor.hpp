#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace seqlab {

// Dimensions of a dense row-major tensor. The empty shape is a scalar.
using Shape = std::vector<std::size_t>;

std::size_t num_elements(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until a backward pass writes into it.
  std::vector<double> grad;
  bool requires_grad = false;
  // False for tensors produced by a recorded operation.
  bool is_leaf = true;
  // Id of the backward pass that populated a leaf gradient; 0 when clean.
  std::uint64_t grad_pass = 0;
};

}  // namespace detail

// Shared handle to a dense float64 buffer. Copies alias the same storage, so
// a parameter tensor can be referenced from several places of a model.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  // 2-D conveniences.
  std::size_t rows() const;
  std::size_t cols() const;
  double at(std::size_t row, std::size_t col) const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  // Drops any accumulated gradient so the next backward pass may write it.
  void zero_grad();

  bool shares_storage_with(const Tensor& other) const { return impl_ == other.impl_; }

  // Deep copy of the values, detached from any tape.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace seqlab

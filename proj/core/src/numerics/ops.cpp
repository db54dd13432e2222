#include "seqlab/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "seqlab/error.hpp"

namespace seqlab {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMatMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MatMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void require_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

Tensor make_output(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data));
}

// Splits a shape around `axis` into (outer, axis length, inner) strides.
struct AxisView {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, int axis, const char* op) {
  const int rank = static_cast<int>(shape.size());
  if (rank == 0) throw DimensionError(std::string(op) + ": needs at least one dimension");
  const int a = axis < 0 ? rank + axis : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         to_string(shape));
  }
  AxisView v;
  for (int i = 0; i < a; ++i) v.outer *= shape[i];
  v.length = shape[a];
  for (int i = a + 1; i < rank; ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), m, n).noalias() =
      as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  Tensor c = make_output({m, n}, std::move(out));
  if (tape.should_record({&a, &b})) {
    tape.record(c, [&tape, a, b, m, k, n](std::span<const double> g) {
      auto dc = as_matrix(g, m, n);
      if (a.requires_grad()) {
        as_matrix(tape.grad_of(a), m, k).noalias() += dc * as_matrix(b.data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        as_matrix(tape.grad_of(b), k, n).noalias() += as_matrix(a.data(), m, k).transpose() * dc;
      }
    });
  }
  return c;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), m, n).noalias() =
      as_matrix(a.data(), m, k) * as_matrix(b.data(), n, k).transpose();
  Tensor c = make_output({m, n}, std::move(out));
  if (tape.should_record({&a, &b})) {
    tape.record(c, [&tape, a, b, m, k, n](std::span<const double> g) {
      auto dc = as_matrix(g, m, n);
      if (a.requires_grad()) {
        as_matrix(tape.grad_of(a), m, k).noalias() += dc * as_matrix(b.data(), n, k);
      }
      if (b.requires_grad()) {
        as_matrix(tape.grad_of(b), n, k).noalias() += dc.transpose() * as_matrix(a.data(), m, k);
      }
    });
  }
  return c;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), n, m) = as_matrix(a.data(), m, n).transpose();
  Tensor c = make_output({n, m}, std::move(out));
  if (tape.should_record({&a})) {
    tape.record(c, [&tape, a, m, n](std::span<const double> g) {
      as_matrix(tape.grad_of(a), m, n) += as_matrix(g, n, m).transpose();
    });
  }
  return c;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  if (num_elements(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  Tensor c = make_output(std::move(shape), std::move(out));
  if (tape.should_record({&a})) {
    tape.record(c, [&tape, a](std::span<const double> g) {
      auto ga = tape.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return c;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor c = make_output(a.shape(), std::move(out));
  if (tape.should_record({&a, &b})) {
    tape.record(c, [&tape, a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = tape.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = tape.grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return c;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor c = make_output(a.shape(), std::move(out));
  if (tape.should_record({&a, &b})) {
    tape.record(c, [&tape, a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = tape.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = tape.grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return c;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor c = make_output(a.shape(), std::move(out));
  if (tape.should_record({&a, &b})) {
    tape.record(c, [&tape, a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = tape.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto gb = tape.grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return c;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  Tensor c = make_output(a.shape(), std::move(out));
  if (tape.should_record({&a})) {
    tape.record(c, [&tape, a, factor](std::span<const double> g) {
      auto ga = tape.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return c;
}

Tensor add_scalar(Tape& tape, const Tensor& a, double delta) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + delta;
  Tensor c = make_output(a.shape(), std::move(out));
  if (tape.should_record({&a})) {
    tape.record(c, [&tape, a](std::span<const double> g) {
      auto ga = tape.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return c;
}

Tensor add_bias(Tape& tape, const Tensor& a, const Tensor& bias) {
  require_matrix(a, "add_bias");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                         to_string(a.shape()));
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] + bias.data()[j];
  }
  Tensor c = make_output(a.shape(), std::move(out));
  if (tape.should_record({&a, &bias})) {
    tape.record(c, [&tape, a, bias, m, n](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = tape.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = tape.grad_of(bias);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
    });
  }
  return c;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor c = make_output({}, {total});
  if (tape.should_record({&a})) {
    tape.record(c, [&tape, a](std::span<const double> g) {
      auto ga = tape.grad_of(a);
      for (double& v : ga) v += g[0];
    });
  }
  return c;
}

Tensor mean(Tape& tape, const Tensor& a) {
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

Tensor embedding(Tape& tape, const Tensor& table, std::span<const TokenId> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols();
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ValidationError("embedding: token id " + std::to_string(ids[i]) +
                            " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(table.data().begin() + ids[i] * d, d, out.begin() + i * d);
  }
  Tensor c = make_output({ids.size(), d}, std::move(out));
  if (tape.should_record({&table})) {
    std::vector<TokenId> kept(ids.begin(), ids.end());
    tape.record(c, [&tape, table, kept = std::move(kept), d](std::span<const double> g) {
      auto gt = tape.grad_of(table);
      for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) gt[kept[i] * d + j] += g[i * d + j];
      }
    });
  }
  return c;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(n) + "], got " +
                         to_string(gain.shape()) + " and " + to_string(bias.shape()));
  }
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  const auto xs = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xs[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = xs[i * n + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xs[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain.data()[j] + bias.data()[j];
    }
  }
  Tensor c = make_output({m, n}, std::move(out));
  if (tape.should_record({&x, &gain, &bias})) {
    tape.record(c, [&tape, x, gain, bias, m, n, xhat = std::move(xhat),
                    inv_std = std::move(inv_std)](std::span<const double> g) {
      if (gain.requires_grad()) {
        auto gg = tape.grad_of(gain);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
        }
      }
      if (bias.requires_grad()) {
        auto gb = tape.grad_of(bias);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
      if (x.requires_grad()) {
        auto gx = tape.grad_of(x);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxhat = g[i * n + j] * gain.data()[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat[i * n + j];
          }
          mean_dxhat *= inv_n;
          mean_dxhat_xhat *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxhat = g[i * n + j] * gain.data()[j];
            gx[i * n + j] +=
                inv_std[i] * (dxhat - mean_dxhat - xhat[i * n + j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return c;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  Tensor c = make_output(x.shape(), std::move(out));
  if (tape.should_record({&x})) {
    tape.record(c, [&tape, x](std::span<const double> g) {
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      auto gx = tape.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = x.data()[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return c;
}

Tensor dropout(Tape& tape, const Tensor& x, double p) {
  if (p < 0.0 || p >= 1.0) throw ValidationError("dropout: probability must be in [0, 1)");
  if (!tape.training() || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size()), out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = tape.uniform() < p ? 0.0 : keep_scale;
    out[i] = x.data()[i] * mask[i];
  }
  Tensor c = make_output(x.shape(), std::move(out));
  if (tape.should_record({&x})) {
    tape.record(c, [&tape, x, mask = std::move(mask)](std::span<const double> g) {
      auto gx = tape.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return c;
}

Tensor softmax(Tape& tape, const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "softmax");
  require_finite(x, "softmax");
  std::vector<double> out(x.size());
  const auto xs = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.length * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < v.length; ++j) mx = std::max(mx, xs[base + j * v.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < v.length; ++j) {
        out[base + j * v.inner] = std::exp(xs[base + j * v.inner] - mx);
        z += out[base + j * v.inner];
      }
      for (std::size_t j = 0; j < v.length; ++j) out[base + j * v.inner] /= z;
    }
  }
  Tensor c = make_output(x.shape(), std::move(out));
  if (tape.should_record({&x})) {
    tape.record(c, [&tape, x, c_data = c.impl(), v](std::span<const double> g) {
      const auto& s = c_data->data;
      auto gx = tape.grad_of(x);
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
          const std::size_t base = o * v.length * v.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < v.length; ++j) {
            dot += g[base + j * v.inner] * s[base + j * v.inner];
          }
          for (std::size_t j = 0; j < v.length; ++j) {
            const std::size_t idx = base + j * v.inner;
            gx[idx] += s[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return c;
}

Tensor log_softmax(Tape& tape, const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "log_softmax");
  require_finite(x, "log_softmax");
  std::vector<double> out(x.size());
  const auto xs = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.length * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < v.length; ++j) mx = std::max(mx, xs[base + j * v.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < v.length; ++j) z += std::exp(xs[base + j * v.inner] - mx);
      const double log_z = mx + std::log(z);
      for (std::size_t j = 0; j < v.length; ++j) {
        out[base + j * v.inner] = xs[base + j * v.inner] - log_z;
      }
    }
  }
  Tensor c = make_output(x.shape(), std::move(out));
  if (tape.should_record({&x})) {
    tape.record(c, [&tape, x, c_data = c.impl(), v](std::span<const double> g) {
      const auto& ls = c_data->data;
      auto gx = tape.grad_of(x);
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
          const std::size_t base = o * v.length * v.inner + in;
          double gsum = 0.0;
          for (std::size_t j = 0; j < v.length; ++j) gsum += g[base + j * v.inner];
          for (std::size_t j = 0; j < v.length; ++j) {
            const std::size_t idx = base + j * v.inner;
            gx[idx] += g[idx] - std::exp(ls[idx]) * gsum;
          }
        }
      }
    });
  }
  return c;
}

Tensor causal_softmax(Tape& tape, const Tensor& x, std::size_t offset) {
  require_matrix(x, "causal_softmax");
  require_finite(x, "causal_softmax");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n, 0.0);
  const auto xs = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t visible = std::min(n, i + offset + 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, xs[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      out[i * n + j] = std::exp(xs[i * n + j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < visible; ++j) out[i * n + j] /= z;
  }
  Tensor c = make_output({m, n}, std::move(out));
  if (tape.should_record({&x})) {
    tape.record(c, [&tape, x, c_data = c.impl(), m, n, offset](std::span<const double> g) {
      const auto& s = c_data->data;
      auto gx = tape.grad_of(x);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t visible = std::min(n, i + offset + 1);
        double dot = 0.0;
        for (std::size_t j = 0; j < visible; ++j) dot += g[i * n + j] * s[i * n + j];
        for (std::size_t j = 0; j < visible; ++j) {
          gx[i * n + j] += s[i * n + j] * (g[i * n + j] - dot);
        }
      }
    });
  }
  return c;
}

Tensor pick(Tape& tape, const Tensor& x, std::span<const TokenId> ids) {
  require_matrix(x, "pick");
  const std::size_t m = x.rows(), n = x.cols();
  if (ids.size() != m) {
    throw DimensionError("pick: " + std::to_string(ids.size()) + " ids for " + to_string(x.shape()));
  }
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= n) {
      throw ValidationError("pick: id " + std::to_string(ids[i]) + " outside [0, " +
                            std::to_string(n) + ")");
    }
    out[i] = x.data()[i * n + ids[i]];
  }
  Tensor c = make_output({m}, std::move(out));
  if (tape.should_record({&x})) {
    std::vector<TokenId> kept(ids.begin(), ids.end());
    tape.record(c, [&tape, x, kept = std::move(kept), n](std::span<const double> g) {
      auto gx = tape.grad_of(x);
      for (std::size_t i = 0; i < kept.size(); ++i) gx[i * n + kept[i]] += g[i];
    });
  }
  return c;
}

Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + to_string(x.shape()));
  }
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(x.data().begin() + i * n + begin, count, out.begin() + i * count);
  }
  Tensor c = make_output({m, count}, std::move(out));
  if (tape.should_record({&x})) {
    tape.record(c, [&tape, x, m, n, begin, count](std::span<const double> g) {
      auto gx = tape.grad_of(x);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += g[i * count + j];
      }
    });
  }
  return c;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + to_string(parts[0].shape()) + " vs " +
                           to_string(p.shape()));
    }
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.data().begin() + i * w, w, out.begin() + i * n + col);
    }
    col += w;
  }
  Tensor c = make_output({m, n}, std::move(out));
  if (tape.should_record(parts)) {
    std::vector<Tensor> kept(parts.begin(), parts.end());
    tape.record(c, [&tape, kept = std::move(kept), m, n](std::span<const double> g) {
      std::size_t col = 0;
      for (const Tensor& p : kept) {
        const std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto gp = tape.grad_of(p);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + col + j];
          }
        }
        col += w;
      }
    });
  }
  return c;
}

Tensor concat_rows(Tape& tape, const Tensor& top, const Tensor& bottom) {
  require_matrix(top, "concat_rows");
  require_matrix(bottom, "concat_rows");
  if (top.cols() != bottom.cols()) {
    throw DimensionError("concat_rows: column mismatch " + to_string(top.shape()) + " vs " +
                         to_string(bottom.shape()));
  }
  std::vector<double> out;
  out.reserve(top.size() + bottom.size());
  out.insert(out.end(), top.data().begin(), top.data().end());
  out.insert(out.end(), bottom.data().begin(), bottom.data().end());
  Tensor c = make_output({top.rows() + bottom.rows(), top.cols()}, std::move(out));
  if (tape.should_record({&top, &bottom})) {
    tape.record(c, [&tape, top, bottom](std::span<const double> g) {
      if (top.requires_grad()) {
        auto gt = tape.grad_of(top);
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
      }
      if (bottom.requires_grad()) {
        auto gb = tape.grad_of(bottom);
        const std::size_t off = top.size();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[off + i];
      }
    });
  }
  return c;
}

Tensor stack(Tape& tape, std::span<const Tensor> scalars) {
  if (scalars.empty()) throw DimensionError("stack: nothing to stack");
  std::vector<double> out(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].size() != 1) {
      throw DimensionError("stack: expected scalars, got " + to_string(scalars[i].shape()));
    }
    out[i] = scalars[i].data()[0];
  }
  Tensor c = make_output({scalars.size()}, std::move(out));
  if (tape.should_record(scalars)) {
    std::vector<Tensor> kept(scalars.begin(), scalars.end());
    tape.record(c, [&tape, kept = std::move(kept)](std::span<const double> g) {
      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (kept[i].requires_grad()) tape.grad_of(kept[i])[0] += g[i];
      }
    });
  }
  return c;
}

Tensor logsumexp(Tape& tape, const Tensor& x) {
  require_finite(x, "logsumexp");
  const auto xs = x.data();
  const double mx = *std::max_element(xs.begin(), xs.end());
  double z = 0.0;
  for (double v : xs) z += std::exp(v - mx);
  const double value = mx + std::log(z);
  Tensor c = make_output({}, {value});
  if (tape.should_record({&x})) {
    tape.record(c, [&tape, x, value](std::span<const double> g) {
      auto gx = tape.grad_of(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * std::exp(x.data()[i] - value);
    });
  }
  return c;
}

}  // namespace seqlab

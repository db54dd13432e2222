#pragma once

#include <span>

#include "seqlab/numerics/tape.hpp"
#include "seqlab/numerics/tensor.hpp"
#include "seqlab/types.hpp"

// Differentiable primitives. Every op validates its shapes, computes its
// output eagerly and, when the tape records and an input requires grad,
// registers the local gradient rule.
namespace seqlab {

// a[m×k] · b[k×n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// a[m×k] · b[n×k]ᵀ
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor add_scalar(Tape& tape, const Tensor& a, double delta);
// a[m×n] + bias[n] broadcast over rows.
Tensor add_bias(Tape& tape, const Tensor& a, const Tensor& bias);

Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);

// Rows of table[V×d] selected by ids.
Tensor embedding(Tape& tape, const Tensor& table, std::span<const TokenId> ids);
// Row-wise normalisation of x[m×n] with learned gain[n] and bias[n].
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Exact (erf) GELU.
Tensor gelu(Tape& tape, const Tensor& x);
// Inverted dropout; identity unless the tape is in training mode.
Tensor dropout(Tape& tape, const Tensor& x, double p);

// Max-subtracted softmax / log-softmax along `axis` (negative counts from the end).
Tensor softmax(Tape& tape, const Tensor& x, int axis = -1);
Tensor log_softmax(Tape& tape, const Tensor& x, int axis = -1);
// Softmax over rows of x[m×n] where row i may only see columns j <= i + offset.
Tensor causal_softmax(Tape& tape, const Tensor& x, std::size_t offset);

// out[i] = x[i, ids[i]] for x[m×n].
Tensor pick(Tape& tape, const Tensor& x, std::span<const TokenId> ids);
Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);
Tensor concat_rows(Tape& tape, const Tensor& top, const Tensor& bottom);
// Scalars (or size-1 tensors) to a vector.
Tensor stack(Tape& tape, std::span<const Tensor> scalars);
// Stable log-sum-exp over every element.
Tensor logsumexp(Tape& tape, const Tensor& x);

}  // namespace seqlab

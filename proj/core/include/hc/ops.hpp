#pragma once

#include <cstdint>
#include <vector>

#include "hc/tape.hpp"
#include "hc/tensor.hpp"

namespace hc::ops {

// Epsilon added inside the root of both norms.
inline constexpr double kNormEps = 1e-5;

// NumPy-style broadcast of two shapes (trailing alignment); throws ShapeError.
Shape broadcast_shape(const Shape& a, const Shape& b);

// ---- elementwise (broadcasting) -------------------------------------------

template <class S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> sub(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& a, double c);
template <class S>
Tensor<S> tanh(Tape<S>& tape, const Tensor<S>& a);
template <class S>
Tensor<S> gelu(Tape<S>& tape, const Tensor<S>& a);

// ---- matrix products -------------------------------------------------------

// (m,k) @ (k,n) -> (m,n)
template <class S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);
// (m,k) @ (n,k)^T -> (m,n)
template <class S>
Tensor<S> matmul_nt(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);
// (B,m,k) @ (B,k,n) -> (B,m,n); a may be (m,k), shared across the batch.
template <class S>
Tensor<S> bmm(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);
// (B,m,k) @ (B,n,k)^T -> (B,m,n)
template <class S>
Tensor<S> bmm_nt(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b);

// ---- shape manipulation ----------------------------------------------------

template <class S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& a, Shape shape);
// Swaps the last two axes (rank >= 2).
template <class S>
Tensor<S> transpose_last(Tape<S>& tape, const Tensor<S>& a);
template <class S>
Tensor<S> permute(Tape<S>& tape, const Tensor<S>& a, const std::vector<std::int64_t>& perm);
template <class S>
Tensor<S> slice(Tape<S>& tape, const Tensor<S>& a, std::int64_t axis, std::int64_t start,
                std::int64_t len);
template <class S>
Tensor<S> concat(Tape<S>& tape, const std::vector<Tensor<S>>& parts, std::int64_t axis);
// (..., d) -> (..., n, d): the row replicated n times.
template <class S>
Tensor<S> replicate_rows(Tape<S>& tape, const Tensor<S>& a, std::int64_t n);
template <class S>
Tensor<S> sum_axis(Tape<S>& tape, const Tensor<S>& a, std::int64_t axis);

// ---- normalization, softmax, loss -------------------------------------------

// Per-last-axis zero-mean unit-std (eps inside the root), then optional
// affine: y = gain * xhat + bias. Last-axis extent must be >= 2.
template <class S>
Tensor<S> layer_norm(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& gain = {},
                     const Tensor<S>& bias = {});
// Divide by root-mean-square (eps inside the root); no recentering, no affine.
// eps = 0 makes the op exactly invariant under positive scaling (a zero row
// then maps to zeros).
template <class S>
Tensor<S> rms_norm(Tape<S>& tape, const Tensor<S>& x, double eps = kNormEps);
template <class S>
Tensor<S> softmax_last(Tape<S>& tape, const Tensor<S>& x);
// Mean negative log-likelihood over rows whose target != ignore_index,
// stabilized by max-subtraction. logits: (rows, vocab).
template <class S>
Tensor<S> softmax_cross_entropy(Tape<S>& tape, const Tensor<S>& logits,
                                const std::vector<std::int32_t>& targets,
                                std::int32_t ignore_index = -1);

// ---- lookup & regularization -------------------------------------------------

// Gathers rows of weight (vocab, d) by id; adjoint scatter-adds.
template <class S>
Tensor<S> embedding(Tape<S>& tape, const Tensor<S>& weight,
                    const std::vector<std::int32_t>& ids);
// Inverted dropout; p = 0 is the identity.
template <class S>
Tensor<S> dropout(Tape<S>& tape, const Tensor<S>& x, double p, Rng& rng);

}  // namespace hc::ops

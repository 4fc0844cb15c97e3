#pragma once

#include <cstdint>
#include <vector>

#include "vlprompt/tensor.hpp"

namespace vlp::ops {

// Differentiable primitives over dense tensors. Forward values follow the
// textbook definitions; every op installs an exact analytic backward that
// accumulates into inputs which need gradients.
//
// Elementwise binary ops accept: identical shapes, a scalar (numel 1) on
// either side, or a length-C vector on the right against a (R, C) matrix
// (broadcast across rows). Anything else is a ShapeError.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Elementwise divide; any zero in the denominator is a DomainError.
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
/// Natural log; any input <= 0 is a DomainError.
Tensor log(const Tensor& a);

/// Row softmax of a 2-D tensor, computed with max subtraction.
Tensor softmax_rows(const Tensor& logits);
/// Row softmax of logits / tau, tau a positive scalar tensor (may be learnable).
Tensor softmax_rows(const Tensor& logits, const Tensor& tau);

/// Rows scaled to unit L2 norm; all-zero rows stay all-zero (gradient 0 there).
Tensor l2_normalize_rows(const Tensor& a);

/// Gather rows of `table` (V, D) by index -> (ids.size(), D).
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
/// 2-D reductions. axis 0 collapses rows -> (cols,), axis 1 collapses cols -> (rows,).
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);

Tensor transpose(const Tensor& a);

/// Concatenate 2-D tensors along axis 0 or 1, or 1-D tensors along axis 0.
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Stack 1-D tensors of equal length into a (n, d) matrix.
Tensor stack_rows(const std::vector<Tensor>& rows);

/// Per-row standardization (mean 0, variance 1) of a 2-D tensor; no affine part.
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);

Tensor reshape(const Tensor& a, Shape shape);
/// Columns [c0, c1) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1);
/// Single row of a 2-D tensor as a (cols,) vector.
Tensor row(const Tensor& a, std::int64_t r);

/// 2-D convolution on (C, H, W) with (Cout, Cin, K, K) weights and (Cout,)
/// bias, stride 1, zero padding K/2 (K odd), so spatial size is preserved.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
/// 2x2 average pool, stride 2, on (C, H, W) with even H and W.
Tensor avgpool2(const Tensor& x);
/// Non-overlapping p x p patches of (1, H, W) or (H, W) -> (HW/p^2, p^2),
/// patches ordered row-major.
Tensor extract_patches(const Tensor& x, std::int64_t p);

/// Dot product of two equal-length vectors -> scalar.
Tensor dot(const Tensor& a, const Tensor& b);

}  // namespace vlp::ops

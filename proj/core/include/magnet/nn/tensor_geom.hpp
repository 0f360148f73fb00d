#pragma once

#include "magnet/nn/tensor.hpp"

namespace magnet::nn {

/// Differentiable batched SO(3)/SE(3) kernels. Rows are independent; all are
/// compositions of tensor primitives, so reverse-mode gradients come for
/// free and are covered by grad_check.

/// Gram-Schmidt decode of rows [a1; a2] (column-stacked 6D) into row-major
/// 3x3 matrices. Column norms are floored at `eps` so near-degenerate
/// predictions keep finite gradients.
Tensor rot6d_to_matrix_rows(const Tensor& x, double eps = 1e-8);

/// Rowwise transpose of row-major 3x3 matrices.
Tensor mat3_transpose_rows(const Tensor& R);

/// Rowwise product A * B of row-major 3x3 matrices.
Tensor mat3_mul_rows(const Tensor& A, const Tensor& B);

/// Rowwise R * v for [N,9] matrices and [N,3] vectors.
Tensor mat3_apply_rows(const Tensor& R, const Tensor& v);

/// Rowwise geodesic angle between row-major 3x3 rotations, [N,1].
/// Evaluates atan2(|skew(A'B)|/2, (tr(A'B)-1)/2); exactly zero rows stay at
/// ~1e-15 with finite gradients.
Tensor geodesic_rows(const Tensor& A, const Tensor& B);

}  // namespace magnet::nn

#include "magnet/nn/tensor_geom.hpp"

namespace magnet::nn {

namespace {

Tensor col(const Tensor& a, int c) { return slice_cols(a, c, c + 1); }

/// Rowwise dot of [N,3] blocks.
Tensor dot3(const Tensor& a, const Tensor& b) { return row_sum(mul(a, b)); }

Tensor cross3(const Tensor& a, const Tensor& b) {
    Tensor ax = col(a, 0), ay = col(a, 1), az = col(a, 2);
    Tensor bx = col(b, 0), by = col(b, 1), bz = col(b, 2);
    return concat_cols({sub(mul(ay, bz), mul(az, by)),
                        sub(mul(az, bx), mul(ax, bz)),
                        sub(mul(ax, by), mul(ay, bx))});
}

}  // namespace

Tensor rot6d_to_matrix_rows(const Tensor& x, double eps) {
    if (x.shape().size() != 2 || x.shape()[1] != 6) {
        throw ShapeMismatch("rot6d_to_matrix_rows: expected [N,6]");
    }
    Tensor a1 = slice_cols(x, 0, 3);
    Tensor a2 = slice_cols(x, 3, 6);
    Tensor n1 = clamp_min(sqrt_t(dot3(a1, a1)), eps);
    Tensor e1 = div(a1, n1);
    Tensor u2 = sub(a2, mul(dot3(e1, a2), e1));
    Tensor n2 = clamp_min(sqrt_t(dot3(u2, u2)), eps);
    Tensor e2 = div(u2, n2);
    Tensor e3 = cross3(e1, e2);
    // row-major 3x3 whose columns are e1, e2, e3
    return concat_cols({col(e1, 0), col(e2, 0), col(e3, 0),
                        col(e1, 1), col(e2, 1), col(e3, 1),
                        col(e1, 2), col(e2, 2), col(e3, 2)});
}

Tensor mat3_transpose_rows(const Tensor& R) {
    if (R.shape().size() != 2 || R.shape()[1] != 9) {
        throw ShapeMismatch("mat3_transpose_rows: expected [N,9]");
    }
    return permute_cols(R, {0, 3, 6, 1, 4, 7, 2, 5, 8});
}

Tensor mat3_mul_rows(const Tensor& A, const Tensor& B) {
    if (A.shape().size() != 2 || A.shape()[1] != 9 || B.shape()[1] != 9) {
        throw ShapeMismatch("mat3_mul_rows: expected [N,9]");
    }
    std::vector<Tensor> out;
    out.reserve(9);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            Tensor acc = mul(col(A, i * 3 + 0), col(B, 0 * 3 + j));
            acc = add(acc, mul(col(A, i * 3 + 1), col(B, 1 * 3 + j)));
            acc = add(acc, mul(col(A, i * 3 + 2), col(B, 2 * 3 + j)));
            out.push_back(acc);
        }
    }
    return concat_cols(out);
}

Tensor mat3_apply_rows(const Tensor& R, const Tensor& v) {
    if (R.shape()[1] != 9 || v.shape()[1] != 3) {
        throw ShapeMismatch("mat3_apply_rows: expected [N,9], [N,3]");
    }
    std::vector<Tensor> out;
    out.reserve(3);
    for (int i = 0; i < 3; ++i) {
        Tensor acc = mul(col(R, i * 3 + 0), col(v, 0));
        acc = add(acc, mul(col(R, i * 3 + 1), col(v, 1)));
        acc = add(acc, mul(col(R, i * 3 + 2), col(v, 2)));
        out.push_back(acc);
    }
    return concat_cols(out);
}

Tensor geodesic_rows(const Tensor& A, const Tensor& B) {
    Tensor E = mat3_mul_rows(mat3_transpose_rows(A), B);
    Tensor trace = add(add(col(E, 0), col(E, 4)), col(E, 8));
    Tensor c = mul_scalar(add_scalar(trace, -1.0), 0.5);
    Tensor v0 = sub(col(E, 7), col(E, 5));  // e21 - e12
    Tensor v1 = sub(col(E, 2), col(E, 6));  // e02 - e20
    Tensor v2 = sub(col(E, 3), col(E, 1));  // e10 - e01
    Tensor ss = add(add(mul(v0, v0), mul(v1, v1)), mul(v2, v2));
    // tiny floor keeps d(sqrt)/dx finite when the relative rotation is exact
    Tensor s = mul_scalar(sqrt_t(add_scalar(ss, 1e-30)), 0.5);
    return atan2_t(s, c);
}

}  // namespace magnet::nn

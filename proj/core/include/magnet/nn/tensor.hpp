#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "magnet/errors.hpp"
#include "magnet/rng.hpp"

namespace magnet::nn {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the computation graph. Values are double precision
/// throughout; gradients accumulate additively and all reductions run in
/// sequential index order, so results are bitwise reproducible.
struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_param = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
};

/// Value-semantic handle to a graph node. Ops are free functions that build
/// new nodes; backward() walks the graph in reverse topological order.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar_value(double v);
    /// Gaussian init scaled by `scale`; marks the tensor as a parameter.
    static Tensor param_randn(Shape shape, Rng& rng, double scale);
    static Tensor param_values(Shape shape, std::vector<double> values);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[i]; }
    std::size_t numel() const { return n_->val.size(); }
    const std::vector<double>& values() const { return n_->val; }
    /// Direct mutation (parameters / buffers); never use on graph interior.
    std::vector<double>& raw_values() { return n_->val; }
    const std::vector<double>& grad() const { return n_->grad; }
    std::vector<double>& raw_grad() { return n_->grad; }
    void zero_grad() {
        n_->grad.assign(n_->val.size(), 0.0);
    }
    bool requires_grad() const { return n_->requires_grad; }
    double scalar() const;

    NodePtr node() const { return n_; }

  private:
    NodePtr n_;
};

// ---- elementwise (numpy-style right-aligned broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- structure ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,N]
Tensor transpose(const Tensor& a);                // 2-D
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_cols(const Tensor& a, int c0, int c1);       // 2-D
Tensor concat_cols(const std::vector<Tensor>& parts);     // 2-D
Tensor slice_rows(const Tensor& a, int r0, int r1);       // 2-D
Tensor concat_rows(const std::vector<Tensor>& parts);     // 2-D
Tensor permute_cols(const Tensor& a, const std::vector<int>& src);
Tensor repeat_rows(const Tensor& a, int factor);
Tensor gather_rows(const Tensor& table, const std::vector<int>& idx);

// ---- reductions ----
Tensor row_sum(const Tensor& a);  // [N,C] -> [N,1]
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// ---- nonlinear ----
Tensor sqrt_t(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor atan2_t(const Tensor& y, const Tensor& x);  // same shape
/// arccos with the argument pulled to [-1+eps, 1-eps]; gradient is zero in
/// the clamped region.
Tensor acos_clamped(const Tensor& a, double eps = 1e-7);
Tensor clamp_min(const Tensor& a, double m);
/// Elementwise smooth-L1: 0.5 r^2/delta for |r| <= delta else |r| - delta/2,
/// r = a - b.
Tensor huber(const Tensor& a, const Tensor& b, double delta);
Tensor stop_gradient(const Tensor& a);

// ---- fused layers ----
Tensor layernorm_affine(const Tensor& x, const Tensor& gamma,
                        const Tensor& beta, double eps = 1e-5);
/// Row softmax over valid keys; invalid columns are exactly zero.
Tensor softmax_masked_rows(const Tensor& x,
                           const std::vector<std::uint8_t>& key_valid);
/// x: [T, Cin], w: [Cout, Cin, k], b: [Cout]. Same-padded up to stride
/// compression: T_out = ceil(T / stride).
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);
/// Rotary position map on channel pairs of each row; position 0 is identity.
Tensor rope(const Tensor& x, const std::vector<int>& positions,
            double base = 10000.0);

/// Reverse-mode sweep from a scalar loss. Throws NonScalarLoss / GraphCycle.
void backward(const Tensor& loss);

/// Max relative error between reverse-mode and central finite differences
/// over the given parameters. `max_coords_per_param` = 0 checks every
/// coordinate; otherwise a seeded subsample.
double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params, double eps = 1e-5,
                  int max_coords_per_param = 0, std::uint64_t seed = 0);

}  // namespace magnet::nn

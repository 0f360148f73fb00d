#include "magnet/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace magnet::nn {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

namespace {

NodePtr make_node(Shape shape, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val.resize(shape_numel(n->shape));
    for (const auto& p : parents) {
        if (p->requires_grad) n->requires_grad = true;
    }
    n->parents = std::move(parents);
    return n;
}

void check_2d(const Tensor& a, const char* op) {
    if (a.shape().size() != 2) {
        throw ShapeMismatch(std::string(op) + ": expected a 2-D tensor");
    }
}

// Broadcast plan: output shape plus per-dimension input strides (0 where the
// input is broadcast along that dimension).
struct BcPlan {
    Shape out;
    std::vector<std::size_t> sa, sb;
    bool same = false;
};

BcPlan broadcast_plan(const Shape& a, const Shape& b) {
    BcPlan plan;
    if (a == b) {
        plan.out = a;
        plan.same = true;
        return plan;
    }
    const int ra = static_cast<int>(a.size());
    const int rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    plan.out.resize(r);
    for (int i = 0; i < r; ++i) {
        const int da = i < r - ra ? 1 : a[i - (r - ra)];
        const int db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1) {
            throw ShapeMismatch("broadcast: incompatible shapes");
        }
        plan.out[i] = std::max(da, db);
    }
    plan.sa.assign(r, 0);
    plan.sb.assign(r, 0);
    std::size_t stride = 1;
    for (int i = ra - 1; i >= 0; --i) {
        const int o = i + (r - ra);
        plan.sa[o] = a[i] == 1 ? 0 : stride;
        stride *= static_cast<std::size_t>(a[i]);
    }
    stride = 1;
    for (int i = rb - 1; i >= 0; --i) {
        const int o = i + (r - rb);
        plan.sb[o] = b[i] == 1 ? 0 : stride;
        stride *= static_cast<std::size_t>(b[i]);
    }
    return plan;
}

template <typename Fn>
void for_each_bc(const BcPlan& plan, Fn&& fn) {
    const int r = static_cast<int>(plan.out.size());
    std::vector<int> idx(r, 0);
    std::size_t ia = 0, ib = 0, io = 0;
    const std::size_t total = shape_numel(plan.out);
    for (std::size_t n = 0; n < total; ++n) {
        fn(ia, ib, io);
        ++io;
        for (int d = r - 1; d >= 0; --d) {
            ia += plan.sa[d];
            ib += plan.sb[d];
            if (++idx[d] < plan.out[d]) break;
            idx[d] = 0;
            ia -= plan.sa[d] * static_cast<std::size_t>(plan.out[d]);
            ib -= plan.sb[d] * static_cast<std::size_t>(plan.out[d]);
        }
    }
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

Tensor binary_op(const Tensor& ta, const Tensor& tb, BinOp op) {
    auto a = ta.node();
    auto b = tb.node();
    BcPlan plan = broadcast_plan(a->shape, b->shape);
    auto out = make_node(plan.out, {a, b});
    const double* av = a->val.data();
    const double* bv = b->val.data();
    double* ov = out->val.data();
    if (plan.same) {
        const std::size_t n = out->val.size();
        switch (op) {
            case BinOp::kAdd: for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i]; break;
            case BinOp::kSub: for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i]; break;
            case BinOp::kMul: for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i]; break;
            case BinOp::kDiv: for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] / bv[i]; break;
        }
    } else {
        switch (op) {
            case BinOp::kAdd:
                for_each_bc(plan, [&](std::size_t ia, std::size_t ib, std::size_t io) { ov[io] = av[ia] + bv[ib]; });
                break;
            case BinOp::kSub:
                for_each_bc(plan, [&](std::size_t ia, std::size_t ib, std::size_t io) { ov[io] = av[ia] - bv[ib]; });
                break;
            case BinOp::kMul:
                for_each_bc(plan, [&](std::size_t ia, std::size_t ib, std::size_t io) { ov[io] = av[ia] * bv[ib]; });
                break;
            case BinOp::kDiv:
                for_each_bc(plan, [&](std::size_t ia, std::size_t ib, std::size_t io) { ov[io] = av[ia] / bv[ib]; });
                break;
        }
    }
    if (out->requires_grad) {
        Node* araw = a.get();
        Node* braw = b.get();
        out->backward_fn = [araw, braw, plan, op](Node& self) {
            const double* g = self.grad.data();
            const double* av2 = araw->val.data();
            const double* bv2 = braw->val.data();
            const bool ga = araw->requires_grad;
            const bool gb = braw->requires_grad;
            if (ga) araw->ensure_grad();
            if (gb) braw->ensure_grad();
            double* agr = ga ? araw->grad.data() : nullptr;
            double* bgr = gb ? braw->grad.data() : nullptr;
            auto visit = [&](std::size_t ia, std::size_t ib, std::size_t io) {
                const double go = g[io];
                switch (op) {
                    case BinOp::kAdd:
                        if (ga) agr[ia] += go;
                        if (gb) bgr[ib] += go;
                        break;
                    case BinOp::kSub:
                        if (ga) agr[ia] += go;
                        if (gb) bgr[ib] -= go;
                        break;
                    case BinOp::kMul:
                        if (ga) agr[ia] += go * bv2[ib];
                        if (gb) bgr[ib] += go * av2[ia];
                        break;
                    case BinOp::kDiv: {
                        const double inv = 1.0 / bv2[ib];
                        if (ga) agr[ia] += go * inv;
                        if (gb) bgr[ib] -= go * av2[ia] * inv * inv;
                        break;
                    }
                }
            };
            if (plan.same) {
                const std::size_t n = self.val.size();
                for (std::size_t i = 0; i < n; ++i) visit(i, i, i);
            } else {
                for_each_bc(plan, visit);
            }
        };
    }
    return Tensor(out);
}

template <typename F, typename DF>
Tensor unary_op(const Tensor& ta, F f, DF df) {
    auto a = ta.node();
    auto out = make_node(a->shape, {a});
    const std::size_t n = out->val.size();
    for (std::size_t i = 0; i < n; ++i) out->val[i] = f(a->val[i]);
    if (out->requires_grad) {
        Node* araw = a.get();
        out->backward_fn = [araw, df](Node& self) {
            araw->ensure_grad();
            const std::size_t m = self.val.size();
            for (std::size_t i = 0; i < m; ++i) {
                araw->grad[i] += self.grad[i] * df(araw->val[i], self.val[i]);
            }
        };
    }
    return Tensor(out);
}

}  // namespace

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
    if (values.size() != shape_numel(shape)) {
        throw ShapeMismatch("from_values: size does not match shape");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from_values(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from_values(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar_value(double v) { return from_values({1}, {v}); }

Tensor Tensor::param_randn(Shape shape, Rng& rng, double scale) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal() * scale;
    Tensor t = from_values(std::move(shape), std::move(v), true);
    t.node()->is_param = true;
    return t;
}

Tensor Tensor::param_values(Shape shape, std::vector<double> values) {
    Tensor t = from_values(std::move(shape), std::move(values), true);
    t.node()->is_param = true;
    return t;
}

double Tensor::scalar() const {
    if (numel() != 1) throw ShapeMismatch("scalar(): tensor is not a scalar");
    return n_->val[0];
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::kMul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::kDiv); }

Tensor neg(const Tensor& a) {
    return unary_op(a, [](double x) { return -x; },
                    [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x * c; },
                    [c](double, double) { return c; });
}

Tensor matmul(const Tensor& ta, const Tensor& tb) {
    check_2d(ta, "matmul");
    check_2d(tb, "matmul");
    auto a = ta.node();
    auto b = tb.node();
    const int M = a->shape[0], K = a->shape[1];
    const int K2 = b->shape[0], N = b->shape[1];
    if (K != K2) throw ShapeMismatch("matmul: inner dimensions differ");
    auto out = make_node({M, N}, {a, b});
    const double* av = a->val.data();
    const double* bv = b->val.data();
    double* ov = out->val.data();
    for (int i = 0; i < M; ++i) {
        double* orow = ov + static_cast<std::size_t>(i) * N;
        std::fill(orow, orow + N, 0.0);
        const double* arow = av + static_cast<std::size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const double aik = arow[k];
            const double* brow = bv + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) orow[j] += aik * brow[j];
        }
    }
    if (out->requires_grad) {
        Node* araw = a.get();
        Node* braw = b.get();
        out->backward_fn = [araw, braw, M, K, N](Node& self) {
            const double* g = self.grad.data();
            if (araw->requires_grad) {
                araw->ensure_grad();
                double* ag = araw->grad.data();
                const double* bv2 = braw->val.data();
                // dA = G * B^T
                for (int i = 0; i < M; ++i) {
                    const double* grow = g + static_cast<std::size_t>(i) * N;
                    double* arow = ag + static_cast<std::size_t>(i) * K;
                    for (int k = 0; k < K; ++k) {
                        const double* brow = bv2 + static_cast<std::size_t>(k) * N;
                        double acc = 0.0;
                        for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
                        arow[k] += acc;
                    }
                }
            }
            if (braw->requires_grad) {
                braw->ensure_grad();
                double* bg = braw->grad.data();
                const double* av2 = araw->val.data();
                // dB = A^T * G
                for (int i = 0; i < M; ++i) {
                    const double* grow = g + static_cast<std::size_t>(i) * N;
                    const double* arow = av2 + static_cast<std::size_t>(i) * K;
                    for (int k = 0; k < K; ++k) {
                        const double aik = arow[k];
                        double* brow = bg + static_cast<std::size_t>(k) * N;
                        for (int j = 0; j < N; ++j) brow[j] += aik * grow[j];
                    }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor transpose(const Tensor& ta) {
    check_2d(ta, "transpose");
    auto a = ta.node();
    const int M = a->shape[0], N = a->shape[1];
    auto out = make_node({N, M}, {a});
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            out->val[static_cast<std::size_t>(j) * M + i] =
                a->val[static_cast<std::size_t>(i) * N + j];
        }
    }
    if (out->requires_grad) {
        Node* araw = a.get();
        out->backward_fn = [araw, M, N](Node& self) {
            araw->ensure_grad();
            for (int i = 0; i < M; ++i) {
                for (int j = 0; j < N; ++j) {
                    araw->grad[static_cast<std::size_t>(i) * N + j] +=
                        self.grad[static_cast<std::size_t>(j) * M + i];
                }
            }
        };
    }
    return Tensor(out);
}

Tensor reshape(const Tensor& ta, Shape shape) {
    auto a = ta.node();
    if (shape_numel(shape) != a->val.size()) {
        throw ShapeMismatch("reshape: element count mismatch");
    }
    auto out = make_node(std::move(shape), {a});
    out->val = a->val;
    if (out->requires_grad) {
        Node* araw = a.get();
        out->backward_fn = [araw](Node& self) {
            araw->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                araw->grad[i] += self.grad[i];
            }
        };
    }
    return Tensor(out);
}

Tensor slice_cols(const Tensor& ta, int c0, int c1) {
    check_2d(ta, "slice_cols");
    auto a = ta.node();
    const int N = a->shape[0], C = a->shape[1];
    if (c0 < 0 || c1 > C || c0 >= c1) throw ShapeMismatch("slice_cols: bad range");
    const int W = c1 - c0;
    auto out = make_node({N, W}, {a});
    for (int i = 0; i < N; ++i) {
        const double* src = a->val.data() + static_cast<std::size_t>(i) * C + c0;
        double* dst = out->val.data() + static_cast<std::size_t>(i) * W;
        std::copy(src, src + W, dst);
    }
    if (out->requires_grad) {
        Node* araw = a.get();
        out->backward_fn = [araw, N, C, c0, W](Node& self) {
            araw->ensure_grad();
            for (int i = 0; i < N; ++i) {
                const double* g = self.grad.data() + static_cast<std::size_t>(i) * W;
                double* dst = araw->grad.data() + static_cast<std::size_t>(i) * C + c0;
                for (int j = 0; j < W; ++j) dst[j] += g[j];
            }
        };
    }
    return Tensor(out);
}

Tensor slice_rows(const Tensor& ta, int r0, int r1) {
    check_2d(ta, "slice_rows");
    auto a = ta.node();
    const int N = a->shape[0], C = a->shape[1];
    if (r0 < 0 || r1 > N || r0 >= r1) throw ShapeMismatch("slice_rows: bad range");
    const int H = r1 - r0;
    auto out = make_node({H, C}, {a});
    std::copy(a->val.begin() + static_cast<std::size_t>(r0) * C,
              a->val.begin() + static_cast<std::size_t>(r1) * C, out->val.begin());
    if (out->requires_grad) {
        Node* araw = a.get();
        out->backward_fn = [araw, r0, C, H](Node& self) {
            araw->ensure_grad();
            double* dst = araw->grad.data() + static_cast<std::size_t>(r0) * C;
            for (std::size_t i = 0; i < static_cast<std::size_t>(H) * C; ++i) {
                dst[i] += self.grad[i];
            }
        };
    }
    return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
    const int N = parts[0].shape()[0];
    int C = 0;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        check_2d(p, "concat_cols");
        if (p.shape()[0] != N) throw ShapeMismatch("concat_cols: row mismatch");
        C += p.shape()[1];
        nodes.push_back(p.node());
    }
    auto out = make_node({N, C}, nodes);
    int off = 0;
    for (const auto& p : nodes) {
        const int W = p->shape[1];
        for (int i = 0; i < N; ++i) {
            std::copy(p->val.begin() + static_cast<std::size_t>(i) * W,
                      p->val.begin() + static_cast<std::size_t>(i + 1) * W,
                      out->val.begin() + static_cast<std::size_t>(i) * C + off);
        }
        off += W;
    }
    if (out->requires_grad) {
        std::vector<Node*> raw;
        for (const auto& p : nodes) raw.push_back(p.get());
        out->backward_fn = [raw, N, C](Node& self) {
            int off2 = 0;
            for (Node* p : raw) {
                const int W = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < N; ++i) {
                        const double* g =
                            self.grad.data() + static_cast<std::size_t>(i) * C + off2;
                        double* dst = p->grad.data() + static_cast<std::size_t>(i) * W;
                        for (int j = 0; j < W; ++j) dst[j] += g[j];
                    }
                }
                off2 += W;
            }
        };
    }
    return Tensor(out);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
    const int C = parts[0].shape()[1];
    int N = 0;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        check_2d(p, "concat_rows");
        if (p.shape()[1] != C) throw ShapeMismatch("concat_rows: column mismatch");
        N += p.shape()[0];
        nodes.push_back(p.node());
    }
    auto out = make_node({N, C}, nodes);
    std::size_t off = 0;
    for (const auto& p : nodes) {
        std::copy(p->val.begin(), p->val.end(), out->val.begin() + off);
        off += p->val.size();
    }
    if (out->requires_grad) {
        std::vector<Node*> raw;
        for (const auto& p : nodes) raw.push_back(p.get());
        out->backward_fn = [raw](Node& self) {
            std::size_t off2 = 0;
            for (Node* p : raw) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < p->val.size(); ++i) {
                        p->grad[i] += self.grad[off2 + i];
                    }
                }
                off2 += p->val.size();
            }
        };
    }
    return Tensor(out);
}

Tensor permute_cols(const Tensor& ta, const std::vector<int>& src) {
    check_2d(ta, "permute_cols");
    auto a = ta.node();
    const int N = a->shape[0], C = a->shape[1];
    const int W = static_cast<int>(src.size());
    for (int s : src) {
        if (s < 0 || s >= C) throw ShapeMismatch("permute_cols: index out of range");
    }
    auto out = make_node({N, W}, {a});
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < W; ++j) {
            out->val[static_cast<std::size_t>(i) * W + j] =
                a->val[static_cast<std::size_t>(i) * C + src[j]];
        }
    }
    if (out->requires_grad) {
        Node* araw = a.get();
        auto srcCopy = src;
        out->backward_fn = [araw, srcCopy, N, C, W](Node& self) {
            araw->ensure_grad();
            for (int i = 0; i < N; ++i) {
                for (int j = 0; j < W; ++j) {
                    araw->grad[static_cast<std::size_t>(i) * C + srcCopy[j]] +=
                        self.grad[static_cast<std::size_t>(i) * W + j];
                }
            }
        };
    }
    return Tensor(out);
}

Tensor repeat_rows(const Tensor& ta, int factor) {
    check_2d(ta, "repeat_rows");
    if (factor < 1) throw ShapeMismatch("repeat_rows: factor must be >= 1");
    auto a = ta.node();
    const int N = a->shape[0], C = a->shape[1];
    auto out = make_node({N * factor, C}, {a});
    for (int i = 0; i < N; ++i) {
        for (int r = 0; r < factor; ++r) {
            std::copy(a->val.begin() + static_cast<std::size_t>(i) * C,
                      a->val.begin() + static_cast<std::size_t>(i + 1) * C,
                      out->val.begin() + (static_cast<std::size_t>(i) * factor + r) * C);
        }
    }
    if (out->requires_grad) {
        Node* araw = a.get();
        out->backward_fn = [araw, N, C, factor](Node& self) {
            araw->ensure_grad();
            for (int i = 0; i < N; ++i) {
                double* dst = araw->grad.data() + static_cast<std::size_t>(i) * C;
                for (int r = 0; r < factor; ++r) {
                    const double* g = self.grad.data() +
                                      (static_cast<std::size_t>(i) * factor + r) * C;
                    for (int c = 0; c < C; ++c) dst[c] += g[c];
                }
            }
        };
    }
    return Tensor(out);
}

Tensor gather_rows(const Tensor& ttable, const std::vector<int>& idx) {
    check_2d(ttable, "gather_rows");
    auto table = ttable.node();
    const int R = table->shape[0], C = table->shape[1];
    const int N = static_cast<int>(idx.size());
    for (int i : idx) {
        if (i < 0 || i >= R) throw ShapeMismatch("gather_rows: index out of range");
    }
    auto out = make_node({N, C}, {table});
    for (int i = 0; i < N; ++i) {
        std::copy(table->val.begin() + static_cast<std::size_t>(idx[i]) * C,
                  table->val.begin() + static_cast<std::size_t>(idx[i] + 1) * C,
                  out->val.begin() + static_cast<std::size_t>(i) * C);
    }
    if (out->requires_grad) {
        Node* traw = table.get();
        auto idxCopy = idx;
        out->backward_fn = [traw, idxCopy, C](Node& self) {
            traw->ensure_grad();
            for (std::size_t i = 0; i < idxCopy.size(); ++i) {
                const double* g = self.grad.data() + i * C;
                double* dst = traw->grad.data() +
                              static_cast<std::size_t>(idxCopy[i]) * C;
                for (int c = 0; c < C; ++c) dst[c] += g[c];
            }
        };
    }
    return Tensor(out);
}

Tensor row_sum(const Tensor& ta) {
    check_2d(ta, "row_sum");
    auto a = ta.node();
    const int N = a->shape[0], C = a->shape[1];
    auto out = make_node({N, 1}, {a});
    for (int i = 0; i < N; ++i) {
        double acc = 0.0;
        const double* row = a->val.data() + static_cast<std::size_t>(i) * C;
        for (int c = 0; c < C; ++c) acc += row[c];
        out->val[i] = acc;
    }
    if (out->requires_grad) {
        Node* araw = a.get();
        out->backward_fn = [araw, N, C](Node& self) {
            araw->ensure_grad();
            for (int i = 0; i < N; ++i) {
                const double g = self.grad[i];
                double* row = araw->grad.data() + static_cast<std::size_t>(i) * C;
                for (int c = 0; c < C; ++c) row[c] += g;
            }
        };
    }
    return Tensor(out);
}

Tensor sum_all(const Tensor& ta) {
    auto a = ta.node();
    auto out = make_node({1}, {a});
    double acc = 0.0;
    for (double v : a->val) acc += v;
    out->val[0] = acc;
    if (out->requires_grad) {
        Node* araw = a.get();
        out->backward_fn = [araw](Node& self) {
            araw->ensure_grad();
            const double g = self.grad[0];
            for (double& x : araw->grad) x += g;
        };
    }
    return Tensor(out);
}

Tensor mean_all(const Tensor& ta) {
    const double inv = 1.0 / static_cast<double>(ta.numel());
    return mul_scalar(sum_all(ta), inv);
}

Tensor sqrt_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Tensor tanh_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor atan2_t(const Tensor& ty, const Tensor& tx) {
    auto y = ty.node();
    auto x = tx.node();
    if (y->shape != x->shape) throw ShapeMismatch("atan2: shape mismatch");
    auto out = make_node(y->shape, {y, x});
    const std::size_t n = out->val.size();
    for (std::size_t i = 0; i < n; ++i) {
        out->val[i] = std::atan2(y->val[i], x->val[i]);
    }
    if (out->requires_grad) {
        Node* yraw = y.get();
        Node* xraw = x.get();
        out->backward_fn = [yraw, xraw](Node& self) {
            if (yraw->requires_grad) yraw->ensure_grad();
            if (xraw->requires_grad) xraw->ensure_grad();
            const std::size_t m = self.val.size();
            for (std::size_t i = 0; i < m; ++i) {
                const double yv = yraw->val[i];
                const double xv = xraw->val[i];
                const double r2 = yv * yv + xv * xv;
                if (r2 == 0.0) continue;
                const double g = self.grad[i];
                if (yraw->requires_grad) yraw->grad[i] += g * xv / r2;
                if (xraw->requires_grad) xraw->grad[i] -= g * yv / r2;
            }
        };
    }
    return Tensor(out);
}

Tensor acos_clamped(const Tensor& a, double eps) {
    const double lo = -1.0 + eps, hi = 1.0 - eps;
    return unary_op(a,
                    [lo, hi](double x) { return std::acos(std::clamp(x, lo, hi)); },
                    [lo, hi](double x, double) {
                        if (x <= lo || x >= hi) return 0.0;
                        return -1.0 / std::sqrt(1.0 - x * x);
                    });
}

Tensor clamp_min(const Tensor& a, double m) {
    return unary_op(a, [m](double x) { return x < m ? m : x; },
                    [m](double x, double) { return x < m ? 0.0 : 1.0; });
}

Tensor huber(const Tensor& ta, const Tensor& tb, double delta) {
    auto a = ta.node();
    auto b = tb.node();
    if (a->shape != b->shape) throw ShapeMismatch("huber: shape mismatch");
    auto out = make_node(a->shape, {a, b});
    const std::size_t n = out->val.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double r = a->val[i] - b->val[i];
        const double ar = std::abs(r);
        out->val[i] = ar <= delta ? 0.5 * r * r / delta : ar - 0.5 * delta;
    }
    if (out->requires_grad) {
        Node* araw = a.get();
        Node* braw = b.get();
        out->backward_fn = [araw, braw, delta](Node& self) {
            const std::size_t m = self.val.size();
            if (araw->requires_grad) araw->ensure_grad();
            if (braw->requires_grad) braw->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double r = araw->val[i] - braw->val[i];
                const double d = std::clamp(r / delta, -1.0, 1.0) * self.grad[i];
                if (araw->requires_grad) araw->grad[i] += d;
                if (braw->requires_grad) braw->grad[i] -= d;
            }
        };
    }
    return Tensor(out);
}

Tensor stop_gradient(const Tensor& ta) {
    auto a = ta.node();
    auto out = std::make_shared<Node>();
    out->shape = a->shape;
    out->val = a->val;
    out->requires_grad = false;
    return Tensor(out);
}

Tensor layernorm_affine(const Tensor& tx, const Tensor& tgamma,
                        const Tensor& tbeta, double eps) {
    check_2d(tx, "layernorm");
    auto x = tx.node();
    auto gamma = tgamma.node();
    auto beta = tbeta.node();
    const int N = x->shape[0], C = x->shape[1];
    if (static_cast<int>(gamma->val.size()) != C ||
        static_cast<int>(beta->val.size()) != C) {
        throw ShapeMismatch("layernorm: affine size mismatch");
    }
    auto out = make_node({N, C}, {x, gamma, beta});
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * C);
    auto inv_sigma = std::make_shared<std::vector<double>>(N);
    for (int i = 0; i < N; ++i) {
        const double* row = x->val.data() + static_cast<std::size_t>(i) * C;
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += row[c];
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = row[c] - mean;
            var += d * d;
        }
        var /= C;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = inv;
        double* xh = xhat->data() + static_cast<std::size_t>(i) * C;
        double* o = out->val.data() + static_cast<std::size_t>(i) * C;
        for (int c = 0; c < C; ++c) {
            xh[c] = (row[c] - mean) * inv;
            o[c] = xh[c] * gamma->val[c] + beta->val[c];
        }
    }
    if (out->requires_grad) {
        Node* xraw = x.get();
        Node* graw = gamma.get();
        Node* braw = beta.get();
        out->backward_fn = [xraw, graw, braw, xhat, inv_sigma, N, C](Node& self) {
            if (xraw->requires_grad) xraw->ensure_grad();
            if (graw->requires_grad) graw->ensure_grad();
            if (braw->requires_grad) braw->ensure_grad();
            for (int i = 0; i < N; ++i) {
                const double* g = self.grad.data() + static_cast<std::size_t>(i) * C;
                const double* xh = xhat->data() + static_cast<std::size_t>(i) * C;
                if (graw->requires_grad || braw->requires_grad) {
                    for (int c = 0; c < C; ++c) {
                        if (graw->requires_grad) graw->grad[c] += g[c] * xh[c];
                        if (braw->requires_grad) braw->grad[c] += g[c];
                    }
                }
                if (xraw->requires_grad) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const double gg = g[c] * graw->val[c];
                        mean_g += gg;
                        mean_gx += gg * xh[c];
                    }
                    mean_g /= C;
                    mean_gx /= C;
                    const double inv = (*inv_sigma)[i];
                    double* xg = xraw->grad.data() + static_cast<std::size_t>(i) * C;
                    for (int c = 0; c < C; ++c) {
                        const double gg = g[c] * graw->val[c];
                        xg[c] += inv * (gg - mean_g - xh[c] * mean_gx);
                    }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor softmax_masked_rows(const Tensor& tx,
                           const std::vector<std::uint8_t>& key_valid) {
    check_2d(tx, "softmax_masked_rows");
    auto x = tx.node();
    const int N = x->shape[0], M = x->shape[1];
    if (static_cast<int>(key_valid.size()) != M) {
        throw ShapeMismatch("softmax_masked_rows: mask size mismatch");
    }
    bool any_valid = false;
    for (auto v : key_valid) any_valid |= v != 0;
    if (!any_valid) throw ShapeMismatch("softmax_masked_rows: all keys masked");
    auto out = make_node({N, M}, {x});
    for (int i = 0; i < N; ++i) {
        const double* row = x->val.data() + static_cast<std::size_t>(i) * M;
        double* o = out->val.data() + static_cast<std::size_t>(i) * M;
        double mx = -1e300;
        for (int j = 0; j < M; ++j) {
            if (key_valid[j] && row[j] > mx) mx = row[j];
        }
        double z = 0.0;
        for (int j = 0; j < M; ++j) {
            o[j] = key_valid[j] ? std::exp(row[j] - mx) : 0.0;
            z += o[j];
        }
        const double inv = 1.0 / z;
        for (int j = 0; j < M; ++j) o[j] *= inv;
    }
    if (out->requires_grad) {
        Node* xraw = x.get();
        out->backward_fn = [xraw, N, M](Node& self) {
            xraw->ensure_grad();
            for (int i = 0; i < N; ++i) {
                const double* y = self.val.data() + static_cast<std::size_t>(i) * M;
                const double* g = self.grad.data() + static_cast<std::size_t>(i) * M;
                double dot = 0.0;
                for (int j = 0; j < M; ++j) dot += g[j] * y[j];
                double* xg = xraw->grad.data() + static_cast<std::size_t>(i) * M;
                for (int j = 0; j < M; ++j) xg[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return Tensor(out);
}

Tensor conv1d(const Tensor& tx, const Tensor& tw, const Tensor& tb, int stride) {
    check_2d(tx, "conv1d");
    auto x = tx.node();
    auto w = tw.node();
    auto b = tb.node();
    if (w->shape.size() != 3) throw ShapeMismatch("conv1d: weight must be 3-D");
    const int T = x->shape[0], Cin = x->shape[1];
    const int Cout = w->shape[0], WCin = w->shape[1], K = w->shape[2];
    if (WCin != Cin) throw ShapeMismatch("conv1d: channel mismatch");
    if (static_cast<int>(b->val.size()) != Cout) throw ShapeMismatch("conv1d: bias size");
    if (stride < 1) throw ShapeMismatch("conv1d: stride must be >= 1");
    const int Tout = (T + stride - 1) / stride;
    const int pad_total = std::max(0, (Tout - 1) * stride + K - T);
    const int pad_left = pad_total / 2;
    auto out = make_node({Tout, Cout}, {x, w, b});
    for (int to = 0; to < Tout; ++to) {
        double* orow = out->val.data() + static_cast<std::size_t>(to) * Cout;
        for (int co = 0; co < Cout; ++co) orow[co] = b->val[co];
        for (int k = 0; k < K; ++k) {
            const int ti = to * stride + k - pad_left;
            if (ti < 0 || ti >= T) continue;
            const double* xrow = x->val.data() + static_cast<std::size_t>(ti) * Cin;
            for (int co = 0; co < Cout; ++co) {
                const double* wrow =
                    w->val.data() + (static_cast<std::size_t>(co) * Cin) * K + k;
                double acc = 0.0;
                for (int ci = 0; ci < Cin; ++ci) acc += xrow[ci] * wrow[static_cast<std::size_t>(ci) * K];
                orow[co] += acc;
            }
        }
    }
    if (out->requires_grad) {
        Node* xraw = x.get();
        Node* wraw = w.get();
        Node* braw = b.get();
        out->backward_fn = [xraw, wraw, braw, T, Cin, Cout, K, stride, pad_left,
                            Tout](Node& self) {
            if (xraw->requires_grad) xraw->ensure_grad();
            if (wraw->requires_grad) wraw->ensure_grad();
            if (braw->requires_grad) braw->ensure_grad();
            for (int to = 0; to < Tout; ++to) {
                const double* g = self.grad.data() + static_cast<std::size_t>(to) * Cout;
                if (braw->requires_grad) {
                    for (int co = 0; co < Cout; ++co) braw->grad[co] += g[co];
                }
                for (int k = 0; k < K; ++k) {
                    const int ti = to * stride + k - pad_left;
                    if (ti < 0 || ti >= T) continue;
                    const double* xrow =
                        xraw->val.data() + static_cast<std::size_t>(ti) * Cin;
                    double* xgrow = xraw->requires_grad
                                        ? xraw->grad.data() + static_cast<std::size_t>(ti) * Cin
                                        : nullptr;
                    for (int co = 0; co < Cout; ++co) {
                        const double gco = g[co];
                        const std::size_t wbase = (static_cast<std::size_t>(co) * Cin) * K + k;
                        if (wraw->requires_grad) {
                            for (int ci = 0; ci < Cin; ++ci) {
                                wraw->grad[wbase + static_cast<std::size_t>(ci) * K] +=
                                    gco * xrow[ci];
                            }
                        }
                        if (xgrow) {
                            const double* wrow = wraw->val.data() + wbase;
                            for (int ci = 0; ci < Cin; ++ci) {
                                xgrow[ci] += gco * wrow[static_cast<std::size_t>(ci) * K];
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor rope(const Tensor& tx, const std::vector<int>& positions, double base) {
    check_2d(tx, "rope");
    auto x = tx.node();
    const int N = x->shape[0], D = x->shape[1];
    if (D % 2 != 0) throw OddHeadDim("rope: head dimension must be even");
    if (static_cast<int>(positions.size()) != N) {
        throw ShapeMismatch("rope: positions size mismatch");
    }
    const int H = D / 2;
    auto angles = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * H);
    std::vector<double> freq(H);
    for (int j = 0; j < H; ++j) {
        freq[j] = std::pow(base, -2.0 * j / static_cast<double>(D));
    }
    auto out = make_node({N, D}, {x});
    for (int i = 0; i < N; ++i) {
        const double* row = x->val.data() + static_cast<std::size_t>(i) * D;
        double* o = out->val.data() + static_cast<std::size_t>(i) * D;
        for (int j = 0; j < H; ++j) {
            const double th = positions[i] * freq[j];
            (*angles)[static_cast<std::size_t>(i) * H + j] = th;
            const double c = std::cos(th), s = std::sin(th);
            const double x0 = row[2 * j], x1 = row[2 * j + 1];
            o[2 * j] = x0 * c - x1 * s;
            o[2 * j + 1] = x0 * s + x1 * c;
        }
    }
    if (out->requires_grad) {
        Node* xraw = x.get();
        out->backward_fn = [xraw, angles, N, H](Node& self) {
            xraw->ensure_grad();
            for (int i = 0; i < N; ++i) {
                const double* g = self.grad.data() + static_cast<std::size_t>(i) * 2 * H;
                double* xg = xraw->grad.data() + static_cast<std::size_t>(i) * 2 * H;
                for (int j = 0; j < H; ++j) {
                    const double th = (*angles)[static_cast<std::size_t>(i) * H + j];
                    const double c = std::cos(th), s = std::sin(th);
                    const double g0 = g[2 * j], g1 = g[2 * j + 1];
                    xg[2 * j] += g0 * c + g1 * s;
                    xg[2 * j + 1] += -g0 * s + g1 * c;
                }
            }
        };
    }
    return Tensor(out);
}

void backward(const Tensor& loss) {
    auto root = loss.node();
    if (!root) throw NonScalarLoss("backward: undefined tensor");
    if (root->val.size() != 1) throw NonScalarLoss("backward: loss must be scalar");
    if (!root->requires_grad) return;

    // Iterative DFS: post-order topological sort with cycle detection.
    std::vector<Node*> order;
    std::unordered_map<Node*, int> state;  // 1 = on stack, 2 = done
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    state[root.get()] = 1;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (!p->requires_grad) continue;
            auto it = state.find(p);
            if (it == state.end()) {
                state[p] = 1;
                stack.emplace_back(p, 0);
            } else if (it->second == 1) {
                throw GraphCycle("backward: cycle detected in computation graph");
            }
        } else {
            state[node] = 2;
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params, double eps,
                  int max_coords_per_param, std::uint64_t seed) {
    std::vector<Tensor> ps = params;
    for (auto& p : ps) p.zero_grad();
    Tensor loss = f();
    backward(loss);
    std::vector<std::vector<double>> ad;
    ad.reserve(ps.size());
    for (auto& p : ps) {
        ad.push_back(p.grad().empty() ? std::vector<double>(p.numel(), 0.0)
                                      : p.grad());
    }

    Rng rng(seed);
    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < ps.size(); ++pi) {
        auto& vals = ps[pi].raw_values();
        std::vector<std::size_t> coords;
        if (max_coords_per_param <= 0 ||
            vals.size() <= static_cast<std::size_t>(max_coords_per_param)) {
            coords.resize(vals.size());
            for (std::size_t i = 0; i < vals.size(); ++i) coords[i] = i;
        } else {
            for (int i = 0; i < max_coords_per_param; ++i) {
                coords.push_back(rng.uniform_index(vals.size()));
            }
        }
        for (std::size_t c : coords) {
            const double orig = vals[c];
            auto central = [&](double h) {
                vals[c] = orig + h;
                const double up = f().scalar();
                vals[c] = orig - h;
                const double dn = f().scalar();
                vals[c] = orig;
                return (up - dn) / (2.0 * h);
            };
            const double a = ad[pi][c];
            auto rel_to = [&](double fd) {
                return std::abs(a - fd) / std::max(1e-6, std::abs(a) + std::abs(fd));
            };
            double rel = rel_to(central(eps));
            // Central differences lose accuracy when the step straddles a
            // piecewise boundary (huber, clamps); a genuine gradient bug
            // persists at every step size, an artifact does not.
            if (rel > 1e-6) rel = std::min(rel, rel_to(central(eps * 3.0)));
            if (rel > 1e-6) rel = std::min(rel, rel_to(central(eps / 3.0)));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace magnet::nn

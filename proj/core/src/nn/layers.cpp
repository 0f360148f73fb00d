#include "magnet/nn/layers.hpp"

#include <cmath>

namespace magnet::nn {

Tensor ParamStore::create(const std::string& name, Shape shape, Rng& rng,
                          double scale) {
    if (params_.count(name)) throw ConfigError("duplicate parameter: " + name);
    Tensor t = Tensor::param_randn(std::move(shape), rng, scale);
    params_.emplace(name, t);
    return t;
}

Tensor ParamStore::create_values(const std::string& name, Shape shape,
                                 std::vector<double> values) {
    if (params_.count(name)) throw ConfigError("duplicate parameter: " + name);
    Tensor t = Tensor::param_values(std::move(shape), std::move(values));
    params_.emplace(name, t);
    return t;
}

Tensor ParamStore::create_buffer(const std::string& name, Shape shape,
                                 std::vector<double> values) {
    if (params_.count(name)) throw ConfigError("duplicate parameter: " + name);
    Tensor t = Tensor::from_values(std::move(shape), std::move(values), false);
    params_.emplace(name, t);
    return t;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

std::vector<Tensor> ParamStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
}

std::vector<Tensor> ParamStore::trainable_tensors() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : params_) {
        if (t.requires_grad()) out.push_back(t);
    }
    return out;
}

void ParamStore::zero_grads() {
    for (auto& [_, t] : params_) {
        Tensor tt = t;
        tt.zero_grad();
    }
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
}

Linear Linear::create(ParamStore& store, const std::string& prefix, int in,
                      int out, Rng& rng) {
    Linear l;
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    l.W = store.create(prefix + ".W", {in, out}, rng, scale);
    l.b = store.create_values(prefix + ".b", {1, out},
                              std::vector<double>(out, 0.0));
    return l;
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, W), b); }

LayerNorm LayerNorm::create(ParamStore& store, const std::string& prefix, int c) {
    LayerNorm ln;
    ln.gamma = store.create_values(prefix + ".gamma", {c},
                                   std::vector<double>(c, 1.0));
    ln.beta = store.create_values(prefix + ".beta", {c},
                                  std::vector<double>(c, 0.0));
    return ln;
}

Tensor LayerNorm::forward(const Tensor& x) const {
    return layernorm_affine(x, gamma, beta, 1e-5);
}

Tensor gelu(const Tensor& x) {
    // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    Tensor x3 = mul(mul(x, x), x);
    Tensor inner = mul_scalar(add(x, mul_scalar(x3, 0.044715)), kC);
    return mul_scalar(mul(x, add_scalar(tanh_t(inner), 1.0)), 0.5);
}

std::vector<double> sinusoidal_embed(double tau, int d_emb) {
    if (d_emb % 2 != 0) throw OddDimension("sinusoidal_embed: d_emb must be even");
    const int h = d_emb / 2;
    std::vector<double> out(d_emb);
    for (int k = 0; k < h; ++k) {
        const double w =
            h == 1 ? 1.0 : std::pow(10.0, 4.0 * k / static_cast<double>(h - 1));
        out[k] = std::sin(w * tau);
        out[h + k] = std::cos(w * tau);
    }
    return out;
}

std::pair<Tensor, Tensor> rope_apply(const Tensor& q, const Tensor& k,
                                     const std::vector<int>& positions) {
    return {rope(q, positions), rope(k, positions)};
}

Conv1d Conv1d::create(ParamStore& store, const std::string& prefix, int cin,
                      int cout, int k, int stride, Rng& rng) {
    Conv1d c;
    const double scale = 1.0 / std::sqrt(static_cast<double>(cin * k));
    c.w = store.create(prefix + ".w", {cout, cin, k}, rng, scale);
    c.b = store.create_values(prefix + ".b", {cout},
                              std::vector<double>(cout, 0.0));
    c.stride = stride;
    return c;
}

Tensor Conv1d::forward(const Tensor& x) const { return conv1d(x, w, b, stride); }

ResBlock1d ResBlock1d::create(ParamStore& store, const std::string& prefix,
                              int channels, Rng& rng) {
    ResBlock1d r;
    r.c1 = Conv1d::create(store, prefix + ".c1", channels, channels, 3, 1, rng);
    r.c2 = Conv1d::create(store, prefix + ".c2", channels, channels, 3, 1, rng);
    return r;
}

Tensor ResBlock1d::forward(const Tensor& x) const {
    return add(x, c2.forward(gelu(c1.forward(x))));
}

Mlp Mlp::create(ParamStore& store, const std::string& prefix, int d, int hidden,
                Rng& rng) {
    Mlp m;
    m.fc1 = Linear::create(store, prefix + ".fc1", d, hidden, rng);
    m.fc2 = Linear::create(store, prefix + ".fc2", hidden, d, rng);
    return m;
}

Tensor Mlp::forward(const Tensor& x) const {
    return fc2.forward(gelu(fc1.forward(x)));
}

MultiHeadSelfAttention MultiHeadSelfAttention::create(ParamStore& store,
                                                      const std::string& prefix,
                                                      int d, int heads,
                                                      Rng& rng) {
    if (heads < 1 || d % heads != 0) {
        throw ConfigError("attention: d must be divisible by heads");
    }
    if ((d / heads) % 2 != 0) {
        throw OddHeadDim("attention: head dimension must be even for RoPE");
    }
    MultiHeadSelfAttention a;
    a.qkv = Linear::create(store, prefix + ".qkv", d, 3 * d, rng);
    a.out = Linear::create(store, prefix + ".out", d, d, rng);
    a.heads = heads;
    return a;
}

Tensor MultiHeadSelfAttention::forward(
    const Tensor& x, const std::vector<int>& positions,
    const std::vector<std::uint8_t>& valid) const {
    const int d = x.shape()[1];
    const int dh = d / heads;
    Tensor qkv_out = qkv.forward(x);
    std::vector<Tensor> ctx;
    ctx.reserve(heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
        Tensor q = slice_cols(qkv_out, h * dh, (h + 1) * dh);
        Tensor k = slice_cols(qkv_out, d + h * dh, d + (h + 1) * dh);
        Tensor v = slice_cols(qkv_out, 2 * d + h * dh, 2 * d + (h + 1) * dh);
        q = rope(q, positions);
        k = rope(k, positions);
        Tensor scores = mul_scalar(matmul(q, transpose(k)), inv_sqrt);
        Tensor att = softmax_masked_rows(scores, valid);
        ctx.push_back(matmul(att, v));
    }
    return out.forward(concat_cols(ctx));
}

TransformerBlock TransformerBlock::create(ParamStore& store,
                                          const std::string& prefix, int d,
                                          int heads, int mlp_hidden, Rng& rng) {
    TransformerBlock b;
    b.attn = MultiHeadSelfAttention::create(store, prefix + ".attn", d, heads, rng);
    b.ln1 = LayerNorm::create(store, prefix + ".ln1", d);
    b.mlp = Mlp::create(store, prefix + ".mlp", d, mlp_hidden, rng);
    b.ln2 = LayerNorm::create(store, prefix + ".ln2", d);
    return b;
}

Tensor mask_rows(const Tensor& x, const std::vector<std::uint8_t>& valid) {
    const int n = x.shape()[0];
    if (static_cast<int>(valid.size()) != n) {
        throw ShapeMismatch("mask_rows: mask size mismatch");
    }
    std::vector<double> m(n);
    for (int i = 0; i < n; ++i) m[i] = valid[i] ? 1.0 : 0.0;
    return mul(x, Tensor::from_values({n, 1}, std::move(m)));
}

Tensor TransformerBlock::forward(const Tensor& x,
                                 const std::vector<int>& positions,
                                 const std::vector<std::uint8_t>& valid) const {
    Tensor y = ln1.forward(add(x, attn.forward(x, positions, valid)));
    y = mask_rows(y, valid);
    Tensor z = ln2.forward(add(y, mlp.forward(y)));
    return mask_rows(z, valid);
}

}  // namespace magnet::nn

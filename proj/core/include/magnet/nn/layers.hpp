#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "magnet/nn/tensor.hpp"

namespace magnet::nn {

/// Named parameter set with deterministic, seed-reproducible initialization.
/// Iteration order is lexicographic (std::map), which fixes the optimizer
/// and checkpoint ordering.
class ParamStore {
  public:
    Tensor create(const std::string& name, Shape shape, Rng& rng, double scale);
    Tensor create_values(const std::string& name, Shape shape,
                         std::vector<double> values);
    /// Checkpointed but not trainable (no gradient, skipped by optimizers).
    Tensor create_buffer(const std::string& name, Shape shape,
                         std::vector<double> values);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    std::size_t size() const { return params_.size(); }
    const std::map<std::string, Tensor>& all() const { return params_; }
    std::vector<Tensor> tensors() const;
    std::vector<Tensor> trainable_tensors() const;
    void zero_grads();
    std::size_t total_elements() const;

  private:
    std::map<std::string, Tensor> params_;
};

struct Linear {
    Tensor W;  // [in, out]
    Tensor b;  // [1, out]

    static Linear create(ParamStore& store, const std::string& prefix, int in,
                         int out, Rng& rng);
    Tensor forward(const Tensor& x) const;  // [N, in] -> [N, out]
};

struct LayerNorm {
    Tensor gamma;  // [C]
    Tensor beta;   // [C]

    static LayerNorm create(ParamStore& store, const std::string& prefix, int c);
    Tensor forward(const Tensor& x) const;
};

/// tanh-approximation GELU.
Tensor gelu(const Tensor& x);

/// Noise-level embedding: [sin(w_k tau); cos(w_k tau)] with d/2 frequencies
/// geometric from 1 to 1e4. Throws OddDimension when d_emb is odd.
std::vector<double> sinusoidal_embed(double tau, int d_emb);

/// Rotary map applied to a query/key pair at the given shared positions.
std::pair<Tensor, Tensor> rope_apply(const Tensor& q, const Tensor& k,
                                     const std::vector<int>& positions);

struct Conv1d {
    Tensor w;  // [Cout, Cin, K]
    Tensor b;  // [Cout]
    int stride = 1;

    static Conv1d create(ParamStore& store, const std::string& prefix, int cin,
                         int cout, int k, int stride, Rng& rng);
    Tensor forward(const Tensor& x) const;  // [T, Cin] -> [ceil(T/stride), Cout]
};

/// y = x + conv_k3(gelu(conv_k3(x))), stride 1.
struct ResBlock1d {
    Conv1d c1, c2;

    static ResBlock1d create(ParamStore& store, const std::string& prefix,
                             int channels, Rng& rng);
    Tensor forward(const Tensor& x) const;
};

struct Mlp {
    Linear fc1, fc2;

    static Mlp create(ParamStore& store, const std::string& prefix, int d,
                      int hidden, Rng& rng);
    Tensor forward(const Tensor& x) const;
};

/// Multi-head self-attention with RoPE on q/k. `positions` gives each
/// token's rotary position (tokens at the same time index share one), and
/// `valid` marks live tokens: masked tokens are excluded as keys and their
/// outputs zeroed.
struct MultiHeadSelfAttention {
    Linear qkv;
    Linear out;
    int heads = 1;

    static MultiHeadSelfAttention create(ParamStore& store,
                                         const std::string& prefix, int d,
                                         int heads, Rng& rng);
    Tensor forward(const Tensor& x, const std::vector<int>& positions,
                   const std::vector<std::uint8_t>& valid) const;
};

/// Post-norm transformer encoder block:
///   x = LN(x + MHSA(x)); x = LN(x + MLP(x)); masked rows zeroed.
struct TransformerBlock {
    MultiHeadSelfAttention attn;
    LayerNorm ln1;
    Mlp mlp;
    LayerNorm ln2;

    static TransformerBlock create(ParamStore& store, const std::string& prefix,
                                   int d, int heads, int mlp_hidden, Rng& rng);
    Tensor forward(const Tensor& x, const std::vector<int>& positions,
                   const std::vector<std::uint8_t>& valid) const;
};

/// Multiply rows by a 0/1 validity column.
Tensor mask_rows(const Tensor& x, const std::vector<std::uint8_t>& valid);

}  // namespace magnet::nn

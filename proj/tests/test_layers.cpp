#include <cmath>
#include <cstring>

#include "doctest.h"
#include "magnet/nn/checkpoint.hpp"
#include "magnet/nn/layers.hpp"
#include "magnet/nn/optim.hpp"

using namespace magnet;
using nn::ParamStore;
using nn::Tensor;

TEST_CASE("gelu and layernorm basics") {
    auto zero = Tensor::from_values({1, 1}, {0.0});
    CHECK(nn::gelu(zero).values()[0] == 0.0);
    // gelu(1) under tanh approximation
    auto one = Tensor::from_values({1, 1}, {1.0});
    CHECK(nn::gelu(one).values()[0] == doctest::Approx(0.841192).epsilon(1e-5));

    ParamStore store;
    Rng rng(0);
    auto ln = nn::LayerNorm::create(store, "ln", 4);
    auto constant = Tensor::from_values({2, 4}, std::vector<double>(8, 3.25));
    auto out = ln.forward(constant);
    for (double v : out.values()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("linear with identity weights passes input through") {
    ParamStore store;
    Rng rng(0);
    auto lin = nn::Linear::create(store, "l", 3, 3, rng);
    auto& W = store.at("l.W");
    std::fill(W.raw_values().begin(), W.raw_values().end(), 0.0);
    for (int i = 0; i < 3; ++i) W.raw_values()[i * 3 + i] = 1.0;
    auto x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    auto y = lin.forward(x);
    CHECK(y.values() == x.values());
}

TEST_CASE("sinusoidal embedding") {
    const auto at0 = nn::sinusoidal_embed(0.0, 8);
    for (int i = 0; i < 4; ++i) {
        CHECK(at0[i] == 0.0);        // sin half
        CHECK(at0[4 + i] == 1.0);    // cos half
    }
    CHECK(nn::sinusoidal_embed(0.37, 8) == nn::sinusoidal_embed(0.37, 8));
    CHECK_THROWS_AS(nn::sinusoidal_embed(0.5, 7), OddDimension);
    // paper-scale dimension works and spans frequencies 1..1e4
    const auto big = nn::sinusoidal_embed(1.0, 256);
    CHECK(big.size() == 256);
    CHECK(big[0] == doctest::Approx(std::sin(1.0)));
    CHECK(big[127] == doctest::Approx(std::sin(1e4)));
}

TEST_CASE("attention: single token equals its value projection") {
    ParamStore store;
    Rng rng(5);
    const int d = 8;
    auto attn = nn::MultiHeadSelfAttention::create(store, "a", d, 2, rng);
    std::vector<double> xv(d);
    for (int i = 0; i < d; ++i) xv[i] = 0.1 * (i + 1);
    auto x = Tensor::from_values({1, d}, xv);
    auto y = attn.forward(x, {0}, {1});

    // hand path: v = x W_qkv[:, 2d:3d] + b, out = v W_out + b_out
    auto qkv = nn::add(nn::matmul(x, store.at("a.qkv.W")), store.at("a.qkv.b"));
    auto v = nn::slice_cols(qkv, 2 * d, 3 * d);
    auto expect = nn::add(nn::matmul(v, store.at("a.out.W")), store.at("a.out.b"));
    for (int i = 0; i < d; ++i) {
        CHECK(y.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("transformer block: masked tokens match physically removed tokens") {
    ParamStore store;
    Rng rng(6);
    const int d = 16;
    auto block = nn::TransformerBlock::create(store, "b", d, 4, 4 * d, rng);

    Rng xr(7);
    std::vector<double> five(5 * d), three(3 * d);
    for (double& v : five) v = xr.normal();
    // valid tokens are rows 0, 2, 4
    const int keep[3] = {0, 2, 4};
    for (int i = 0; i < 3; ++i) {
        std::memcpy(&three[i * d], &five[keep[i] * d], d * sizeof(double));
    }
    auto full = Tensor::from_values({5, d}, five);
    auto small = Tensor::from_values({3, d}, three);

    auto y_full = block.forward(full, {0, 0, 1, 1, 2}, {1, 0, 1, 0, 1});
    auto y_small = block.forward(small, {0, 1, 2}, {1, 1, 1});
    for (int i = 0; i < 3; ++i) {
        for (int c = 0; c < d; ++c) {
            CHECK(y_full.values()[keep[i] * d + c] ==
                  doctest::Approx(y_small.values()[i * d + c]).epsilon(1e-12));
        }
    }
    // masked outputs exactly zero
    for (int c = 0; c < d; ++c) {
        CHECK(y_full.values()[1 * d + c] == 0.0);
        CHECK(y_full.values()[3 * d + c] == 0.0);
    }
}

TEST_CASE("transformer block gradients") {
    ParamStore store;
    Rng rng(8);
    const int d = 8;
    auto block = nn::TransformerBlock::create(store, "b", d, 2, 2 * d, rng);
    Rng xr(9);
    std::vector<double> xv(4 * d);
    for (double& v : xv) v = xr.normal();
    auto x = Tensor::param_values({4, d}, xv);
    std::vector<Tensor> params = store.tensors();
    params.push_back(x);
    const double err = nn::grad_check(
        [&] { return nn::mean_all(block.forward(x, {0, 0, 1, 1}, {1, 1, 1, 0})); },
        params, 1e-5, 6, 123);
    CHECK(err < 1e-4);
}

TEST_CASE("adamw: no-op on zero grads, signed first step, cosine endpoint") {
    ParamStore store;
    Rng rng(10);
    store.create("p", {4}, rng, 1.0);
    const auto before = store.at("p").values();

    nn::AdamWConfig cfg;
    cfg.base_lr = 1e-2;
    cfg.weight_decay = 0.0;
    cfg.total_steps = 100;
    nn::AdamW opt(cfg);
    Tensor p = store.at("p");
    p.zero_grad();
    opt.step(store);
    CHECK(store.at("p").values() == before);

    // large gradient -> first step ~ lr * sign(g) (bias-corrected)
    nn::AdamW fresh_opt(cfg);
    p.raw_grad().assign(4, 0.0);
    p.raw_grad()[0] = 1e6;
    p.raw_grad()[1] = -1e6;
    fresh_opt.step(store);
    CHECK(before[0] - store.at("p").values()[0] == doctest::Approx(cfg.base_lr).epsilon(1e-6));
    CHECK(before[1] - store.at("p").values()[1] == doctest::Approx(-cfg.base_lr).epsilon(1e-6));

    CHECK(opt.lr_at(cfg.total_steps) == 0.0);
    CHECK(opt.lr_at(0) == cfg.base_lr);
    CHECK(opt.lr_at(cfg.total_steps / 2) == doctest::Approx(cfg.base_lr / 2));
}

TEST_CASE("checkpoint roundtrip and mismatch rejection") {
    ParamStore store;
    Rng rng(11);
    store.create("enc.w", {3, 4}, rng, 0.5);
    store.create("enc.b", {4}, rng, 0.1);

    nn::AdamWConfig cfg;
    cfg.total_steps = 10;
    nn::AdamW opt(cfg);
    Tensor t = store.at("enc.w");
    t.raw_grad().assign(12, 0.25);
    Tensor t2 = store.at("enc.b");
    t2.raw_grad().assign(4, -0.5);
    opt.step(store);

    const std::string path = "/tmp/magnet_test_ckpt.txt";
    nn::save_checkpoint(path, "vqvae", {{"d_vq", "4"}, {"omega", "4"}}, store, &opt);

    const auto ck = nn::load_checkpoint(path);
    CHECK(ck.model_kind == "vqvae");
    CHECK(ck.config.at("omega") == "4");
    CHECK(ck.has_optimizer);
    CHECK(ck.optimizer_step == 1);

    // bitwise roundtrip of parameter payloads
    ParamStore fresh;
    Rng rng2(99);
    fresh.create("enc.w", {3, 4}, rng2, 0.5);
    fresh.create("enc.b", {4}, rng2, 0.1);
    nn::apply_checkpoint(fresh, ck);
    CHECK(fresh.at("enc.w").values() == store.at("enc.w").values());
    CHECK(fresh.at("enc.b").values() == store.at("enc.b").values());

    // shape mismatch rejected
    ParamStore bad;
    Rng rng3(1);
    bad.create("enc.w", {4, 3}, rng3, 0.5);
    bad.create("enc.b", {4}, rng3, 0.1);
    CHECK_THROWS_AS(nn::apply_checkpoint(bad, ck), ShapeMismatch);

    // name mismatch rejected
    ParamStore bad2;
    Rng rng4(1);
    bad2.create("enc.w2", {3, 4}, rng4, 0.5);
    bad2.create("enc.b", {4}, rng4, 0.1);
    CHECK_THROWS_AS(nn::apply_checkpoint(bad2, ck), ShapeMismatch);
    std::remove(path.c_str());
}

TEST_CASE("conv1d stride preserves same-padding contract") {
    ParamStore store;
    Rng rng(12);
    auto c1 = nn::Conv1d::create(store, "c1", 4, 6, 3, 1, rng);
    auto c2 = nn::Conv1d::create(store, "c2", 6, 6, 4, 2, rng);
    Rng xr(13);
    std::vector<double> xv(16 * 4);
    for (double& v : xv) v = xr.normal();
    auto x = Tensor::from_values({16, 4}, xv);
    auto h = c1.forward(x);
    CHECK(h.shape() == nn::Shape{16, 6});
    auto y = c2.forward(h);
    CHECK(y.shape() == nn::Shape{8, 6});
    // two stride-2 convs: total stride 4
    auto z = c2.forward(nn::conv1d(y, store.at("c2.w"), store.at("c2.b"), 2));
    CHECK(z.shape() == nn::Shape{2, 6});
}

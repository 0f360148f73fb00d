#include <cmath>

#include "doctest.h"
#include "magnet/nn/tensor_geom.hpp"
#include "magnet/vqvae.hpp"

using namespace magnet;
using nn::Tensor;
using vq::VqvaeConfig;
using vq::VqvaeModel;

namespace {

data::MotionSequence orbit_seq(int seed, int T = 64, int P = 2) {
    data::GeneratorParams gp;
    gp.mode = data::InteractionMode::kOrbit;
    gp.P = P;
    gp.T = T;
    gp.seed = seed;
    return data::preprocess(data::generate_interaction(gp));
}

VqvaeConfig tiny_config() {
    VqvaeConfig cfg;
    cfg.d_vq = 8;
    cfg.K = 8;
    cfg.omega = 4;
    return cfg;
}

}  // namespace

TEST_CASE("batched rot6d decode matches the geometry module") {
    Rng rng(41);
    std::vector<double> rows;
    std::vector<geom::Mat3> expect;
    for (int i = 0; i < 20; ++i) {
        geom::Rotation6D r;
        for (double& v : r.v) v = rng.normal();
        // keep decodable
        const geom::Vec3 a1(r.v[0], r.v[1], r.v[2]);
        if (a1.norm() < 0.2) r.v[0] += 1.0;
        rows.insert(rows.end(), r.v.begin(), r.v.end());
        expect.push_back(geom::rot6d_to_matrix(
            geom::Rotation6D{{rows[i * 6], rows[i * 6 + 1], rows[i * 6 + 2],
                              rows[i * 6 + 3], rows[i * 6 + 4], rows[i * 6 + 5]}}));
    }
    const auto R = nn::rot6d_to_matrix_rows(Tensor::from_values({20, 6}, rows));
    for (int i = 0; i < 20; ++i) {
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                CHECK(R.values()[i * 9 + a * 3 + b] ==
                      doctest::Approx(expect[i](a, b)).epsilon(1e-10));
            }
        }
    }

    // geodesic: 90 degree yaw -> pi/2, exact rotations -> ~0
    const geom::Mat3 yaw = geom::yaw_rotation(3.14159265358979323846 / 2.0);
    std::vector<double> a_rows(9), b_rows(9, 0.0);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) a_rows[i * 3 + j] = yaw(i, j);
        b_rows[i * 3 + i] = 1.0;
    }
    const auto d = nn::geodesic_rows(Tensor::from_values({1, 9}, b_rows),
                                     Tensor::from_values({1, 9}, a_rows));
    CHECK(d.values()[0] == doctest::Approx(3.14159265358979323846 / 2.0).epsilon(1e-12));
    const auto z = nn::geodesic_rows(Tensor::from_values({1, 9}, a_rows),
                                     Tensor::from_values({1, 9}, a_rows));
    CHECK(z.values()[0] < 1e-9);
}

TEST_CASE("tensor_geom gradcheck: GS, matmul3, geodesic chains") {
    Rng rng(42);
    // well-conditioned 6D inputs (near-orthonormal columns): finite
    // differences on an ill-conditioned Gram-Schmidt are dominated by
    // truncation error rather than gradient bugs
    std::vector<double> v6(4 * 6), v9(4 * 9), v3(4 * 3);
    const double base[6] = {1, 0, 0, 0, 1, 0};
    for (size_t i = 0; i < v6.size(); ++i) v6[i] = base[i % 6] + 0.3 * rng.normal();
    for (double& x : v3) x = rng.normal();
    for (int i = 0; i < 4; ++i) {
        const geom::Mat3 R = geom::yaw_rotation(rng.uniform(-3, 3));
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) v9[i * 9 + a * 3 + b] = R(a, b);
        }
    }
    auto x6 = Tensor::param_values({4, 6}, v6);
    auto t9 = Tensor::from_values({4, 9}, v9);
    auto x3 = Tensor::param_values({4, 3}, v3);

    CHECK(nn::grad_check(
              [&] {
                  auto R = nn::rot6d_to_matrix_rows(x6);
                  auto E = nn::mat3_mul_rows(nn::mat3_transpose_rows(R), t9);
                  auto v = nn::mat3_apply_rows(E, x3);
                  return nn::sum_all(nn::mul(v, v));
              },
              {x6, x3}) < 1e-4);

    CHECK(nn::grad_check(
              [&] {
                  auto R = nn::rot6d_to_matrix_rows(x6);
                  return nn::sum_all(nn::geodesic_rows(R, t9));
              },
              {x6}) < 1e-4);
}

TEST_CASE("encode produces T/omega embeddings (with padding rule)") {
    VqvaeModel model(tiny_config(), 1);
    const auto seq = orbit_seq(1);
    const auto feats = vq::stream_features(seq, 0);

    auto enc = model.encode_quantize(feats);
    CHECK(enc.T_prime == 16);  // T=64, omega=4
    CHECK(enc.pad == 0);

    // T = 4 -> 1 embedding
    vq::StreamFeatures shorty;
    shorty.T = 4;
    shorty.x.assign(feats.x.begin(), feats.x.begin() + 4 * 63);
    shorty.c.assign(feats.c.begin(), feats.c.begin() + 4 * 19);
    CHECK(model.encode_quantize(shorty).T_prime == 1);

    // T = 62 -> padded to 64, pad recorded
    vq::StreamFeatures trimmed;
    trimmed.T = 62;
    trimmed.x.assign(feats.x.begin(), feats.x.begin() + 62 * 63);
    trimmed.c.assign(feats.c.begin(), feats.c.begin() + 62 * 19);
    const auto enc62 = model.encode_quantize(trimmed);
    CHECK(enc62.pad == 2);
    CHECK(enc62.T_prime == 16);
    // reconstruction trims back to 62 frames
    CHECK(model.reconstruct(enc62, trimmed).size() == 62u * 63u);
}

TEST_CASE("quantize: nearest entry, tie to lowest index, brute-force match") {
    VqvaeConfig cfg = tiny_config();
    cfg.d_vq = 2;
    cfg.K = 8;
    VqvaeModel model(cfg, 3);
    auto& cb = model.params().at("codebook").raw_values();
    std::fill(cb.begin(), cb.end(), 5.0);
    cb[0] = 0.0; cb[1] = 0.0;  // entry 0 = (0,0)
    cb[2] = 1.0; cb[3] = 1.0;  // entry 1 = (1,1)
    CHECK(model.quantize({0.2, 0.1}) == std::vector<int>{0});
    CHECK(model.quantize({1.0, 1.0}) == std::vector<int>{1});

    // equidistant between entries 3 and 7 -> 3
    cb.assign(cb.size(), 9.0);
    cb[3 * 2] = 1.0; cb[3 * 2 + 1] = 0.0;
    cb[7 * 2] = -1.0; cb[7 * 2 + 1] = 0.0;
    CHECK(model.quantize({0.0, 0.0}) == std::vector<int>{3});

    // random rows match an independent scan
    Rng rng(5);
    for (double& v : cb) v = rng.normal();
    std::vector<double> h(10 * 2);
    for (double& v : h) v = rng.normal();
    const auto idx = model.quantize(h);
    for (int i = 0; i < 10; ++i) {
        double best = 1e300;
        int bi = -1;
        for (int k = 0; k < cfg.K; ++k) {
            double dist = 0;
            for (int c = 0; c < 2; ++c) {
                const double diff = h[i * 2 + c] - cb[k * 2 + c];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                bi = k;
            }
        }
        CHECK(idx[i] == bi);
    }
}

TEST_CASE("decoder responds to its conditioning") {
    VqvaeModel model(tiny_config(), 7);
    const auto seq = orbit_seq(2);
    auto feats = vq::stream_features(seq, 0);
    const auto enc = model.encode_quantize(feats);
    const auto rec1 = model.reconstruct(enc, feats);

    auto feats2 = feats;
    for (int t = 0; t < feats2.T; ++t) feats2.c[t * 19] += 0.5;  // beta[0]
    const auto rec2 = model.reconstruct(enc, feats2);
    double delta = 0;
    for (size_t i = 0; i < rec1.size(); ++i) delta += std::abs(rec1[i] - rec2[i]);
    CHECK(delta > 1e-6);
}

TEST_CASE("full vqvae loss gradient check on a 2-frame batch") {
    VqvaeConfig cfg;
    cfg.d_vq = 6;
    cfg.K = 4;
    cfg.omega = 2;
    VqvaeModel model(cfg, 11);
    const auto seq = orbit_seq(3);
    const auto base = vq::stream_features(seq, 0);
    vq::StreamFeatures f;
    f.T = 2;
    f.x.assign(base.x.begin(), base.x.begin() + 2 * 63);
    f.c.assign(base.c.begin(), base.c.begin() + 2 * 19);

    VqvaeModel::FrozenQuant frozen;
    const double err = nn::grad_check(
        [&] { return model.loss_graph({f}, nullptr, -1, &frozen); },
        model.params().trainable_tensors(), 1e-5, 5, 77);
    CHECK(err < 1e-4);
}

TEST_CASE("vqvae loss components: perfect prediction terms vanish") {
    // geodesic + huber construction mirroring the loss definition
    Rng rng(13);
    const geom::Mat3 R = geom::yaw_rotation(0.8);
    std::vector<double> rows(9);
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) rows[a * 3 + b] = R(a, b);
    }
    auto A = Tensor::from_values({1, 9}, rows);
    CHECK(nn::geodesic_rows(A, A).values()[0] < 1e-9);

    // single 90-degree joint error contributes pi/2 with lambda_j = 1
    const geom::Mat3 yaw = geom::yaw_rotation(3.14159265358979323846 / 2.0) * R;
    std::vector<double> rows2(9);
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) rows2[a * 3 + b] = yaw(a, b);
    }
    CHECK(nn::geodesic_rows(A, Tensor::from_values({1, 9}, rows2)).values()[0] ==
          doctest::Approx(3.14159265358979323846 / 2.0).epsilon(1e-9));

    // translation residual 0.5 with delta = 1 -> 0.125
    auto p = Tensor::from_values({1, 1}, {0.5});
    auto q = Tensor::from_values({1, 1}, {0.0});
    CHECK(nn::huber(p, q, 1.0).values()[0] == doctest::Approx(0.125));
}

TEST_CASE("vqvae training: loss decreases and is seed-deterministic") {
    VqvaeConfig cfg;
    cfg.d_vq = 12;
    cfg.K = 12;
    cfg.omega = 4;
    std::vector<data::MotionSequence> train = {orbit_seq(100)};

    vq::VqvaeTrainConfig tcfg;
    tcfg.steps = 120;
    tcfg.batch_streams = 2;
    tcfg.base_lr = 1e-3;
    tcfg.seed = 9;
    tcfg.val_every = 60;

    VqvaeModel m1(cfg, 21);
    const auto r1 = train_vqvae(m1, train, train, tcfg);
    CHECK(r1.final_loss < r1.initial_loss);
    CHECK(r1.steps_run == 120);

    VqvaeModel m2(cfg, 21);
    const auto r2 = train_vqvae(m2, train, train, tcfg);
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].total == r2.log[i].total);  // bitwise
    }
}

TEST_CASE("vqvae checkpoint roundtrip preserves encode/decode bitwise") {
    VqvaeModel model(tiny_config(), 15);
    const auto seq = orbit_seq(4);
    const auto feats = vq::stream_features(seq, 1);
    const auto enc = model.encode_quantize(feats);
    const auto rec = model.reconstruct(enc, feats);

    const std::string path = "/tmp/magnet_test_vqvae.ckpt";
    vq::save_vqvae(model, path);
    auto loaded = vq::load_vqvae(path);
    CHECK(loaded.config().d_vq == model.config().d_vq);
    const auto enc2 = loaded.encode_quantize(feats);
    CHECK(enc2.indices == enc.indices);
    const auto rec2 = loaded.reconstruct(enc2, feats);
    CHECK(rec2 == rec);
    std::remove(path.c_str());
}

#include <cmath>

#include "doctest.h"
#include "magnet/dfot.hpp"

using namespace magnet;
using dfot::DfotConfig;
using dfot::DfotModel;
using dfot::TokenSequence;
using nn::Tensor;

namespace {

data::MotionSequence orbit_seq(int seed, int T = 64, int P = 2) {
    data::GeneratorParams gp;
    gp.mode = data::InteractionMode::kOrbit;
    gp.P = P;
    gp.T = T;
    gp.seed = seed;
    return data::preprocess(data::generate_interaction(gp));
}

vq::VqvaeModel tiny_vqvae(int d_vq = 8, int K = 8) {
    vq::VqvaeConfig cfg;
    cfg.d_vq = d_vq;
    cfg.K = K;
    cfg.omega = 4;
    return vq::VqvaeModel(cfg, 71);
}

DfotConfig tiny_dfot(int d_vq = 8, int P_max = 4) {
    DfotConfig cfg;
    cfg.d = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.d_emb = 8;
    cfg.P_max = P_max;
    cfg.omega = 4;
    cfg.d_vq = d_vq;
    return cfg;
}

}  // namespace

TEST_CASE("token width arithmetic matches the desk example") {
    DfotConfig cfg;
    cfg.d_vq = 32;
    cfg.P_max = 4;
    cfg.omega = 4;
    CHECK(cfg.token_width() == 179);  // 32 + 3*36 + 36 + 3

    // raw-feature ablation widens the z block to omega * (J*6+9)
    DfotConfig raw = cfg;
    raw.use_vqvae = false;
    CHECK(raw.z_width() == 4 * 63);
    CHECK(raw.token_width() == 252 + 3 * 36 + 36 + 3);
}

TEST_CASE("assemble_tokens: interleaving, dyadic slots under P_max=4") {
    auto vqvae = tiny_vqvae();
    auto cfg = tiny_dfot();
    const auto seq = orbit_seq(1);
    const auto toks = dfot::assemble_tokens(seq, &vqvae, cfg);

    CHECK(toks.P == 2);
    CHECK(toks.T_prime == 16);
    CHECK(toks.n_tokens() == 32);
    // interleaved: token (i, k) at row i*P + k; agents at same time share time_index
    for (int i = 0; i < 16; ++i) {
        CHECK(toks.time_index[toks.token_at(i, 0)] == i);
        CHECK(toks.time_index[toks.token_at(i, 1)] == i);
        CHECK(toks.agent_index[toks.token_at(i, 0)] == 0);
        CHECK(toks.agent_index[toks.token_at(i, 1)] == 1);
    }
    // dyadic under P_max=4: slots for agents 2,3 all-zero with presence 0
    for (int tok = 0; tok < toks.n_tokens(); ++tok) {
        const double* row = toks.row(tok);
        CHECK(row[cfg.presence_off() + 0] == 1.0);
        CHECK(row[cfg.presence_off() + 1] == 0.0);
        CHECK(row[cfg.presence_off() + 2] == 0.0);
        for (int c = 0; c < cfg.omega * 9; ++c) {
            CHECK(row[cfg.partner_off() + cfg.omega * 9 + c] == 0.0);
            CHECK(row[cfg.partner_off() + 2 * cfg.omega * 9 + c] == 0.0);
        }
    }
}

TEST_CASE("alpha_bar boundary values and monotonicity") {
    CHECK(dfot::alpha_bar(1.0) == 0.0);
    CHECK(dfot::alpha_bar(0.0) == doctest::Approx(0.9998446).epsilon(1e-6));
    double prev = 2.0;
    for (int i = 0; i <= 1000; ++i) {
        const double tau = i / 1000.0;
        const double a = dfot::alpha_bar(tau);
        CHECK(a < prev);  // strictly decreasing
        CHECK(std::abs(a + (1.0 - a) - 1.0) < 1e-12);
        prev = a;
    }
    CHECK_THROWS_AS(dfot::alpha_bar(-0.01), OutOfRange);
    CHECK_THROWS_AS(dfot::alpha_bar(1.01), OutOfRange);
}

TEST_CASE("perturb: boundary noise levels and clamping") {
    auto vqvae = tiny_vqvae();
    auto cfg = tiny_dfot();
    const auto seq = orbit_seq(2);
    const auto toks = dfot::assemble_tokens(seq, &vqvae, cfg);
    Rng rng(3);
    auto a = dfot::sample_assignment(toks.n_tokens(), toks.width, rng);

    // tau = 1 everywhere: output equals epsilon exactly
    std::fill(a.tau.begin(), a.tau.end(), 1.0);
    auto noisy = dfot::perturb(toks, a);
    CHECK(noisy == a.epsilon);

    // epsilon = 0: output = sqrt(alpha_bar) * m
    auto a0 = a;
    std::fill(a0.tau.begin(), a0.tau.end(), 0.25);
    std::fill(a0.epsilon.begin(), a0.epsilon.end(), 0.0);
    auto scaled = dfot::perturb(toks, a0);
    const double sa = std::sqrt(dfot::alpha_bar(0.25));
    for (size_t i = 0; i < scaled.size(); ++i) {
        CHECK(scaled[i] == doctest::Approx(sa * toks.values[i]).epsilon(1e-12));
    }

    // clamped tokens are copied bit-for-bit regardless of tau
    std::vector<std::uint8_t> clamp(toks.n_tokens(), 0);
    clamp[5] = 1;
    auto mixed = dfot::perturb(toks, a, &clamp);
    for (int c = 0; c < toks.width; ++c) {
        CHECK(mixed[5 * toks.width + c] == toks.values[5 * toks.width + c]);
    }
}

TEST_CASE("forward: shape, determinism, identity and noise-channel effects") {
    auto vqvae = tiny_vqvae();
    auto cfg = tiny_dfot();
    DfotModel model(cfg, 5);
    const auto seq = orbit_seq(3);
    const auto stats = dfot::compute_token_stats({seq}, &vqvae, cfg);
    const auto toks = dfot::assemble_tokens(seq, &vqvae, cfg, &stats);
    Rng rng(7);
    auto a = dfot::sample_assignment(toks.n_tokens(), toks.width, rng);
    const auto noisy = dfot::perturb(toks, a);

    Tensor out1 = model.forward(noisy, a.tau, toks.time_index, toks.agent_index, toks.valid);
    CHECK(out1.shape() == nn::Shape{toks.n_tokens(), toks.width});
    Tensor out2 = model.forward(noisy, a.tau, toks.time_index, toks.agent_index, toks.valid);
    CHECK(out1.values() == out2.values());  // bitwise deterministic

    // identical token content under a different agent id embeds differently
    std::vector<double> one_row(noisy.begin(), noisy.begin() + toks.width);
    Tensor e0 = model.forward(one_row, {a.tau[0]}, {0}, {0}, {1});
    Tensor e1 = model.forward(one_row, {a.tau[0]}, {0}, {1}, {1});
    double diff = 0;
    for (size_t i = 0; i < e0.numel(); ++i) diff += std::abs(e0.values()[i] - e1.values()[i]);
    CHECK(diff > 1e-9);

    // different noise levels on identical content embed differently
    Tensor n0 = model.forward(one_row, {0.2}, {0}, {0}, {1});
    Tensor n1 = model.forward(one_row, {0.8}, {0}, {0}, {1});
    diff = 0;
    for (size_t i = 0; i < n0.numel(); ++i) diff += std::abs(n0.values()[i] - n1.values()[i]);
    CHECK(diff > 1e-9);
}

TEST_CASE("masked agents do not influence valid outputs") {
    auto vqvae = tiny_vqvae();
    auto cfg = tiny_dfot();
    DfotModel model(cfg, 11);

    data::GeneratorParams gp;
    gp.mode = data::InteractionMode::kRing;
    gp.P = 4;
    gp.T = 64;
    gp.seed = 5;
    const auto full = data::preprocess(data::generate_interaction(gp));
    const auto dyad = data::mask_agents(full, {0, 1});
    const auto stats = dfot::compute_token_stats({dyad}, &vqvae, cfg);

    const auto lean = dfot::assemble_tokens(dyad, &vqvae, cfg, &stats, false);
    const auto ghosts = dfot::assemble_tokens(dyad, &vqvae, cfg, &stats, true);
    CHECK(lean.P == 2);
    CHECK(ghosts.P == 4);

    Rng rng(13);
    auto ga = dfot::sample_assignment(ghosts.n_tokens(), ghosts.width, rng);
    // copy the ghost assignment onto the lean layout
    dfot::NoiseAssignment la;
    la.tau.resize(lean.n_tokens());
    la.epsilon.resize(lean.values.size());
    for (int i = 0; i < lean.T_prime; ++i) {
        for (int k = 0; k < 2; ++k) {
            const int lt = lean.token_at(i, k);
            const int gt = ghosts.token_at(i, k);  // ghosts keep agents 0,1 first
            la.tau[lt] = ga.tau[gt];
            std::copy(ga.epsilon.begin() + static_cast<size_t>(gt) * ghosts.width,
                      ga.epsilon.begin() + static_cast<size_t>(gt + 1) * ghosts.width,
                      la.epsilon.begin() + static_cast<size_t>(lt) * lean.width);
        }
    }
    const auto lnoisy = dfot::perturb(lean, la);
    const auto gnoisy = dfot::perturb(ghosts, ga);

    Tensor lout = model.forward(lnoisy, la.tau, lean.time_index, lean.agent_index, lean.valid);
    Tensor gout = model.forward(gnoisy, ga.tau, ghosts.time_index, ghosts.agent_index,
                                ghosts.valid);
    for (int i = 0; i < lean.T_prime; ++i) {
        for (int k = 0; k < 2; ++k) {
            const int lt = lean.token_at(i, k);
            const int gt = ghosts.token_at(i, k);
            for (int c = 0; c < lean.width; ++c) {
                CHECK(lout.values()[static_cast<size_t>(lt) * lean.width + c] ==
                      doctest::Approx(gout.values()[static_cast<size_t>(gt) * ghosts.width + c])
                          .epsilon(1e-9));
            }
        }
    }

    // loss identical between the two layouts
    dfot::DfotLossParts lp, gp2;
    model.loss_graph(lout, lean, &lp);
    model.loss_graph(gout, ghosts, &gp2);
    CHECK(lp.total == doctest::Approx(gp2.total).epsilon(1e-6));
}

TEST_CASE("loss: ground truth gives zero components; decomposition is exact") {
    auto vqvae = tiny_vqvae();
    auto cfg = tiny_dfot();
    DfotModel model(cfg, 17);
    const auto seq = orbit_seq(6);
    const auto stats = dfot::compute_token_stats({seq}, &vqvae, cfg);
    model.set_norm_stats(stats);
    const auto toks = dfot::assemble_tokens(seq, &vqvae, cfg, &stats);

    Tensor perfect = Tensor::from_values({toks.n_tokens(), toks.width}, toks.values);
    dfot::DfotLossParts parts;
    model.loss_graph(perfect, toks, &parts);
    CHECK(parts.z == 0.0);
    CHECK(parts.partner == 0.0);
    CHECK(parts.delta == 0.0);
    CHECK(parts.consistency < 1e-9);
    CHECK(parts.total < 1e-9);

    // perturb only the z block -> only the z component reacts
    auto zpert = toks.values;
    for (int tok = 0; tok < toks.n_tokens(); ++tok) {
        for (int c = 0; c < cfg.z_width(); ++c) {
            zpert[static_cast<size_t>(tok) * toks.width + cfg.z_off() + c] += 0.3;
        }
    }
    dfot::DfotLossParts zp;
    model.loss_graph(Tensor::from_values({toks.n_tokens(), toks.width}, zpert), toks, &zp);
    CHECK(zp.z > 0.0);
    CHECK(zp.partner == 0.0);
    CHECK(zp.delta == 0.0);
    CHECK(zp.consistency < 1e-9);

    // random prediction: components sum to total exactly
    Rng rng(19);
    std::vector<double> rnd(toks.values.size());
    for (auto& v : rnd) v = rng.normal();
    dfot::DfotLossParts rp;
    model.loss_graph(Tensor::from_values({toks.n_tokens(), toks.width}, rnd), toks, &rp);
    CHECK(rp.total ==
          doctest::Approx(rp.z + rp.partner + rp.delta + rp.consistency).epsilon(1e-12));
    CHECK(rp.total > 0.0);
}

TEST_CASE("L_c vanishes on propagate-constructed predictions") {
    auto vqvae = tiny_vqvae();
    auto cfg = tiny_dfot(8, 2);  // P_max = 2 keeps indexing simple
    DfotModel model(cfg, 23);
    const auto seq = orbit_seq(7);
    const auto stats = dfot::compute_token_stats({seq}, &vqvae, cfg);
    model.set_norm_stats(stats);
    const auto toks = dfot::assemble_tokens(seq, &vqvae, cfg, &stats);
    const int T = toks.T_prime * cfg.omega;

    // invent per-frame deltas differing from ground truth, then build the
    // partner stream by propagation; the consistency term must accept it
    Rng rng(29);
    std::vector<geom::RigidTransform> dA(T), dB(T), Tab(T);
    for (int t = 0; t < T; ++t) {
        dA[t] = {geom::yaw_rotation(0.02 * t + 0.1 * rng.uniform()),
                 geom::Vec3(0.01 * rng.normal(), 0, 0.01 * rng.normal())};
        dB[t] = {geom::yaw_rotation(-0.015 * t), geom::Vec3(0.005, 0, -0.004)};
    }
    Tab[0] = {geom::yaw_rotation(0.4), geom::Vec3(1.2, 0, -0.3)};
    for (int t = 1; t < T; ++t) {
        Tab[t] = geom::propagate_partner_transform(Tab[t - 1], dA[t], dB[t]);
    }
    std::vector<geom::RigidTransform> Tba(T);
    for (int t = 0; t < T; ++t) Tba[t] = geom::invert(Tab[t]);

    auto pred = toks.values;
    auto put9 = [&](int tok, int off, const geom::RigidTransform& Tr) {
        const auto enc = geom::encode_transform_9d(Tr);
        double* row = pred.data() + static_cast<size_t>(tok) * toks.width;
        for (int c = 0; c < 9; ++c) {
            row[off + c] = (enc[c] - stats.mean[off + c]) / stats.stdev[off + c];
        }
    };
    for (int i = 0; i < toks.T_prime; ++i) {
        for (int f = 0; f < cfg.omega; ++f) {
            const int t = i * cfg.omega + f;
            put9(toks.token_at(i, 0), cfg.delta_off() + f * 9, dA[t]);
            put9(toks.token_at(i, 1), cfg.delta_off() + f * 9, dB[t]);
            put9(toks.token_at(i, 0), cfg.partner_off() + f * 9, Tab[t]);
            put9(toks.token_at(i, 1), cfg.partner_off() + f * 9, Tba[t]);
        }
    }
    dfot::DfotLossParts parts;
    model.loss_graph(Tensor::from_values({toks.n_tokens(), toks.width}, pred), toks, &parts);
    CHECK(parts.consistency < 1e-9);
}

TEST_CASE("full dfot loss gradient check on a 2-token batch") {
    auto vqvae = tiny_vqvae();
    auto cfg = tiny_dfot(8, 2);
    DfotModel model(cfg, 31);

    // 4-frame dyadic clip -> one token step, two tokens
    auto seq = orbit_seq(8);
    data::MotionSequence small;
    small.fps = 30;
    small.P = 2;
    small.T = 4;
    small.presence = seq.presence;
    small.beta = seq.beta;
    small.theta.assign(seq.theta.begin(), seq.theta.begin() + 4 * 2 * 9);
    small.root_world.assign(seq.root_world.begin(), seq.root_world.begin() + 4 * 2);
    const auto pre = data::preprocess(small);
    const auto stats = dfot::compute_token_stats({pre}, &vqvae, cfg);
    model.set_norm_stats(stats);
    const auto toks = dfot::assemble_tokens(pre, &vqvae, cfg, &stats);
    CHECK(toks.n_tokens() == 2);

    Rng rng(37);
    auto a = dfot::sample_assignment(toks.n_tokens(), toks.width, rng);
    const auto noisy = dfot::perturb(toks, a);

    const double err = nn::grad_check(
        [&] {
            Tensor pred = model.forward(noisy, a.tau, toks.time_index,
                                        toks.agent_index, toks.valid);
            return model.loss_graph(pred, toks, nullptr);
        },
        model.params().trainable_tensors(), 1e-5, 4, 41);
    CHECK(err < 1e-4);
}

TEST_CASE("dfot training: loss decreases and is bitwise deterministic") {
    auto vqvae = tiny_vqvae();
    auto cfg = tiny_dfot();
    std::vector<data::MotionSequence> train = {orbit_seq(100)};

    dfot::DfotTrainConfig tcfg;
    tcfg.steps = 60;
    tcfg.batch_examples = 1;
    tcfg.base_lr = 1e-3;
    tcfg.seed = 77;
    tcfg.val_every = 30;

    DfotModel m1(cfg, 51);
    const auto r1 = train_dfot(m1, &vqvae, train, train, tcfg);
    CHECK(r1.final_loss < r1.initial_loss);

    DfotModel m2(cfg, 51);
    const auto r2 = train_dfot(m2, &vqvae, train, train, tcfg);
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].total == r2.log[i].total);
    }
}

TEST_CASE("dfot checkpoint roundtrip keeps forward bitwise and stats") {
    auto vqvae = tiny_vqvae();
    auto cfg = tiny_dfot();
    DfotModel model(cfg, 61);
    const auto seq = orbit_seq(9);
    const auto stats = dfot::compute_token_stats({seq}, &vqvae, cfg);
    model.set_norm_stats(stats);
    const auto toks = dfot::assemble_tokens(seq, &vqvae, cfg, &stats);
    Rng rng(63);
    auto a = dfot::sample_assignment(toks.n_tokens(), toks.width, rng);
    const auto noisy = dfot::perturb(toks, a);
    Tensor out = model.forward(noisy, a.tau, toks.time_index, toks.agent_index, toks.valid);

    const std::string path = "/tmp/magnet_test_dfot.ckpt";
    dfot::save_dfot(model, path);
    auto loaded = dfot::load_dfot(path);
    CHECK(loaded.config().d == cfg.d);
    CHECK(loaded.norm_stats().mean == stats.mean);
    Tensor out2 = loaded.forward(noisy, a.tau, toks.time_index, toks.agent_index, toks.valid);
    CHECK(out2.values() == out.values());
    std::remove(path.c_str());
}

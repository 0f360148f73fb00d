#include <cmath>

#include "doctest.h"
#include "magnet/sampler.hpp"

using namespace magnet;
using dfot::DfotConfig;
using dfot::DfotModel;
using dfot::TokenSequence;
using sampler::GuidanceSpec;
using sampler::PlanParams;
using sampler::SamplingPlan;
using sampler::Strategy;

namespace {

struct Fixture {
    vq::VqvaeModel vqvae;
    DfotConfig cfg;
    DfotModel model;
    data::MotionSequence seq;
    data::NormStats stats;
    TokenSequence toks;

    Fixture()
        : vqvae(
              [] {
                  vq::VqvaeConfig c;
                  c.d_vq = 8;
                  c.K = 8;
                  c.omega = 4;
                  return c;
              }(),
              71),
          cfg([] {
              DfotConfig c;
              c.d = 16;
              c.layers = 1;
              c.heads = 2;
              c.d_emb = 8;
              c.P_max = 4;
              c.omega = 4;
              c.d_vq = 8;
              return c;
          }()),
          model(cfg, 5) {
        data::GeneratorParams gp;
        gp.mode = data::InteractionMode::kOrbit;
        gp.P = 2;
        gp.T = 64;
        gp.seed = 33;
        seq = data::preprocess(data::generate_interaction(gp));
        stats = dfot::compute_token_stats({seq}, &vqvae, cfg);
        model.set_norm_stats(stats);
        toks = dfot::assemble_tokens(seq, &vqvae, cfg, &stats);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

}  // namespace

TEST_CASE("plans: inpaint layout and uniform grid") {
    PlanParams pp;
    pp.target_agent = 0;
    const auto plan = sampler::make_plan(Strategy::kInpaint, 2, 16, pp);
    CHECK(plan.n_iters == 30);
    int clamped = 0;
    for (int i = 0; i < 16; ++i) {
        CHECK(plan.clamped[plan.tok(i, 1)] == 1);
        clamped += plan.clamped[plan.tok(i, 1)];
        const auto& traj = plan.schedule[plan.tok(i, 0)];
        CHECK(traj[0] == 1.0);
        CHECK(traj[30] == 0.0);
        for (int k = 0; k < 30; ++k) {
            CHECK(traj[k] - traj[k + 1] == doctest::Approx(1.0 / 30).epsilon(1e-12));
        }
    }
    CHECK(clamped == 16);
}

TEST_CASE("plans: every strategy satisfies monotonicity and terminal zero") {
    std::vector<SamplingPlan> plans;
    PlanParams pp;
    pp.target_agent = 1;
    plans.push_back(sampler::make_plan(Strategy::kInpaint, 3, 8, pp));
    pp.history_len = 3;
    plans.push_back(sampler::make_plan(Strategy::kPredict, 2, 8, pp));
    plans.push_back(sampler::make_plan(Strategy::kJoint, 3, 8, pp));
    plans.push_back(sampler::make_plan(Strategy::kAgenticSync, 2, 8, pp));
    for (double f : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        pp.tt_offset = f;
        plans.push_back(sampler::make_plan(Strategy::kAgenticAsync, 2, 8, pp));
        plans.push_back(sampler::make_plan(Strategy::kAgenticAsync, 4, 8, pp));
    }
    pp.keyframes = {0, 3, 7};
    plans.push_back(sampler::make_plan(Strategy::kInbetween, 2, 8, pp));
    pp.history_len = 2;
    plans.push_back(sampler::make_plan(Strategy::kControl, 2, 8, pp));
    for (const auto& plan : plans) {
        CHECK_NOTHROW(plan.validate());  // monotone + terminal zero + clamps
        CHECK(!plan.to_text().empty());
    }
}

TEST_CASE("plans: turn-taking offsets bracket and degenerate to sync") {
    PlanParams pp;
    pp.history_len = 2;
    const auto sync = sampler::make_plan(Strategy::kAgenticSync, 2, 6, pp);
    pp.tt_offset = 0.0;
    const auto tt0 = sampler::make_plan(Strategy::kAgenticAsync, 2, 6, pp);
    REQUIRE(tt0.n_iters == sync.n_iters);
    for (int t = 0; t < 12; ++t) {
        CHECK(tt0.schedule[t] == sync.schedule[t]);  // elementwise equal
    }

    auto start_of = [](const SamplingPlan& plan, int i, int a) {
        const auto& traj = plan.schedule[plan.tok(i, a)];
        for (size_t k = 0; k < traj.size(); ++k) {
            if (traj[k] < 1.0) return static_cast<int>(k) - 1;
        }
        return plan.n_iters;
    };

    pp.tt_offset = 1.0;
    const auto tt1 = sampler::make_plan(Strategy::kAgenticAsync, 2, 6, pp);
    pp.tt_offset = 0.5;
    const auto tth = sampler::make_plan(Strategy::kAgenticAsync, 2, 6, pp);
    for (int i = 2; i < 6; ++i) {
        // agent 1 starts only after agent 0 reached zero under f = 1
        const int a0_start = start_of(tt1, i, 0);
        const int a1_start = start_of(tt1, i, 1);
        CHECK(a1_start == a0_start + 30);
        CHECK(tt1.schedule[tt1.tok(i, 0)][a1_start] == 0.0);
        // f = 0.5 start indices sit between f = 0 and f = 1 per token
        const int mid = start_of(tth, i, 1);
        const int lo = start_of(tt0, i, 1);
        const int hi = a1_start;
        // normalize to block-relative offsets
        CHECK(mid - start_of(tth, i, 0) >= lo - start_of(tt0, i, 0));
        CHECK(mid - start_of(tth, i, 0) <= hi - a0_start);
    }
}

TEST_CASE("ddim_step: terminal exactness and trajectory identity") {
    Rng rng(3);
    const int D = 8;
    std::vector<double> m0(D), eps(D);
    for (int i = 0; i < D; ++i) {
        m0[i] = rng.normal();
        eps[i] = rng.normal();
    }
    const double tau_c = 0.7, tau_n = 0.4;
    const double ac = dfot::alpha_bar(tau_c);
    std::vector<double> cur(D);
    for (int i = 0; i < D; ++i) {
        cur[i] = std::sqrt(ac) * m0[i] + std::sqrt(1 - ac) * eps[i];
    }
    auto moved = cur;
    sampler::ddim_step(moved, m0.data(), D, tau_c, tau_n);
    const double an = dfot::alpha_bar(tau_n);
    for (int i = 0; i < D; ++i) {
        const double expect = std::sqrt(an) * m0[i] + std::sqrt(1 - an) * eps[i];
        CHECK(moved[i] == doctest::Approx(expect).epsilon(1e-12));
    }

    // terminal step returns the prediction bit-for-bit
    auto last = cur;
    sampler::ddim_step(last, m0.data(), D, tau_c, 0.0);
    CHECK(last == m0);

    auto bad = cur;
    CHECK_THROWS_AS(sampler::ddim_step(bad, m0.data(), D, 0.5, 0.5), DegenerateLevel);
    CHECK_THROWS_AS(sampler::ddim_step(bad, m0.data(), D, 0.0, 0.0), DegenerateLevel);
}

TEST_CASE("sample: clamp fidelity, terminal prediction, determinism") {
    auto& f = fixture();
    PlanParams pp;
    pp.target_agent = 0;
    const auto plan = sampler::make_plan(Strategy::kInpaint, 2, 16, pp);
    const auto res = sampler::sample(f.model, plan, f.toks, {}, 99);

    const int D = f.toks.width;
    for (int i = 0; i < 16; ++i) {
        const int t = plan.tok(i, 1);
        for (int c = 0; c < D; ++c) {
            CHECK(res.tokens.row(t)[c] == f.toks.row(t)[c]);  // bitwise
        }
        CHECK(res.final_tau[t] == 0.0);
        // generated tokens equal the final-iteration prediction exactly
        const int g = plan.tok(i, 0);
        CHECK(res.final_tau[g] == 0.0);
        for (int c = 0; c < D; ++c) {
            CHECK(res.tokens.row(g)[c] ==
                  res.last_pred[static_cast<size_t>(g) * D + c]);
        }
    }
    CHECK(res.forwards == 30);

    const auto res2 = sampler::sample(f.model, plan, f.toks, {}, 99);
    CHECK(res2.tokens.values == res.tokens.values);

    const auto res3 = sampler::sample(f.model, plan, f.toks, {}, 100);
    CHECK(res3.tokens.values != res.tokens.values);
}

TEST_CASE("sample: clamp fidelity holds for every strategy") {
    auto& f = fixture();
    std::vector<SamplingPlan> plans;
    PlanParams pp;
    pp.target_agent = 0;
    plans.push_back(sampler::make_plan(Strategy::kInpaint, 2, 16, pp));
    pp.history_len = 4;
    plans.push_back(sampler::make_plan(Strategy::kPredict, 2, 16, pp));
    plans.push_back(sampler::make_plan(Strategy::kJoint, 2, 16, pp));
    pp.history_len = 12;
    plans.push_back(sampler::make_plan(Strategy::kAgenticSync, 2, 16, pp));
    pp.tt_offset = 0.5;
    plans.push_back(sampler::make_plan(Strategy::kAgenticAsync, 2, 16, pp));
    pp.keyframes = {0, 5, 9, 15};
    plans.push_back(sampler::make_plan(Strategy::kInbetween, 2, 16, pp));
    pp.history_len = 13;
    plans.push_back(sampler::make_plan(Strategy::kControl, 2, 16, pp));

    for (const auto& plan : plans) {
        const auto res = sampler::sample(f.model, plan, f.toks, {}, 7);
        for (int t = 0; t < plan.P * plan.T_prime; ++t) {
            if (plan.clamp_from[t] < 0) continue;
            for (int c = 0; c < f.toks.width; ++c) {
                CHECK(res.tokens.row(t)[c] == f.toks.row(t)[c]);
            }
        }
        for (int t = 0; t < plan.P * plan.T_prime; ++t) {
            if (!plan.excluded[t]) CHECK(res.final_tau[t] == 0.0);
        }
    }
}

TEST_CASE("sample: predict excludes partner futures from the sequence") {
    auto& f = fixture();
    PlanParams pp;
    pp.target_agent = 0;
    pp.history_len = 4;
    const auto plan = sampler::make_plan(Strategy::kPredict, 2, 16, pp);
    const auto res = sampler::sample(f.model, plan, f.toks, {}, 11);
    for (int i = 4; i < 16; ++i) {
        const int t = plan.tok(i, 1);
        CHECK(res.tokens.valid[t] == 0);
        for (int c = 0; c < f.toks.width; ++c) CHECK(res.tokens.row(t)[c] == 0.0);
    }
}

TEST_CASE("sample: guidance identities") {
    auto& f = fixture();
    PlanParams pp;
    pp.target_agent = 0;
    const auto plan = sampler::make_plan(Strategy::kInpaint, 2, 16, pp);

    // w = 0 HG equals unguided, bitwise, same seed
    GuidanceSpec hg0{GuidanceSpec::Mode::kHg, 0.0};
    const auto base = sampler::sample(f.model, plan, f.toks, {}, 21);
    const auto guided = sampler::sample(f.model, plan, f.toks, hg0, 21);
    CHECK(guided.tokens.values == base.tokens.values);

    // SHG with P = 2: cond + uncond + 2 self branches per iteration
    GuidanceSpec shg{GuidanceSpec::Mode::kShg, 1.0};
    const auto s = sampler::sample(f.model, plan, f.toks, shg, 21);
    CHECK(s.forwards == 30 * 4);
    GuidanceSpec phg{GuidanceSpec::Mode::kPhg, 1.0};
    const auto p = sampler::sample(f.model, plan, f.toks, phg, 21);
    CHECK(p.forwards == 30 * 4);

    // no history anywhere: guided output equals unguided (w = 1)
    SamplingPlan free_plan;
    free_plan.strategy = Strategy::kJoint;
    free_plan.P = 2;
    free_plan.T_prime = 4;
    free_plan.steps_per_token = 10;
    free_plan.n_iters = 10;
    const int n = 8;
    free_plan.clamped.assign(n, 0);
    free_plan.clamp_from.assign(n, -1);
    free_plan.excluded.assign(n, 0);
    for (int t = 0; t < n; ++t) {
        std::vector<double> traj(11);
        for (int k = 0; k <= 10; ++k) traj[k] = 1.0 - k / 10.0;
        traj[10] = 0.0;
        free_plan.schedule.push_back(traj);
    }
    free_plan.validate();
    dfot::TokenSequence small = f.toks;
    small.T_prime = 4;
    small.values.resize(static_cast<size_t>(8) * f.toks.width);
    small.agent_index.assign(f.toks.agent_index.begin(), f.toks.agent_index.begin() + 8);
    small.time_index.assign(f.toks.time_index.begin(), f.toks.time_index.begin() + 8);
    small.valid.assign(8, 1);
    GuidanceSpec hg1{GuidanceSpec::Mode::kHg, 1.0};
    const auto u = sampler::sample(f.model, free_plan, small, {}, 5);
    const auto g = sampler::sample(f.model, free_plan, small, hg1, 5);
    CHECK(g.tokens.values == u.tokens.values);

    // missing conditioning detected
    dfot::TokenSequence broken = f.toks;
    broken.valid[plan.tok(3, 1)] = 0;
    CHECK_THROWS_AS(sampler::sample(f.model, plan, broken, {}, 1), MissingConditioning);
}

TEST_CASE("rollout: stride arithmetic and output bookkeeping") {
    auto& f = fixture();
    const auto out =
        sampler::rollout_ultralong(f.model, f.toks, 16, 4, 40, {}, 3);
    CHECK(out.T_prime == f.toks.T_prime + 40);
    CHECK(out.P == 2);
    // ceil(40 / 12) = 4 windows of 30 iterations each
    // (indirectly: every token past the seed must be finite)
    for (size_t i = 0; i < out.values.size(); ++i) {
        CHECK(std::isfinite(out.values[i]));
    }
    CHECK_THROWS_AS(sampler::rollout_ultralong(f.model, f.toks, 16, 0, 12, {}, 3),
                    InvalidWindow);
    CHECK_THROWS_AS(sampler::rollout_ultralong(f.model, f.toks, 4, 8, 12, {}, 3),
                    InvalidWindow);
}

TEST_CASE("decode_to_motion: pipeline identity without diffusion") {
    auto& f = fixture();
    std::vector<geom::RigidTransform> initial = {f.seq.canonical_at(0, 0),
                                                 f.seq.canonical_at(0, 1)};
    sampler::DecodeInfo info;
    const auto motion = sampler::decode_to_motion(f.toks, &f.vqvae, f.cfg, f.stats,
                                                  f.seq.beta, initial, {}, &info);
    CHECK(motion.T == 64);
    CHECK(motion.P == 2);
    CHECK(motion.has_derived);

    // equals the vqvae's own reconstruction (tokens came from clean data)
    for (int p = 0; p < 2; ++p) {
        const auto feats = vq::stream_features(f.seq, p);
        const auto enc = f.vqvae.encode_quantize(feats);
        const auto rec = f.vqvae.reconstruct(enc, feats);
        for (int t = 0; t < 64; ++t) {
            for (int j = 0; j < 9; ++j) {
                const auto& got = motion.theta_at(t, p, j);
                for (int k = 0; k < 6; ++k) {
                    CHECK(got.v[k] ==
                          doctest::Approx(rec[static_cast<size_t>(t) * 63 + j * 6 + k])
                              .epsilon(1e-6));
                }
            }
        }
    }
    CHECK(info.snapped == 2 * 16);

    // initial placement from the conditioning agent's partner slot matches
    // the target's own canonical frame on ground truth
    const auto derived = sampler::initial_from_partner(f.seq, 1, 0);
    CHECK(geom::approx_equal(derived, f.seq.canonical_at(0, 0), 1e-9));
}

TEST_CASE("decode_to_motion: identity deltas keep the canonical frame fixed") {
    auto& f = fixture();
    // stationary single-agent sequence
    data::MotionSequence still;
    still.fps = 30;
    still.P = 1;
    still.T = 64;
    still.presence = {1};
    still.beta.resize(1);
    still.theta.assign(64 * 9, geom::Rotation6D::identity());
    still.root_world.assign(
        64, geom::RigidTransform{geom::yaw_rotation(0.3), geom::Vec3(0.4, 0.9, -0.1)});
    const auto pre = data::preprocess(still);
    const auto stats = dfot::compute_token_stats({pre}, &f.vqvae, f.cfg);
    const auto toks = dfot::assemble_tokens(pre, &f.vqvae, f.cfg, &stats);
    const auto motion = sampler::decode_to_motion(
        toks, &f.vqvae, f.cfg, stats, pre.beta, {pre.canonical_at(0, 0)});
    // interior frames with the same within-token phase decode identically,
    // and the integrated canonical frame never moves
    for (int t = 16; t + 4 < 48; ++t) {
        CHECK((motion.root_at(t + 4, 0).t - motion.root_at(t, 0).t).norm() < 1e-9);
    }
}

#include "magnet/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace magnet::sampler {

Strategy strategy_from_string(const std::string& name) {
    if (name == "inpaint") return Strategy::kInpaint;
    if (name == "predict") return Strategy::kPredict;
    if (name == "joint") return Strategy::kJoint;
    if (name == "agentic-sync") return Strategy::kAgenticSync;
    if (name == "agentic-async") return Strategy::kAgenticAsync;
    if (name == "inbetween") return Strategy::kInbetween;
    if (name == "control") return Strategy::kControl;
    throw InvalidStrategyParams("unknown strategy: " + name);
}

std::string strategy_to_string(Strategy s) {
    switch (s) {
        case Strategy::kInpaint: return "inpaint";
        case Strategy::kPredict: return "predict";
        case Strategy::kJoint: return "joint";
        case Strategy::kAgenticSync: return "agentic-sync";
        case Strategy::kAgenticAsync: return "agentic-async";
        case Strategy::kInbetween: return "inbetween";
        case Strategy::kControl: return "control";
    }
    return "?";
}

GuidanceSpec::Mode guidance_from_string(const std::string& name) {
    if (name == "none") return GuidanceSpec::Mode::kNone;
    if (name == "hg") return GuidanceSpec::Mode::kHg;
    if (name == "shg") return GuidanceSpec::Mode::kShg;
    if (name == "phg") return GuidanceSpec::Mode::kPhg;
    throw InvalidMode("unknown guidance mode: " + name);
}

void SamplingPlan::validate() const {
    const int n = P * T_prime;
    if (static_cast<int>(schedule.size()) != n ||
        static_cast<int>(clamped.size()) != n ||
        static_cast<int>(clamp_from.size()) != n ||
        static_cast<int>(excluded.size()) != n) {
        throw InvalidStrategyParams("plan: inconsistent sizes");
    }
    for (int t = 0; t < n; ++t) {
        if (static_cast<int>(schedule[t].size()) != n_iters + 1) {
            throw InvalidStrategyParams("plan: bad trajectory length");
        }
        for (int k = 0; k < n_iters; ++k) {
            if (schedule[t][k + 1] > schedule[t][k]) {
                throw InvalidStrategyParams("plan: trajectory not monotone");
            }
        }
        if (excluded[t]) continue;
        if (schedule[t][n_iters] != 0.0) {
            throw InvalidStrategyParams("plan: terminal tau must be 0");
        }
        if (clamped[t]) {
            for (double v : schedule[t]) {
                if (v != 0.0) {
                    throw InvalidStrategyParams("plan: clamped token tau != 0");
                }
            }
        }
    }
}

std::string SamplingPlan::to_text() const {
    std::string out = "strategy " + strategy_to_string(strategy) + "\n";
    out += "P " + std::to_string(P) + "\nT_prime " + std::to_string(T_prime) +
           "\nsteps " + std::to_string(steps_per_token) + "\nn_iters " +
           std::to_string(n_iters) + "\n";
    char buf[32];
    for (int i = 0; i < T_prime; ++i) {
        for (int a = 0; a < P; ++a) {
            const int t = tok(i, a);
            out += "token " + std::to_string(i) + " " + std::to_string(a);
            out += excluded[t] ? " excluded"
                               : (clamped[t] ? " clamped" : " generated");
            if (clamp_from[t] > 0) {
                out += " clamp_from=" + std::to_string(clamp_from[t]);
            }
            for (double v : schedule[t]) {
                std::snprintf(buf, sizeof(buf), " %.4f", v);
                out += buf;
            }
            out += "\n";
        }
    }
    return out;
}

namespace {

std::vector<double> idle_trajectory(int n_iters, double level) {
    return std::vector<double>(n_iters + 1, level);
}

/// tau = 1 until `start`, then a uniform grid down to 0 over `steps`
/// iterations, then 0.
std::vector<double> block_trajectory(int n_iters, int start, int steps) {
    std::vector<double> out(n_iters + 1, 0.0);
    for (int k = 0; k <= n_iters; ++k) {
        if (k <= start) {
            out[k] = 1.0;
        } else if (k < start + steps) {
            out[k] = 1.0 - static_cast<double>(k - start) / steps;
        }
    }
    return out;
}

}  // namespace

SamplingPlan make_plan(Strategy strategy, int P_active, int T_prime,
                       const PlanParams& params) {
    if (P_active < 1 || T_prime < 1) {
        throw InvalidStrategyParams("make_plan: empty layout");
    }
    if (params.steps < 1) throw InvalidStrategyParams("make_plan: steps < 1");

    SamplingPlan plan;
    plan.strategy = strategy;
    plan.P = P_active;
    plan.T_prime = T_prime;
    plan.steps_per_token = params.steps;
    const int n = P_active * T_prime;
    plan.clamped.assign(n, 0);
    plan.clamp_from.assign(n, -1);
    plan.excluded.assign(n, 0);
    plan.schedule.assign(n, {});

    const int S = params.steps;
    auto clamp_token = [&](int t) {
        plan.clamped[t] = 1;
        plan.clamp_from[t] = 0;
    };

    switch (strategy) {
        case Strategy::kInpaint: {
            if (params.target_agent < 0 || params.target_agent >= P_active) {
                throw InvalidStrategyParams("inpaint: bad target agent");
            }
            if (P_active < 2) {
                throw InvalidStrategyParams("inpaint: needs a conditioning agent");
            }
            plan.n_iters = S;
            for (int i = 0; i < T_prime; ++i) {
                for (int a = 0; a < P_active; ++a) {
                    const int t = plan.tok(i, a);
                    if (a == params.target_agent) {
                        plan.schedule[t] = block_trajectory(S, 0, S);
                    } else {
                        clamp_token(t);
                        plan.schedule[t] = idle_trajectory(S, 0.0);
                    }
                }
            }
            break;
        }
        case Strategy::kPredict:
        case Strategy::kJoint: {
            const int h = params.history_len;
            if (h < 1 || h >= T_prime) {
                throw InvalidStrategyParams("prediction: history_len out of range");
            }
            if (strategy == Strategy::kPredict &&
                (params.target_agent < 0 || params.target_agent >= P_active)) {
                throw InvalidStrategyParams("predict: bad target agent");
            }
            plan.n_iters = S;
            for (int i = 0; i < T_prime; ++i) {
                for (int a = 0; a < P_active; ++a) {
                    const int t = plan.tok(i, a);
                    if (i < h) {
                        clamp_token(t);
                        plan.schedule[t] = idle_trajectory(S, 0.0);
                    } else if (strategy == Strategy::kJoint ||
                               a == params.target_agent) {
                        plan.schedule[t] = block_trajectory(S, 0, S);
                    } else {
                        // partner futures are not conditioned on: drop them
                        plan.excluded[t] = 1;
                        plan.schedule[t] = idle_trajectory(S, 0.0);
                    }
                }
            }
            break;
        }
        case Strategy::kAgenticSync:
        case Strategy::kAgenticAsync: {
            const int h = params.history_len;
            if (h < 1 || h >= T_prime) {
                throw InvalidStrategyParams("agentic: history_len out of range");
            }
            int offset = 0;
            if (strategy == Strategy::kAgenticAsync) {
                if (params.tt_offset < 0.0 || params.tt_offset > 1.0) {
                    throw InvalidStrategyParams("agentic: tt_offset outside [0,1]");
                }
                offset = static_cast<int>(std::lround(params.tt_offset * S));
            }
            const int block_len = S + offset * (P_active - 1);
            const int futures = T_prime - h;
            plan.n_iters = futures * block_len;
            for (int i = 0; i < T_prime; ++i) {
                for (int a = 0; a < P_active; ++a) {
                    const int t = plan.tok(i, a);
                    if (i < h) {
                        clamp_token(t);
                        plan.schedule[t] = idle_trajectory(plan.n_iters, 0.0);
                    } else {
                        const int start = (i - h) * block_len + a * offset;
                        plan.schedule[t] =
                            block_trajectory(plan.n_iters, start, S);
                    }
                }
            }
            break;
        }
        case Strategy::kInbetween: {
            if (params.keyframes.empty()) {
                throw InvalidStrategyParams("inbetween: no keyframes");
            }
            std::vector<bool> key(T_prime, false);
            for (int k : params.keyframes) {
                if (k < 0 || k >= T_prime) {
                    throw InvalidStrategyParams("inbetween: keyframe out of range");
                }
                key[k] = true;
            }
            bool any_gen = false;
            plan.n_iters = S;
            for (int i = 0; i < T_prime; ++i) {
                for (int a = 0; a < P_active; ++a) {
                    const int t = plan.tok(i, a);
                    if (key[i]) {
                        clamp_token(t);
                        plan.schedule[t] = idle_trajectory(S, 0.0);
                    } else {
                        any_gen = true;
                        plan.schedule[t] = block_trajectory(S, 0, S);
                    }
                }
            }
            if (!any_gen) {
                throw InvalidStrategyParams("inbetween: nothing to generate");
            }
            break;
        }
        case Strategy::kControl: {
            if (P_active != 2) {
                throw InvalidStrategyParams("control: exactly two active agents");
            }
            const int c = params.controller_agent;
            const int g = params.controlled_agent;
            if (c == g || c < 0 || c > 1 || g < 0 || g > 1) {
                throw InvalidStrategyParams("control: bad agent roles");
            }
            const int h = params.history_len;
            if (h < 1 || h >= T_prime) {
                throw InvalidStrategyParams("control: history_len out of range");
            }
            const int futures = T_prime - h;
            plan.n_iters = futures * S;
            for (int i = 0; i < T_prime; ++i) {
                for (int a = 0; a < P_active; ++a) {
                    const int t = plan.tok(i, a);
                    if (i < h) {
                        clamp_token(t);
                        plan.schedule[t] = idle_trajectory(plan.n_iters, 0.0);
                    } else if (a == c) {
                        // conditioning revealed exactly when its step begins;
                        // nothing beyond index i leaks earlier
                        const int at = (i - h) * S;
                        plan.clamp_from[t] = at;
                        auto traj = idle_trajectory(plan.n_iters, 0.0);
                        for (int k = 0; k < at; ++k) traj[k] = 1.0;
                        plan.schedule[t] = traj;
                    } else {
                        plan.schedule[t] =
                            block_trajectory(plan.n_iters, (i - h) * S, S);
                    }
                }
            }
            break;
        }
    }
    plan.validate();
    return plan;
}

void ddim_step(std::vector<double>& cur, const double* pred, int width,
               double tau_cur, double tau_next) {
    if (tau_cur <= 0.0) throw DegenerateLevel("ddim_step: tau_cur must be > 0");
    if (tau_next >= tau_cur || tau_next < 0.0) {
        throw DegenerateLevel("ddim_step: requires 0 <= tau_next < tau_cur");
    }
    if (static_cast<int>(cur.size()) != width) {
        throw ShapeMismatch("ddim_step: width mismatch");
    }
    if (tau_next == 0.0) {
        // terminal step: alpha substituted as exactly 1, output equals pred
        std::copy(pred, pred + width, cur.begin());
        return;
    }
    const double a_cur = dfot::alpha_bar(tau_cur);
    const double a_next = dfot::alpha_bar(tau_next);
    const double sa_cur = std::sqrt(a_cur);
    const double sn_cur = std::sqrt(1.0 - a_cur);
    const double sa_next = std::sqrt(a_next);
    const double sn_next = std::sqrt(1.0 - a_next);
    for (int c = 0; c < width; ++c) {
        const double eps_hat = (cur[c] - sa_cur * pred[c]) / sn_cur;
        cur[c] = sa_next * pred[c] + sn_next * eps_hat;
    }
}

SampleResult sample(const dfot::DfotModel& model, const SamplingPlan& plan,
                    const dfot::TokenSequence& conditioning,
                    const GuidanceSpec& guidance, std::uint64_t seed) {
    plan.validate();
    if (conditioning.P != plan.P || conditioning.T_prime != plan.T_prime) {
        throw PlanModelMismatch("sample: plan/conditioning layout mismatch");
    }
    const int D = model.config().token_width();
    if (conditioning.width != D) {
        throw PlanModelMismatch("sample: token width does not match model");
    }
    const int n = plan.P * plan.T_prime;
    for (int t = 0; t < n; ++t) {
        if (plan.clamp_from[t] >= 0 && !conditioning.valid[t]) {
            throw MissingConditioning("sample: clamped token lacks conditioning");
        }
    }

    dfot::TokenSequence state = conditioning;
    Rng init_rng = Rng(seed).split(0x1417);
    for (int t = 0; t < n; ++t) {
        double* row = state.row(t);
        if (plan.excluded[t]) {
            state.valid[t] = 0;
            std::fill(row, row + D, 0.0);
            continue;
        }
        if (plan.clamped[t]) continue;  // clean conditioning stays put
        for (int c = 0; c < D; ++c) row[c] = init_rng.normal();
    }

    // guidance branch re-noise draws, one set per branch, reused over iterations
    std::vector<std::vector<double>> branch_noise;
    std::vector<int> branch_kind;   // 0 uncond, 1 self(n), 2 partner(n)
    std::vector<int> branch_agent;
    if (guidance.mode != GuidanceSpec::Mode::kNone) {
        auto add_branch = [&](int kind, int agent, std::uint64_t tag) {
            Rng r = Rng(seed).split(0xb000 + tag);
            std::vector<double> noise(static_cast<size_t>(n) * D);
            for (auto& v : noise) v = r.normal();
            branch_noise.push_back(std::move(noise));
            branch_kind.push_back(kind);
            branch_agent.push_back(agent);
        };
        add_branch(0, -1, 0);
        if (guidance.mode == GuidanceSpec::Mode::kShg) {
            for (int a = 0; a < plan.P; ++a) add_branch(1, a, 1 + a);
        } else if (guidance.mode == GuidanceSpec::Mode::kPhg) {
            for (int a = 0; a < plan.P; ++a) add_branch(2, a, 101 + a);
        }
    }

    SampleResult result;
    std::vector<double> tau_cur(n), tau_next(n);
    std::vector<double> guided(static_cast<size_t>(n) * D);

    for (int k = 0; k < plan.n_iters; ++k) {
        for (int t = 0; t < n; ++t) {
            if (plan.clamp_from[t] == k && !plan.clamped[t]) {
                std::copy(conditioning.row(t), conditioning.row(t) + D,
                          state.row(t));
            }
            tau_cur[t] = plan.schedule[t][k];
            tau_next[t] = plan.schedule[t][k + 1];
        }

        auto run_forward = [&](const std::vector<double>& rows,
                               const std::vector<double>& taus) {
            ++result.forwards;
            return model.forward(rows, taus, state.time_index,
                                 state.agent_index, state.valid);
        };

        const nn::Tensor cond_pred = run_forward(state.values, tau_cur);
        const std::vector<double>* pred_rows = &cond_pred.values();

        if (guidance.mode != GuidanceSpec::Mode::kNone) {
            std::vector<std::uint8_t> is_history(n, 0);
            for (int t = 0; t < n; ++t) {
                is_history[t] =
                    plan.clamp_from[t] >= 0 && plan.clamp_from[t] <= k;
            }
            auto branch_pred = [&](size_t b) {
                std::vector<double> rows = state.values;
                std::vector<double> taus = tau_cur;
                for (int t = 0; t < n; ++t) {
                    if (!is_history[t]) continue;
                    const int a = t % plan.P;
                    bool drop = false;
                    if (branch_kind[b] == 0) drop = true;
                    if (branch_kind[b] == 1) drop = a != branch_agent[b];
                    if (branch_kind[b] == 2) drop = a == branch_agent[b];
                    if (!drop) continue;
                    std::copy(
                        branch_noise[b].begin() + static_cast<size_t>(t) * D,
                        branch_noise[b].begin() + static_cast<size_t>(t + 1) * D,
                        rows.begin() + static_cast<size_t>(t) * D);
                    taus[t] = 1.0;
                }
                return run_forward(rows, taus).values();
            };

            const auto& c = cond_pred.values();
            const auto uncond = branch_pred(0);
            if (guidance.mode == GuidanceSpec::Mode::kHg) {
                for (size_t i = 0; i < guided.size(); ++i) {
                    guided[i] = (1.0 + guidance.w) * c[i] - guidance.w * uncond[i];
                }
            } else {
                std::vector<double> mean(static_cast<size_t>(n) * D, 0.0);
                for (size_t b = 1; b < branch_noise.size(); ++b) {
                    const auto v = branch_pred(b);
                    for (size_t i = 0; i < mean.size(); ++i) mean[i] += v[i];
                }
                const double inv = 1.0 / static_cast<double>(plan.P);
                for (size_t i = 0; i < guided.size(); ++i) {
                    guided[i] =
                        c[i] + guidance.w * mean[i] * inv - guidance.w * uncond[i];
                }
            }
            pred_rows = &guided;
        }

        std::vector<double> rowbuf(D);
        for (int t = 0; t < n; ++t) {
            if (plan.excluded[t] || plan.clamp_from[t] >= 0) continue;
            if (tau_next[t] < tau_cur[t]) {
                rowbuf.assign(state.row(t), state.row(t) + D);
                ddim_step(rowbuf, pred_rows->data() + static_cast<size_t>(t) * D,
                          D, tau_cur[t], tau_next[t]);
                std::copy(rowbuf.begin(), rowbuf.end(), state.row(t));
            }
        }
        if (k + 1 == plan.n_iters) {
            result.last_pred.assign(pred_rows->begin(), pred_rows->end());
        }
    }

    result.final_tau.resize(n);
    for (int t = 0; t < n; ++t) {
        result.final_tau[t] = plan.schedule[t][plan.n_iters];
    }
    result.tokens = std::move(state);
    return result;
}

dfot::TokenSequence rollout_ultralong(const dfot::DfotModel& model,
                                      const dfot::TokenSequence& seed_tokens,
                                      int window, int overlap, int total_new,
                                      const GuidanceSpec& guidance,
                                      std::uint64_t seed) {
    if (overlap <= 0 || overlap >= window) {
        throw InvalidWindow("rollout: requires 0 < overlap < window");
    }
    if (seed_tokens.T_prime < overlap) {
        throw InvalidWindow("rollout: seed shorter than the overlap");
    }
    if (total_new < 1) throw InvalidWindow("rollout: nothing to generate");

    const int P = seed_tokens.P;
    const int D = seed_tokens.width;
    const int stride = window - overlap;

    dfot::TokenSequence out = seed_tokens;
    int generated = 0;
    int iteration = 0;
    while (generated < total_new) {
        const int n_new = std::min(stride, total_new - generated);
        const int Tw = overlap + n_new;

        dfot::TokenSequence win;
        win.P = P;
        win.T_prime = Tw;
        win.width = D;
        win.values.assign(static_cast<size_t>(P) * Tw * D, 0.0);
        win.agent_index.resize(static_cast<size_t>(P) * Tw);
        win.time_index.resize(static_cast<size_t>(P) * Tw);
        win.valid.assign(static_cast<size_t>(P) * Tw, 1);
        win.agent_present = out.agent_present;
        win.seq_agent = out.seq_agent;
        const int base = out.T_prime - overlap;
        for (int i = 0; i < Tw; ++i) {
            for (int a = 0; a < P; ++a) {
                const int t = win.token_at(i, a);
                win.agent_index[t] = out.agent_index[out.token_at(0, a)];
                win.time_index[t] = i;
                win.valid[t] = out.valid[out.token_at(0, a)];
                if (i < overlap) {
                    std::copy(out.row(out.token_at(base + i, a)),
                              out.row(out.token_at(base + i, a)) + D, win.row(t));
                }
            }
        }

        PlanParams pp;
        pp.history_len = overlap;
        const auto plan = make_plan(Strategy::kJoint, P, Tw, pp);
        auto res = sample(model, plan, win, guidance,
                          Rng(seed).split(0x417 + iteration).next_u64());

        const int old_T = out.T_prime;
        out.T_prime += n_new;
        out.values.resize(static_cast<size_t>(P) * out.T_prime * D);
        out.agent_index.resize(static_cast<size_t>(P) * out.T_prime);
        out.time_index.resize(static_cast<size_t>(P) * out.T_prime);
        out.valid.resize(static_cast<size_t>(P) * out.T_prime);
        for (int i = 0; i < n_new; ++i) {
            for (int a = 0; a < P; ++a) {
                const int dst = out.token_at(old_T + i, a);
                const int src = res.tokens.token_at(overlap + i, a);
                std::copy(res.tokens.row(src), res.tokens.row(src) + D,
                          out.row(dst));
                out.agent_index[dst] = res.tokens.agent_index[src];
                out.time_index[dst] = old_T + i;
                out.valid[dst] = res.tokens.valid[src];
            }
        }
        generated += n_new;
        ++iteration;
    }
    return out;
}

geom::RigidTransform initial_from_partner(const data::MotionSequence& seq,
                                          int cond_agent, int target_agent) {
    if (cond_agent == target_agent) {
        throw InvalidStrategyParams("initial_from_partner: identical agents");
    }
    const int slot = target_agent < cond_agent ? target_agent : target_agent - 1;
    return geom::compose(seq.canonical_at(0, cond_agent),
                         seq.partner_at(0, cond_agent, slot));
}

data::MotionSequence decode_to_motion(
    const dfot::TokenSequence& tokens, const vq::VqvaeModel* vqvae,
    const dfot::DfotConfig& cfg, const data::NormStats& stats,
    const std::vector<body::BodyShape>& betas,
    const std::vector<geom::RigidTransform>& initial_canonical,
    const DecodeOptions& opts, DecodeInfo* info) {
    const int D = cfg.token_width();
    if (tokens.width != D) throw ShapeMismatch("decode_to_motion: token width");
    if (stats.channels() != D) throw ShapeMismatch("decode_to_motion: stats width");
    if (cfg.use_vqvae && !vqvae) {
        throw ShapeMismatch("decode_to_motion: vqvae required");
    }

    std::vector<int> present;
    for (int a = 0; a < tokens.P; ++a) {
        if (tokens.agent_present.empty() || tokens.agent_present[a]) {
            present.push_back(a);
        }
    }
    const int P = static_cast<int>(present.size());
    if (static_cast<int>(betas.size()) != P ||
        static_cast<int>(initial_canonical.size()) != P) {
        throw ShapeMismatch("decode_to_motion: betas/initial size mismatch");
    }

    const int omega = cfg.omega;
    const int J = cfg.J;
    const int xw = J * 6 + 9;
    const int T = tokens.T_prime * omega;

    data::MotionSequence seq;
    seq.fps = 30.0;
    seq.P = P;
    seq.T = T;
    seq.J = J;
    seq.presence.assign(P, 1);
    seq.beta = betas;
    seq.theta.assign(static_cast<size_t>(T) * P * J, geom::Rotation6D::identity());
    seq.root_world.assign(static_cast<size_t>(T) * P,
                          geom::RigidTransform::identity());

    DecodeInfo local_info;
    for (int out_p = 0; out_p < P; ++out_p) {
        const int slot = present[out_p];
        // denormalized rows for this agent
        std::vector<double> rows(static_cast<size_t>(tokens.T_prime) * D);
        for (int i = 0; i < tokens.T_prime; ++i) {
            const double* src = tokens.row(tokens.token_at(i, slot));
            double* dst = rows.data() + static_cast<size_t>(i) * D;
            for (int c = 0; c < D; ++c) {
                dst[c] = c < cfg.presence_off()
                             ? src[c] * stats.stdev[c] + stats.mean[c]
                             : src[c];
            }
        }

        // per-frame canonical deltas from the delta block
        std::vector<geom::RigidTransform> deltas(T);
        for (int i = 0; i < tokens.T_prime; ++i) {
            for (int f = 0; f < omega; ++f) {
                std::array<double, 9> enc;
                const double* src =
                    rows.data() + static_cast<size_t>(i) * D + cfg.delta_off() + f * 9;
                std::copy(src, src + 9, enc.begin());
                deltas[i * omega + f] = geom::decode_transform_9d(enc);
            }
        }

        // pose stream
        std::vector<double> xhat;
        if (cfg.use_vqvae) {
            std::vector<double> z(static_cast<size_t>(tokens.T_prime) * cfg.d_vq);
            for (int i = 0; i < tokens.T_prime; ++i) {
                std::copy(rows.begin() + static_cast<size_t>(i) * D + cfg.z_off(),
                          rows.begin() + static_cast<size_t>(i) * D + cfg.z_off() +
                              cfg.d_vq,
                          z.begin() + static_cast<size_t>(i) * cfg.d_vq);
            }
            if (opts.snap_z) {
                const auto idx = vqvae->quantize(z);
                const auto& cb = vqvae->codebook().values();
                for (int i = 0; i < tokens.T_prime; ++i) {
                    double dist = 0;
                    for (int c = 0; c < cfg.d_vq; ++c) {
                        const double diff =
                            z[static_cast<size_t>(i) * cfg.d_vq + c] -
                            cb[static_cast<size_t>(idx[i]) * cfg.d_vq + c];
                        dist += diff * diff;
                    }
                    local_info.mean_snap_distance += std::sqrt(dist);
                    ++local_info.snapped;
                    std::copy(cb.begin() + static_cast<size_t>(idx[i]) * cfg.d_vq,
                              cb.begin() + static_cast<size_t>(idx[i] + 1) * cfg.d_vq,
                              z.begin() + static_cast<size_t>(i) * cfg.d_vq);
                }
            }
            // conditions at frame rate: beta + predicted deltas
            std::vector<double> c_rows(static_cast<size_t>(T) * 19);
            for (int t = 0; t < T; ++t) {
                double* cr = c_rows.data() + static_cast<size_t>(t) * 19;
                std::copy(seq.beta[out_p].beta.begin(), seq.beta[out_p].beta.end(), cr);
                const auto enc = geom::encode_transform_9d(deltas[t]);
                std::copy(enc.begin(), enc.end(), cr + 10);
            }
            nn::Tensor zt =
                nn::Tensor::from_values({tokens.T_prime, cfg.d_vq}, std::move(z));
            nn::Tensor ct = nn::Tensor::from_values({T, 19}, std::move(c_rows));
            xhat = vqvae->decode(zt, ct).values();
        } else {
            // raw-feature ablation: the z block already is the pose stream
            xhat.resize(static_cast<size_t>(T) * xw);
            for (int i = 0; i < tokens.T_prime; ++i) {
                std::copy(rows.begin() + static_cast<size_t>(i) * D + cfg.z_off(),
                          rows.begin() + static_cast<size_t>(i) * D + cfg.z_off() +
                              omega * xw,
                          xhat.begin() + static_cast<size_t>(i) * omega * xw);
            }
        }

        // integrate canonical frames; frame-0 delta is unused by convention
        std::vector<geom::RigidTransform> canonical(T);
        canonical[0] = initial_canonical[out_p];
        for (int t = 1; t < T; ++t) {
            canonical[t] = geom::compose(canonical[t - 1], deltas[t]);
        }
        for (int t = 0; t < T; ++t) {
            const double* xr = xhat.data() + static_cast<size_t>(t) * xw;
            for (int j = 0; j < J; ++j) {
                auto& r = seq.theta_at(t, out_p, j);
                std::copy(xr + j * 6, xr + j * 6 + 6, r.v.begin());
            }
            std::array<double, 9> enc;
            std::copy(xr + J * 6, xr + J * 6 + 9, enc.begin());
            const auto can_to_root = geom::decode_transform_9d(enc);
            seq.root_at(t, out_p) = geom::compose(canonical[t], can_to_root);
        }
    }

    if (info) {
        if (local_info.snapped > 0) {
            local_info.mean_snap_distance /= local_info.snapped;
        }
        *info = local_info;
    }
    // derive relative transforms from the decoded world motion
    return data::preprocess(seq);
}

}  // namespace magnet::sampler

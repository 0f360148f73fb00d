#include "magnet/dfot.hpp"

#include <algorithm>
#include <cmath>

#include "magnet/nn/tensor_geom.hpp"

namespace magnet::dfot {

using nn::Tensor;

void DfotConfig::validate() const {
    if (d <= 0 || layers <= 0 || heads <= 0) throw ConfigError("dfot: bad dims");
    if (d % heads != 0) throw ConfigError("dfot: d must divide by heads");
    if ((d / heads) % 2 != 0) throw OddHeadDim("dfot: head dim must be even");
    if (d_emb % 2 != 0) throw OddDimension("dfot: d_emb must be even");
    if (P_max < 1 || P_max > 8) throw ConfigError("dfot: P_max out of range");
    if (omega < 1) throw ConfigError("dfot: omega must be >= 1");
    if (use_vqvae && d_vq <= 0) throw ConfigError("dfot: d_vq must be positive");
}

std::vector<std::pair<std::string, std::string>> DfotConfig::echo() const {
    auto s = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    return {{"d", std::to_string(d)},
            {"layers", std::to_string(layers)},
            {"heads", std::to_string(heads)},
            {"d_emb", std::to_string(d_emb)},
            {"P_max", std::to_string(P_max)},
            {"omega", std::to_string(omega)},
            {"d_vq", std::to_string(d_vq)},
            {"J", std::to_string(J)},
            {"lambda0", s(lambda0)},
            {"lambda1", s(lambda1)},
            {"lambda2", s(lambda2)},
            {"lambda3", s(lambda3)},
            {"huber_delta", s(huber_delta)},
            {"use_vqvae", use_vqvae ? "1" : "0"},
            {"use_partner", use_partner ? "1" : "0"}};
}

DfotConfig DfotConfig::from_echo(const std::map<std::string, std::string>& kv) {
    DfotConfig cfg;
    auto geti = [&](const char* k, int& out) {
        auto it = kv.find(k);
        if (it != kv.end()) out = std::stoi(it->second);
    };
    auto getd = [&](const char* k, double& out) {
        auto it = kv.find(k);
        if (it != kv.end()) out = std::stod(it->second);
    };
    auto getb = [&](const char* k, bool& out) {
        auto it = kv.find(k);
        if (it != kv.end()) out = it->second == "1";
    };
    geti("d", cfg.d);
    geti("layers", cfg.layers);
    geti("heads", cfg.heads);
    geti("d_emb", cfg.d_emb);
    geti("P_max", cfg.P_max);
    geti("omega", cfg.omega);
    geti("d_vq", cfg.d_vq);
    geti("J", cfg.J);
    getd("lambda0", cfg.lambda0);
    getd("lambda1", cfg.lambda1);
    getd("lambda2", cfg.lambda2);
    getd("lambda3", cfg.lambda3);
    getd("huber_delta", cfg.huber_delta);
    getb("use_vqvae", cfg.use_vqvae);
    getb("use_partner", cfg.use_partner);
    cfg.validate();
    return cfg;
}

TokenSequence assemble_tokens(const data::MotionSequence& seq,
                              const vq::VqvaeModel* vqvae, const DfotConfig& cfg,
                              const data::NormStats* stats, bool include_absent) {
    cfg.validate();
    if (!seq.has_derived) {
        throw MissingDerivedTransforms("assemble_tokens: run preprocess first");
    }
    if (seq.P > cfg.P_max) throw ShapeMismatch("assemble_tokens: P exceeds P_max");
    if (seq.T % cfg.omega != 0) {
        throw ShapeMismatch("assemble_tokens: T must be a multiple of omega");
    }
    if (cfg.use_vqvae) {
        if (!vqvae) throw ShapeMismatch("assemble_tokens: vqvae required");
        if (vqvae->config().d_vq != cfg.d_vq || vqvae->config().omega != cfg.omega) {
            throw ShapeMismatch("assemble_tokens: vqvae/dfot config mismatch");
        }
    }

    std::vector<int> slots;  // matrix slot -> sequence agent index
    for (int p = 0; p < seq.P; ++p) {
        if (seq.presence[p] || include_absent) slots.push_back(p);
    }
    const int P = static_cast<int>(slots.size());
    const int Tp = seq.T / cfg.omega;
    const int D = cfg.token_width();

    TokenSequence out;
    out.P = P;
    out.T_prime = Tp;
    out.width = D;
    out.values.assign(static_cast<size_t>(P) * Tp * D, 0.0);
    out.agent_index.resize(static_cast<size_t>(P) * Tp);
    out.time_index.resize(static_cast<size_t>(P) * Tp);
    out.valid.resize(static_cast<size_t>(P) * Tp);
    out.agent_present.resize(P);
    out.seq_agent = slots;

    std::vector<std::vector<double>> z_rows(P);
    for (int k = 0; k < P; ++k) {
        const int p = slots[k];
        out.agent_present[k] = seq.presence[p];
        if (!seq.presence[p]) continue;
        if (cfg.use_vqvae) {
            z_rows[k] = vqvae->encode_quantize(vq::stream_features(seq, p)).z_rows;
        } else {
            // raw windowed pose features stand in for the latent
            z_rows[k] = vq::stream_features(seq, p).x;
        }
    }

    for (int i = 0; i < Tp; ++i) {
        for (int k = 0; k < P; ++k) {
            const int tok = out.token_at(i, k);
            out.agent_index[tok] = slots[k];
            out.time_index[tok] = i;
            out.valid[tok] = out.agent_present[k];
            if (!out.valid[tok]) continue;
            const int p = slots[k];
            double* row = out.row(tok);
            std::copy(z_rows[k].begin() + static_cast<size_t>(i) * cfg.z_width(),
                      z_rows[k].begin() + static_cast<size_t>(i + 1) * cfg.z_width(),
                      row + cfg.z_off());
            for (int s = 0; s < cfg.P_max - 1; ++s) {
                const int q = s < p ? s : s + 1;  // slot s holds agent q
                const bool have =
                    cfg.use_partner && q < seq.P && seq.presence[q] && seq.presence[p];
                if (!have) continue;
                const int seq_slot = q < p ? q : q - 1;
                for (int f = 0; f < cfg.omega; ++f) {
                    const int t = i * cfg.omega + f;
                    const auto enc =
                        geom::encode_transform_9d(seq.partner_at(t, p, seq_slot));
                    std::copy(enc.begin(), enc.end(),
                              row + cfg.partner_off() + (s * cfg.omega + f) * 9);
                }
                row[cfg.presence_off() + s] = 1.0;
            }
            for (int f = 0; f < cfg.omega; ++f) {
                const int t = i * cfg.omega + f;
                const auto enc = geom::encode_transform_9d(seq.delta_can_at(t, p));
                std::copy(enc.begin(), enc.end(), row + cfg.delta_off() + f * 9);
            }
        }
    }

    if (stats) {
        if (stats->channels() != D) throw ShapeMismatch("assemble_tokens: stats width");
        for (int tok = 0; tok < out.n_tokens(); ++tok) {
            if (!out.valid[tok]) continue;
            double* row = out.row(tok);
            for (int c = 0; c < cfg.presence_off(); ++c) {
                row[c] = (row[c] - stats->mean[c]) / stats->stdev[c];
            }
        }
    }
    return out;
}

data::NormStats compute_token_stats(const std::vector<data::MotionSequence>& seqs,
                                    const vq::VqvaeModel* vqvae,
                                    const DfotConfig& cfg) {
    std::vector<double> rows;
    const int D = cfg.token_width();
    for (const auto& seq : seqs) {
        const auto toks = assemble_tokens(seq, vqvae, cfg, nullptr);
        for (int tok = 0; tok < toks.n_tokens(); ++tok) {
            if (!toks.valid[tok]) continue;
            rows.insert(rows.end(), toks.row(tok), toks.row(tok) + D);
        }
    }
    auto stats = data::compute_norm_stats(rows, D);
    // presence bits stay raw 0/1 conditioning channels
    for (int c = cfg.presence_off(); c < D; ++c) {
        stats.mean[c] = 0.0;
        stats.stdev[c] = 1.0;
    }
    return stats;
}

double alpha_bar(double tau) {
    if (tau < 0.0 || tau > 1.0) throw OutOfRange("alpha_bar: tau outside [0,1]");
    if (tau == 1.0) return 0.0;  // cos(pi/2) is not exactly zero in fp
    const double arg = (tau + 0.008) / 1.008 * (3.14159265358979323846 / 2.0);
    const double c = std::cos(arg);
    return c * c;
}

NoiseAssignment sample_assignment(int n_tokens, int width, Rng& rng) {
    NoiseAssignment a;
    a.tau.resize(n_tokens);
    a.epsilon.resize(static_cast<size_t>(n_tokens) * width);
    for (int i = 0; i < n_tokens; ++i) a.tau[i] = rng.uniform();
    for (auto& e : a.epsilon) e = rng.normal();
    return a;
}

std::vector<double> perturb(const TokenSequence& tokens,
                            const NoiseAssignment& assignment,
                            const std::vector<std::uint8_t>* clamp) {
    const int n = tokens.n_tokens();
    const int D = tokens.width;
    if (static_cast<int>(assignment.tau.size()) != n ||
        assignment.epsilon.size() != tokens.values.size()) {
        throw ShapeMismatch("perturb: assignment shape mismatch");
    }
    std::vector<double> out(tokens.values.size());
    for (int tok = 0; tok < n; ++tok) {
        const double* m = tokens.row(tok);
        const double* e = assignment.epsilon.data() + static_cast<size_t>(tok) * D;
        double* o = out.data() + static_cast<size_t>(tok) * D;
        if (clamp && (*clamp)[tok]) {
            std::copy(m, m + D, o);
            continue;
        }
        const double a = alpha_bar(assignment.tau[tok]);
        const double sa = std::sqrt(a);
        const double sn = std::sqrt(1.0 - a);
        for (int c = 0; c < D; ++c) o[c] = sa * m[c] + sn * e[c];
    }
    return out;
}

DfotModel::DfotModel(DfotConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int D = cfg_.token_width();
    emb1_ = nn::Linear::create(params_, "emb.l1", D + cfg_.d_emb, cfg_.d, rng);
    ln1_ = nn::LayerNorm::create(params_, "emb.ln1", cfg_.d);
    emb2_ = nn::Linear::create(params_, "emb.l2", cfg_.d, cfg_.d, rng);
    ln2_ = nn::LayerNorm::create(params_, "emb.ln2", cfg_.d);
    emb3_ = nn::Linear::create(params_, "emb.l3", cfg_.d, cfg_.d, rng);
    ln3_ = nn::LayerNorm::create(params_, "emb.ln3", cfg_.d);
    psi_ = params_.create("psi", {cfg_.P_max, cfg_.d}, rng, 0.02);
    for (int l = 0; l < cfg_.layers; ++l) {
        blocks_.push_back(nn::TransformerBlock::create(
            params_, "block" + std::to_string(l), cfg_.d, cfg_.heads, 4 * cfg_.d, rng));
    }
    head_ = nn::Linear::create(params_, "head", cfg_.d, D, rng);
    norm_mean_ = params_.create_buffer("norm.mean", {D}, std::vector<double>(D, 0.0));
    norm_std_ = params_.create_buffer("norm.std", {D}, std::vector<double>(D, 1.0));
}

void DfotModel::set_norm_stats(const data::NormStats& stats) {
    if (stats.channels() != cfg_.token_width()) {
        throw ShapeMismatch("set_norm_stats: channel mismatch");
    }
    norm_mean_.raw_values() = stats.mean;
    norm_std_.raw_values() = stats.stdev;
}

data::NormStats DfotModel::norm_stats() const {
    data::NormStats s;
    s.mean = norm_mean_.values();
    s.stdev = norm_std_.values();
    return s;
}

Tensor DfotModel::forward(const std::vector<double>& noisy_rows,
                          const std::vector<double>& tau,
                          const std::vector<int>& time_index,
                          const std::vector<int>& agent_index,
                          const std::vector<std::uint8_t>& valid) const {
    const int D = cfg_.token_width();
    const int n = static_cast<int>(tau.size());
    if (noisy_rows.size() != static_cast<size_t>(n) * D ||
        time_index.size() != static_cast<size_t>(n) ||
        agent_index.size() != static_cast<size_t>(n) ||
        valid.size() != static_cast<size_t>(n)) {
        throw ShapeMismatch("dfot forward: input sizes disagree");
    }
    for (int a : agent_index) {
        if (a < 0 || a >= cfg_.P_max) throw ShapeMismatch("dfot forward: agent id");
    }

    std::vector<double> emb_rows(static_cast<size_t>(n) * cfg_.d_emb);
    for (int i = 0; i < n; ++i) {
        const auto e = nn::sinusoidal_embed(tau[i], cfg_.d_emb);
        std::copy(e.begin(), e.end(),
                  emb_rows.begin() + static_cast<size_t>(i) * cfg_.d_emb);
    }

    Tensor x = nn::concat_cols(
        {Tensor::from_values({n, D}, noisy_rows),
         Tensor::from_values({n, cfg_.d_emb}, std::move(emb_rows))});
    Tensor h = nn::gelu(ln1_.forward(emb1_.forward(x)));
    h = nn::gelu(ln2_.forward(emb2_.forward(h)));
    h = ln3_.forward(emb3_.forward(h));
    h = nn::add(h, nn::gather_rows(psi_, agent_index));
    h = nn::mask_rows(h, valid);
    for (const auto& block : blocks_) {
        h = block.forward(h, time_index, valid);
    }
    return nn::mask_rows(head_.forward(h), valid);
}

namespace {

Tensor denorm_cols(const Tensor& x, int c0, int c1, const Tensor& mean,
                   const Tensor& stdev) {
    const int w = c1 - c0;
    std::vector<double> m(w), s(w);
    std::copy(mean.values().begin() + c0, mean.values().begin() + c1, m.begin());
    std::copy(stdev.values().begin() + c0, stdev.values().begin() + c1, s.begin());
    return nn::add(nn::mul(x, Tensor::from_values({1, w}, std::move(s))),
                   Tensor::from_values({1, w}, std::move(m)));
}

struct FramePose {
    Tensor R;  // [T, 9]
    Tensor t;  // [T, 3]
};

FramePose frame_pose(const Tensor& block9, int T) {
    Tensor rows = nn::reshape(block9, {T, 9});
    FramePose fp;
    fp.R = nn::rot6d_to_matrix_rows(nn::slice_cols(rows, 0, 6));
    fp.t = nn::slice_cols(rows, 6, 9);
    return fp;
}

}  // namespace

Tensor DfotModel::loss_graph(const Tensor& pred, const TokenSequence& clean,
                             DfotLossParts* parts) const {
    const int D = cfg_.token_width();
    if (pred.shape() != nn::Shape{clean.n_tokens(), D}) {
        throw ShapeMismatch("dfot loss: prediction shape");
    }
    Tensor target = Tensor::from_values({clean.n_tokens(), D}, clean.values);

    Tensor z_h = nn::huber(
        nn::slice_cols(pred, cfg_.z_off(), cfg_.z_off() + cfg_.z_width()),
        nn::slice_cols(target, cfg_.z_off(), cfg_.z_off() + cfg_.z_width()),
        cfg_.huber_delta);
    Tensor z_term = nn::sum_all(nn::mask_rows(z_h, clean.valid));

    Tensor d_h = nn::huber(
        nn::slice_cols(pred, cfg_.delta_off(), cfg_.delta_off() + cfg_.delta_width()),
        nn::slice_cols(target, cfg_.delta_off(), cfg_.delta_off() + cfg_.delta_width()),
        cfg_.huber_delta);
    Tensor delta_term = nn::sum_all(nn::mask_rows(d_h, clean.valid));

    Tensor partner_term = Tensor::scalar_value(0.0);
    if (cfg_.use_partner && cfg_.P_max > 1) {
        Tensor p_h = nn::huber(
            nn::slice_cols(pred, cfg_.partner_off(),
                           cfg_.partner_off() + cfg_.partner_width()),
            nn::slice_cols(target, cfg_.partner_off(),
                           cfg_.partner_off() + cfg_.partner_width()),
            cfg_.huber_delta);
        // supervise only slots with presence on both sides
        std::vector<double> w(
            static_cast<size_t>(clean.n_tokens()) * cfg_.partner_width(), 0.0);
        for (int tok = 0; tok < clean.n_tokens(); ++tok) {
            if (!clean.valid[tok]) continue;
            const double* row = clean.row(tok);
            for (int s = 0; s < cfg_.P_max - 1; ++s) {
                if (row[cfg_.presence_off() + s] == 0.0) continue;
                double* wr = w.data() +
                             static_cast<size_t>(tok) * cfg_.partner_width() +
                             static_cast<size_t>(s) * cfg_.omega * 9;
                std::fill(wr, wr + cfg_.omega * 9, 1.0);
            }
        }
        partner_term = nn::sum_all(nn::mul(
            p_h,
            Tensor::from_values({clean.n_tokens(), cfg_.partner_width()}, std::move(w))));
    }

    // interpersonal velocity consistency, frame level, pairs present on both
    // sides; transforms compared after denormalization and 6D decode
    Tensor lc_term = Tensor::scalar_value(0.0);
    bool have_lc = false;
    if (cfg_.use_partner && cfg_.lambda3 != 0.0 && clean.P > 1) {
        const int T = clean.T_prime * cfg_.omega;
        std::vector<FramePose> deltas(clean.P);
        std::vector<Tensor> agent_rows(clean.P);
        for (int k = 0; k < clean.P; ++k) {
            if (!clean.agent_present[k]) continue;
            std::vector<int> rows(clean.T_prime);
            for (int i = 0; i < clean.T_prime; ++i) rows[i] = clean.token_at(i, k);
            agent_rows[k] = nn::gather_rows(pred, rows);
            Tensor dblock = denorm_cols(
                nn::slice_cols(agent_rows[k], cfg_.delta_off(),
                               cfg_.delta_off() + cfg_.delta_width()),
                cfg_.delta_off(), cfg_.delta_off() + cfg_.delta_width(),
                norm_mean_, norm_std_);
            deltas[k] = frame_pose(dblock, T);
        }
        // sequence-agent -> matrix-slot lookup (masking can make them differ)
        std::vector<int> slot_of(16, -1);
        for (int k = 0; k < clean.P; ++k) {
            if (clean.seq_agent[k] >= 0 && clean.seq_agent[k] < 16) {
                slot_of[clean.seq_agent[k]] = k;
            }
        }
        for (int k = 0; k < clean.P; ++k) {
            if (!clean.agent_present[k]) continue;
            const int p_seq = clean.seq_agent[k];
            for (int s = 0; s < cfg_.P_max - 1; ++s) {
                const double* row0 = clean.row(clean.token_at(0, k));
                if (row0[cfg_.presence_off() + s] == 0.0) continue;
                const int q_seq = s < p_seq ? s : s + 1;
                const int q = q_seq < 16 ? slot_of[q_seq] : -1;
                if (q < 0 || !clean.agent_present[q]) continue;

                const int c0 = cfg_.partner_off() + s * cfg_.omega * 9;
                Tensor pblock = denorm_cols(
                    nn::slice_cols(agent_rows[k], c0, c0 + cfg_.omega * 9), c0,
                    c0 + cfg_.omega * 9, norm_mean_, norm_std_);
                FramePose tp = frame_pose(pblock, T);

                Tensor Rcur = nn::slice_rows(tp.R, 1, T);
                Tensor tcur = nn::slice_rows(tp.t, 1, T);
                Tensor Rprev = nn::slice_rows(tp.R, 0, T - 1);
                Tensor tprev = nn::slice_rows(tp.t, 0, T - 1);
                Tensor Rdp = nn::slice_rows(deltas[k].R, 1, T);
                Tensor tdp = nn::slice_rows(deltas[k].t, 1, T);
                Tensor Rdq = nn::slice_rows(deltas[q].R, 1, T);
                Tensor tdq = nn::slice_rows(deltas[q].t, 1, T);

                // prop = inv(d_self) * prev * d_partner
                Tensor RdpT = nn::mat3_transpose_rows(Rdp);
                Tensor tinv = nn::neg(nn::mat3_apply_rows(RdpT, tdp));
                Tensor R1 = nn::mat3_mul_rows(RdpT, Rprev);
                Tensor t1 = nn::add(nn::mat3_apply_rows(RdpT, tprev), tinv);
                Tensor Rprop = nn::mat3_mul_rows(R1, Rdq);
                Tensor tprop = nn::add(nn::mat3_apply_rows(R1, tdq), t1);

                Tensor term =
                    nn::add(nn::sum_all(nn::geodesic_rows(Rcur, Rprop)),
                            nn::sum_all(nn::huber(tcur, tprop, cfg_.huber_delta)));
                lc_term = have_lc ? nn::add(lc_term, term) : term;
                have_lc = true;
            }
        }
    }

    Tensor z_w = nn::mul_scalar(z_term, cfg_.lambda0);
    Tensor p_w = nn::mul_scalar(partner_term, cfg_.lambda1);
    Tensor d_w = nn::mul_scalar(delta_term, cfg_.lambda2);
    Tensor l_w = nn::mul_scalar(lc_term, cfg_.lambda3);
    Tensor total = nn::add(nn::add(z_w, p_w), nn::add(d_w, l_w));
    if (parts) {
        parts->z = z_w.scalar();
        parts->partner = p_w.scalar();
        parts->delta = d_w.scalar();
        parts->consistency = l_w.scalar();
        parts->total = total.scalar();
    }
    return total;
}

DfotTrainResult train_dfot(DfotModel& model, const vq::VqvaeModel* vqvae,
                           const std::vector<data::MotionSequence>& train,
                           const std::vector<data::MotionSequence>& val,
                           const DfotTrainConfig& tcfg) {
    const DfotConfig& cfg = model.config();
    if (train.empty()) throw ConfigError("train_dfot: empty training set");

    const auto stats = compute_token_stats(train, vqvae, cfg);
    model.set_norm_stats(stats);

    std::map<std::string, TokenSequence> cache;
    auto tokens_for = [&](int pool_id, const std::vector<data::MotionSequence>& pool,
                          int idx, const std::vector<int>& perm,
                          unsigned keep_mask) -> const TokenSequence& {
        std::string key = std::to_string(pool_id) + ":" + std::to_string(idx) + "/";
        for (int v : perm) key += std::to_string(v);
        key += "/" + std::to_string(keep_mask);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        data::MotionSequence work = data::permute_agents(pool[idx], perm);
        std::vector<int> keep;
        for (int p = 0; p < work.P; ++p) {
            if (keep_mask & (1u << p)) keep.push_back(p);
        }
        if (static_cast<int>(keep.size()) < work.P) {
            work = data::mask_agents(work, keep);
        }
        return cache.emplace(key, assemble_tokens(work, vqvae, cfg, &stats))
            .first->second;
    };

    nn::AdamWConfig ocfg;
    ocfg.base_lr = tcfg.base_lr;
    ocfg.weight_decay = tcfg.weight_decay;
    ocfg.total_steps = tcfg.steps;
    nn::AdamW opt(ocfg);

    Rng rng(tcfg.seed);
    DfotTrainResult result;
    result.best_val_loss = 1e300;
    std::map<std::string, std::vector<double>> best_snapshot;

    auto identity_perm = [](int P) {
        std::vector<int> p(P);
        for (int i = 0; i < P; ++i) p[i] = i;
        return p;
    };

    auto eval_example = [&](const TokenSequence& toks, Rng& r, DfotLossParts* parts) {
        auto assignment = sample_assignment(toks.n_tokens(), toks.width, r);
        const auto noisy = perturb(toks, assignment);
        Tensor pred = model.forward(noisy, assignment.tau, toks.time_index,
                                    toks.agent_index, toks.valid);
        return model.loss_graph(pred, toks, parts);
    };

    auto eval_val = [&]() {
        Rng vr(0x5eedu);  // fixed stream keeps validation comparable
        double acc = 0;
        for (int i = 0; i < static_cast<int>(val.size()); ++i) {
            const auto& toks =
                tokens_for(1, val, i, identity_perm(val[i].P), (1u << val[i].P) - 1);
            DfotLossParts parts;
            eval_example(toks, vr, &parts);
            acc += parts.total;
        }
        return acc / static_cast<double>(val.size());
    };

    for (int step = 0; step < tcfg.steps; ++step) {
        Tensor batch_loss;
        double batch_total = 0;
        for (int b = 0; b < tcfg.batch_examples; ++b) {
            const int idx = static_cast<int>(rng.uniform_index(train.size()));
            const int P = train[idx].P;
            std::vector<int> perm = identity_perm(P);
            if (tcfg.shuffle_identities && P > 1) {
                for (int i = P - 1; i > 0; --i) {
                    const int j = static_cast<int>(rng.uniform_index(i + 1));
                    std::swap(perm[i], perm[j]);
                }
            }
            unsigned keep = (1u << P) - 1;
            if (P > 1 && rng.uniform() < tcfg.mask_prob) {
                const int n_keep = 1 + static_cast<int>(rng.uniform_index(P - 1));
                std::vector<int> order = identity_perm(P);
                for (int i = P - 1; i > 0; --i) {
                    const int j = static_cast<int>(rng.uniform_index(i + 1));
                    std::swap(order[i], order[j]);
                }
                keep = 0;
                for (int i = 0; i < n_keep; ++i) keep |= 1u << order[i];
            }
            const auto& toks = tokens_for(0, train, idx, perm, keep);
            DfotLossParts parts;
            Tensor loss = eval_example(toks, rng, &parts);
            batch_loss = b == 0 ? loss : nn::add(batch_loss, loss);
            batch_total += parts.total;
        }
        batch_total /= tcfg.batch_examples;
        batch_loss = nn::mul_scalar(batch_loss, 1.0 / tcfg.batch_examples);

        if (!std::isfinite(batch_total)) {
            throw NonFiniteLoss("train_dfot: non-finite loss at step " +
                                std::to_string(step));
        }
        if (step == 0) result.initial_loss = batch_total;
        nn::backward(batch_loss);
        opt.step(model.params());

        if (step % tcfg.log_every == 0 || step + 1 == tcfg.steps) {
            result.log.push_back({step, batch_total});
        }
        if (!val.empty() && (step % tcfg.val_every == 0 || step + 1 == tcfg.steps)) {
            const double v = eval_val();
            if (v < result.best_val_loss) {
                result.best_val_loss = v;
                result.best_val_step = step;
                best_snapshot.clear();
                for (const auto& [name, t] : model.params().all()) {
                    best_snapshot[name] = t.values();
                }
            }
        }
        result.final_loss = batch_total;
        result.steps_run = step + 1;
        if (tcfg.stop_at_fraction > 0 &&
            batch_total < tcfg.stop_at_fraction * result.initial_loss) {
            break;
        }
    }

    if (!best_snapshot.empty()) {
        for (const auto& [name, t] : model.params().all()) {
            Tensor tt = t;
            tt.raw_values() = best_snapshot.at(name);
        }
    }
    return result;
}

void save_dfot(const DfotModel& model, const std::string& path) {
    nn::save_checkpoint(path, "dfot", model.config().echo(), model.params());
}

DfotModel load_dfot(const std::string& path) {
    const auto ck = nn::load_checkpoint(path);
    if (ck.model_kind != "dfot") {
        throw ConfigError("load_dfot: checkpoint kind is " + ck.model_kind);
    }
    DfotModel model(DfotConfig::from_echo(ck.config), 0);
    nn::apply_checkpoint(model.params(), ck);
    return model;
}

}  // namespace magnet::dfot

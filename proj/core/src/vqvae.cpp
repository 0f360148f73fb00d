#include "magnet/vqvae.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "magnet/nn/tensor_geom.hpp"

namespace magnet::vq {

using nn::Tensor;

int VqvaeConfig::downsample_stages() const {
    int n = 0;
    int w = omega;
    while (w > 1) {
        if (w % 2 != 0) throw ConfigError("vqvae: omega must be a power of two");
        w /= 2;
        ++n;
    }
    return n;
}

void VqvaeConfig::validate() const {
    if (omega < 1) throw ConfigError("vqvae: omega must be >= 1");
    downsample_stages();
    if (K < 2) throw ConfigError("vqvae: codebook needs K >= 2");
    if (d_vq < 2) throw ConfigError("vqvae: d_vq too small");
    if (J != body::kNumJoints) throw ConfigError("vqvae: unsupported joint count");
}

std::vector<std::pair<std::string, std::string>> VqvaeConfig::echo() const {
    auto s = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    return {{"J", std::to_string(J)},
            {"omega", std::to_string(omega)},
            {"d_vq", std::to_string(d_vq)},
            {"K", std::to_string(K)},
            {"lambda_j", s(lambda_j)},
            {"lambda_r", s(lambda_r)},
            {"commit_beta", s(commit_beta)},
            {"huber_delta", s(huber_delta)}};
}

VqvaeConfig VqvaeConfig::from_echo(const std::map<std::string, std::string>& kv) {
    VqvaeConfig cfg;
    auto geti = [&](const char* k, int& out) {
        auto it = kv.find(k);
        if (it != kv.end()) out = std::stoi(it->second);
    };
    auto getd = [&](const char* k, double& out) {
        auto it = kv.find(k);
        if (it != kv.end()) out = std::stod(it->second);
    };
    geti("J", cfg.J);
    geti("omega", cfg.omega);
    geti("d_vq", cfg.d_vq);
    geti("K", cfg.K);
    getd("lambda_j", cfg.lambda_j);
    getd("lambda_r", cfg.lambda_r);
    getd("commit_beta", cfg.commit_beta);
    getd("huber_delta", cfg.huber_delta);
    cfg.validate();
    return cfg;
}

StreamFeatures stream_features(const data::MotionSequence& seq, int agent) {
    if (!seq.has_derived) {
        throw MissingDerivedTransforms("stream_features: run preprocess first");
    }
    StreamFeatures out;
    out.T = seq.T;
    const int xw = seq.J * 6 + 9;
    out.x.resize(static_cast<size_t>(seq.T) * xw);
    out.c.resize(static_cast<size_t>(seq.T) * 19);
    for (int t = 0; t < seq.T; ++t) {
        double* xr = out.x.data() + static_cast<size_t>(t) * xw;
        for (int j = 0; j < seq.J; ++j) {
            const auto& r = seq.theta_at(t, agent, j);
            std::copy(r.v.begin(), r.v.end(), xr + j * 6);
        }
        const auto ct = geom::encode_transform_9d(seq.can_to_root_at(t, agent));
        std::copy(ct.begin(), ct.end(), xr + seq.J * 6);

        double* cr = out.c.data() + static_cast<size_t>(t) * 19;
        std::copy(seq.beta[agent].beta.begin(), seq.beta[agent].beta.end(), cr);
        const auto dc = geom::encode_transform_9d(seq.delta_can_at(t, agent));
        std::copy(dc.begin(), dc.end(), cr + 10);
    }
    return out;
}

VqvaeModel::VqvaeModel(VqvaeConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.d_vq;
    const int stages = cfg_.downsample_stages();

    enc_in_ = nn::Conv1d::create(params_, "enc.in",
                                 cfg_.input_width() + cfg_.cond_width(), d, 3, 1, rng);
    for (int i = 0; i < stages; ++i) {
        enc_down_.push_back(nn::Conv1d::create(
            params_, "enc.down" + std::to_string(i), d, d, 4, 2, rng));
        enc_res_.push_back(nn::ResBlock1d::create(
            params_, "enc.res" + std::to_string(i), d, rng));
    }
    enc_out_ = nn::Conv1d::create(params_, "enc.out", d, d, 3, 1, rng);

    dec_in_ = nn::Conv1d::create(params_, "dec.in", d, d, 3, 1, rng);
    for (int i = 0; i < stages; ++i) {
        dec_up_.push_back(nn::Conv1d::create(
            params_, "dec.up" + std::to_string(i), d, d, 3, 1, rng));
        dec_res_.push_back(nn::ResBlock1d::create(
            params_, "dec.resup" + std::to_string(i), d, rng));
    }
    dec_cond_ = nn::Conv1d::create(params_, "dec.cond", d + cfg_.cond_width(), d, 3, 1, rng);
    dec_cond_res_ = nn::ResBlock1d::create(params_, "dec.condres", d, rng);
    dec_head_ = nn::Linear::create(params_, "dec.head", d, cfg_.input_width(), rng);

    codebook_ = params_.create("codebook", {cfg_.K, d}, rng,
                               1.0 / std::sqrt(static_cast<double>(d)));
    usage_count_.assign(cfg_.K, 0);
    last_used_.assign(cfg_.K, 0);
}

int VqvaeModel::pad_frames(std::vector<double>& rows, int width, int T, int omega) {
    const int rem = T % omega;
    if (rem == 0) return 0;
    const int pad = omega - rem;
    rows.resize(static_cast<size_t>(T + pad) * width);
    for (int i = 0; i < pad; ++i) {
        std::copy(rows.begin() + static_cast<size_t>(T - 1) * width,
                  rows.begin() + static_cast<size_t>(T) * width,
                  rows.begin() + static_cast<size_t>(T + i) * width);
    }
    return pad;
}

Tensor VqvaeModel::encode(const Tensor& x, const Tensor& c) const {
    if (x.shape()[0] != c.shape()[0]) throw ShapeMismatch("vqvae encode: T mismatch");
    if (x.shape()[0] % cfg_.omega != 0) {
        throw ShapeMismatch("vqvae encode: T must be a multiple of omega (pad first)");
    }
    Tensor h = nn::gelu(enc_in_.forward(nn::concat_cols({x, c})));
    for (size_t i = 0; i < enc_down_.size(); ++i) {
        h = nn::gelu(enc_down_[i].forward(h));
        h = enc_res_[i].forward(h);
    }
    return enc_out_.forward(h);
}

std::vector<int> VqvaeModel::quantize(const std::vector<double>& h_rows) const {
    const int d = cfg_.d_vq;
    if (h_rows.size() % d != 0) throw ShapeMismatch("quantize: bad row width");
    const int n = static_cast<int>(h_rows.size()) / d;
    const auto& cb = codebook_.values();
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) {
        const double* h = h_rows.data() + static_cast<size_t>(i) * d;
        double best = 1e300;
        int bi = 0;
        for (int k = 0; k < cfg_.K; ++k) {
            const double* e = cb.data() + static_cast<size_t>(k) * d;
            double dist = 0;
            for (int c = 0; c < d; ++c) {
                const double diff = h[c] - e[c];
                dist += diff * diff;
            }
            if (dist < best) {  // strict: ties keep the lowest index
                best = dist;
                bi = k;
            }
        }
        idx[i] = bi;
    }
    return idx;
}

Tensor VqvaeModel::decode(const Tensor& z, const Tensor& c) const {
    const int Tp = z.shape()[0];
    const int T = c.shape()[0];
    if (Tp * cfg_.omega != T) throw ShapeMismatch("vqvae decode: T'/T mismatch");
    Tensor h = nn::gelu(dec_in_.forward(z));
    for (size_t i = 0; i < dec_up_.size(); ++i) {
        h = nn::repeat_rows(h, 2);
        h = nn::gelu(dec_up_[i].forward(h));
        h = dec_res_[i].forward(h);
    }
    h = nn::gelu(dec_cond_.forward(nn::concat_cols({h, c})));
    h = dec_cond_res_.forward(h);
    return dec_head_.forward(h);
}

namespace {

struct StreamTargets {
    Tensor theta_R;  // [T*J, 9]
    Tensor ct_R;     // [T, 9]
    Tensor ct_t;     // [T, 3]
};

StreamTargets make_targets(const StreamFeatures& f, int J) {
    const int xw = J * 6 + 9;
    std::vector<double> thR(static_cast<size_t>(f.T) * J * 9);
    std::vector<double> ctR(static_cast<size_t>(f.T) * 9);
    std::vector<double> ctt(static_cast<size_t>(f.T) * 3);
    for (int t = 0; t < f.T; ++t) {
        const double* xr = f.x.data() + static_cast<size_t>(t) * xw;
        for (int j = 0; j < J; ++j) {
            geom::Rotation6D r;
            std::copy(xr + j * 6, xr + j * 6 + 6, r.v.begin());
            const geom::Mat3 R = geom::rot6d_to_matrix(r);
            double* out = thR.data() + (static_cast<size_t>(t) * J + j) * 9;
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) out[a * 3 + b] = R(a, b);
            }
        }
        geom::Rotation6D cr;
        std::copy(xr + J * 6, xr + J * 6 + 6, cr.v.begin());
        const geom::Mat3 R = geom::rot6d_to_matrix(cr);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                ctR[static_cast<size_t>(t) * 9 + a * 3 + b] = R(a, b);
            }
        }
        for (int k = 0; k < 3; ++k) ctt[static_cast<size_t>(t) * 3 + k] = xr[J * 6 + 6 + k];
    }
    StreamTargets tg;
    tg.theta_R = Tensor::from_values({f.T * J, 9}, std::move(thR));
    tg.ct_R = Tensor::from_values({f.T, 9}, std::move(ctR));
    tg.ct_t = Tensor::from_values({f.T, 3}, std::move(ctt));
    return tg;
}

}  // namespace

Tensor VqvaeModel::loss_graph(const std::vector<StreamFeatures>& batch,
                              VqvaeLoss* breakdown, std::int64_t usage_step,
                              FrozenQuant* frozen) {
    if (batch.empty()) throw ShapeMismatch("vqvae loss: empty batch");
    const int J = cfg_.J;
    const int xw = cfg_.input_width();
    const bool capture = frozen && !frozen->captured;
    const bool replay = frozen && frozen->captured;

    std::vector<Tensor> pred_theta, pred_ctR, pred_ctt;
    std::vector<Tensor> tgt_theta, tgt_ctR, tgt_ctt;
    std::vector<Tensor> cb_parts, cm_parts;

    int stream_i = 0;
    for (const auto& f : batch) {
        std::vector<double> xp = f.x;
        std::vector<double> cp = f.c;
        pad_frames(xp, xw, f.T, cfg_.omega);
        pad_frames(cp, cfg_.cond_width(), f.T, cfg_.omega);
        const int Tp = static_cast<int>(xp.size()) / xw;
        Tensor x = Tensor::from_values({Tp, xw}, std::move(xp));
        Tensor c = Tensor::from_values({Tp, cfg_.cond_width()}, std::move(cp));

        Tensor h = encode(x, c);
        std::vector<int> idx;
        if (replay) {
            idx = frozen->indices[stream_i];
        } else {
            idx = quantize(h.values());
        }
        if (usage_step >= 0) {
            for (int k : idx) {
                ++usage_count_[k];
                last_used_[k] = usage_step;
            }
        }
        Tensor e = nn::gather_rows(codebook_, idx);

        Tensor z_st, cb_h, cm_e;
        if (frozen) {
            if (capture) {
                frozen->indices.push_back(idx);
                std::vector<double> diff(e.values());
                for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= h.values()[i];
                frozen->e_minus_h.push_back(diff);
                frozen->h0.push_back(h.values());
                frozen->e0.push_back(e.values());
            }
            const int n = h.shape()[0];
            z_st = nn::add(h, Tensor::from_values({n, cfg_.d_vq},
                                                  frozen->e_minus_h[stream_i]));
            cb_h = Tensor::from_values({n, cfg_.d_vq}, frozen->h0[stream_i]);
            cm_e = Tensor::from_values({n, cfg_.d_vq}, frozen->e0[stream_i]);
        } else {
            z_st = nn::add(h, nn::stop_gradient(nn::sub(e, h)));
            cb_h = nn::stop_gradient(h);
            cm_e = nn::stop_gradient(e);
        }
        Tensor cbd = nn::sub(cb_h, e);
        cb_parts.push_back(nn::sum_all(nn::mul(cbd, cbd)));
        Tensor cmd = nn::sub(h, cm_e);
        cm_parts.push_back(nn::sum_all(nn::mul(cmd, cmd)));

        Tensor xhat = decode(z_st, c);
        if (Tp != f.T) xhat = nn::slice_rows(xhat, 0, f.T);

        pred_theta.push_back(nn::reshape(nn::slice_cols(xhat, 0, J * 6), {f.T * J, 6}));
        pred_ctR.push_back(nn::slice_cols(xhat, J * 6, J * 6 + 6));
        pred_ctt.push_back(nn::slice_cols(xhat, J * 6 + 6, xw));
        auto tg = make_targets(f, J);
        tgt_theta.push_back(tg.theta_R);
        tgt_ctR.push_back(tg.ct_R);
        tgt_ctt.push_back(tg.ct_t);
        ++stream_i;
    }
    if (capture) frozen->captured = true;

    const double invB = 1.0 / static_cast<double>(batch.size());

    Tensor theta_hat_R = nn::rot6d_to_matrix_rows(nn::concat_rows(pred_theta));
    Tensor rot_term = nn::mul_scalar(
        nn::sum_all(nn::geodesic_rows(theta_hat_R, nn::concat_rows(tgt_theta))),
        cfg_.lambda_j * invB);

    Tensor ct_hat_R = nn::rot6d_to_matrix_rows(nn::concat_rows(pred_ctR));
    Tensor ct_rot = nn::sum_all(nn::geodesic_rows(ct_hat_R, nn::concat_rows(tgt_ctR)));
    Tensor ct_trans = nn::sum_all(
        nn::huber(nn::concat_rows(pred_ctt), nn::concat_rows(tgt_ctt), cfg_.huber_delta));
    Tensor trans_term = nn::mul_scalar(nn::add(ct_rot, ct_trans), cfg_.lambda_r * invB);

    Tensor cb_acc = cb_parts[0];
    Tensor cm_acc = cm_parts[0];
    for (std::size_t i = 1; i < cb_parts.size(); ++i) {
        cb_acc = nn::add(cb_acc, cb_parts[i]);
        cm_acc = nn::add(cm_acc, cm_parts[i]);
    }
    Tensor cb_term = nn::mul_scalar(cb_acc, invB);
    Tensor cm_term = nn::mul_scalar(cm_acc, cfg_.commit_beta * invB);

    Tensor total = nn::add(nn::add(rot_term, trans_term), nn::add(cb_term, cm_term));
    if (breakdown) {
        breakdown->rotation = rot_term.scalar();
        breakdown->translation = trans_term.scalar();
        breakdown->codebook = cb_term.scalar();
        breakdown->commitment = cm_term.scalar();
        breakdown->total = total.scalar();
    }
    return total;
}

VqvaeModel::Encoded VqvaeModel::encode_quantize(const StreamFeatures& feats) const {
    std::vector<double> xp = feats.x;
    std::vector<double> cp = feats.c;
    Encoded out;
    out.pad = pad_frames(xp, cfg_.input_width(), feats.T, cfg_.omega);
    pad_frames(cp, cfg_.cond_width(), feats.T, cfg_.omega);
    const int Tp = feats.T + out.pad;
    Tensor x = Tensor::from_values({Tp, cfg_.input_width()}, std::move(xp));
    Tensor c = Tensor::from_values({Tp, cfg_.cond_width()}, std::move(cp));
    Tensor h = encode(x, c);
    out.T_prime = h.shape()[0];
    out.indices = quantize(h.values());
    out.z_rows.resize(static_cast<size_t>(out.T_prime) * cfg_.d_vq);
    const auto& cb = codebook_.values();
    for (int i = 0; i < out.T_prime; ++i) {
        std::copy(cb.begin() + static_cast<size_t>(out.indices[i]) * cfg_.d_vq,
                  cb.begin() + static_cast<size_t>(out.indices[i] + 1) * cfg_.d_vq,
                  out.z_rows.begin() + static_cast<size_t>(i) * cfg_.d_vq);
    }
    return out;
}

std::vector<double> VqvaeModel::reconstruct(const Encoded& enc,
                                            const StreamFeatures& feats) const {
    std::vector<double> cp = feats.c;
    pad_frames(cp, cfg_.cond_width(), feats.T, cfg_.omega);
    const int Tp = feats.T + enc.pad;
    Tensor z = Tensor::from_values({enc.T_prime, cfg_.d_vq}, enc.z_rows);
    Tensor c = Tensor::from_values({Tp, cfg_.cond_width()}, std::move(cp));
    Tensor xhat = decode(z, c);
    std::vector<double> rows(xhat.values().begin(),
                             xhat.values().begin() +
                                 static_cast<size_t>(feats.T) * cfg_.input_width());
    return rows;
}

int VqvaeModel::reseed_dead_entries(std::int64_t step, std::int64_t horizon,
                                    const std::vector<double>& pool_rows, Rng& rng) {
    const int d = cfg_.d_vq;
    if (pool_rows.size() < static_cast<size_t>(d)) return 0;
    const std::size_t pool_n = pool_rows.size() / d;
    auto& cb = codebook_.raw_values();
    int reseeded = 0;
    for (int k = 0; k < cfg_.K; ++k) {
        if (step - last_used_[k] >= horizon) {
            const std::size_t src = rng.uniform_index(pool_n);
            std::copy(pool_rows.begin() + src * d, pool_rows.begin() + (src + 1) * d,
                      cb.begin() + static_cast<size_t>(k) * d);
            last_used_[k] = step;
            ++reseeded;
        }
    }
    return reseeded;
}

VqvaeTrainResult train_vqvae(VqvaeModel& model,
                             const std::vector<data::MotionSequence>& train,
                             const std::vector<data::MotionSequence>& val,
                             const VqvaeTrainConfig& tcfg) {
    std::vector<StreamFeatures> streams;
    for (const auto& seq : train) {
        for (int p = 0; p < seq.P; ++p) {
            if (seq.presence[p]) streams.push_back(stream_features(seq, p));
        }
    }
    std::vector<StreamFeatures> val_streams;
    for (const auto& seq : val) {
        for (int p = 0; p < seq.P; ++p) {
            if (seq.presence[p]) val_streams.push_back(stream_features(seq, p));
        }
    }
    if (streams.empty()) throw ConfigError("train_vqvae: no training streams");

    nn::AdamWConfig ocfg;
    ocfg.base_lr = tcfg.base_lr;
    ocfg.weight_decay = tcfg.weight_decay;
    ocfg.total_steps = tcfg.steps;
    nn::AdamW opt(ocfg);

    Rng rng(tcfg.seed);
    VqvaeTrainResult result;
    result.best_val_loss = 1e300;
    std::map<std::string, std::vector<double>> best_snapshot;

    auto eval_val = [&]() {
        VqvaeLoss b;
        double acc = 0;
        for (const auto& s : val_streams) {
            model.loss_graph({s}, &b);
            acc += b.total;
        }
        return acc / static_cast<double>(val_streams.size());
    };

    for (int step = 0; step < tcfg.steps; ++step) {
        std::vector<StreamFeatures> batch;
        for (int i = 0; i < tcfg.batch_streams; ++i) {
            batch.push_back(streams[rng.uniform_index(streams.size())]);
        }
        VqvaeLoss b;
        Tensor loss = model.loss_graph(batch, &b, step);
        if (!std::isfinite(b.total)) {
            throw NonFiniteLoss("train_vqvae: non-finite loss at step " +
                                std::to_string(step));
        }
        if (step == 0) result.initial_loss = b.total;
        nn::backward(loss);
        opt.step(model.params());

        if (tcfg.dead_code_steps > 0 && step > 0 && step % tcfg.dead_code_steps == 0) {
            const auto& f = streams[rng.uniform_index(streams.size())];
            std::vector<double> xp = f.x, cp = f.c;
            VqvaeModel::pad_frames(xp, model.config().input_width(), f.T,
                                   model.config().omega);
            VqvaeModel::pad_frames(cp, model.config().cond_width(), f.T,
                                   model.config().omega);
            const int Tp = static_cast<int>(xp.size()) / model.config().input_width();
            Tensor h = model.encode(
                Tensor::from_values({Tp, model.config().input_width()}, std::move(xp)),
                Tensor::from_values({Tp, model.config().cond_width()}, std::move(cp)));
            result.dead_reseeds +=
                model.reseed_dead_entries(step, tcfg.dead_code_steps, h.values(), rng);
        }

        if (step % tcfg.log_every == 0 || step + 1 == tcfg.steps) {
            result.log.push_back({step, b.total});
        }
        if (!val_streams.empty() &&
            (step % tcfg.val_every == 0 || step + 1 == tcfg.steps)) {
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
        result.final_loss = b.total;
        result.steps_run = step + 1;
        if (tcfg.stop_at_fraction > 0 &&
            b.total < tcfg.stop_at_fraction * result.initial_loss) {
            break;
        }
    }

    if (!best_snapshot.empty()) {
        for (const auto& [name, t] : model.params().all()) {
            Tensor tt = t;
            tt.raw_values() = best_snapshot.at(name);
        }
    }

    std::set<int> used;
    for (const auto& s : streams) {
        const auto enc = model.encode_quantize(s);
        used.insert(enc.indices.begin(), enc.indices.end());
    }
    result.codebook_used = static_cast<int>(used.size());
    return result;
}

void save_vqvae(const VqvaeModel& model, const std::string& path) {
    nn::save_checkpoint(path, "vqvae", model.config().echo(), model.params());
}

VqvaeModel load_vqvae(const std::string& path) {
    const auto ck = nn::load_checkpoint(path);
    if (ck.model_kind != "vqvae") {
        throw ConfigError("load_vqvae: checkpoint kind is " + ck.model_kind);
    }
    VqvaeModel model(VqvaeConfig::from_echo(ck.config), 0);
    nn::apply_checkpoint(model.params(), ck);
    return model;
}

}  // namespace magnet::vq

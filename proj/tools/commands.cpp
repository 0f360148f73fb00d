#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "magnet/config.hpp"
#include "magnet/dfot.hpp"
#include "magnet/metrics.hpp"
#include "magnet/sampler.hpp"
#include "magnet/vqvae.hpp"

namespace magnet::cli {

namespace fs = std::filesystem;

namespace {

/// Usage failures exit 1 and must name the offending flag.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

cfg::RunConfig load_config(const CommonArgs& args) {
    cfg::RunConfig config = args.config_path.empty()
                                ? cfg::RunConfig::from_defaults()
                                : cfg::RunConfig::from_file(args.config_path);
    for (const auto& kv : args.overrides) {
        config.apply_line(kv, "--set");
    }
    return config;
}

void require_file(const std::string& path, const char* flag) {
    if (path.empty()) {
        throw UsageError(std::string(flag) + " is required");
    }
    if (!fs::exists(path)) {
        throw UsageError(std::string(flag) + ": file not found: " + path);
    }
}

std::vector<data::MotionSequence> load_dir(const std::string& dir,
                                           const char* flag) {
    if (dir.empty() || !fs::is_directory(dir)) {
        throw UsageError(std::string(flag) + ": not a directory: " + dir);
    }
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".motion") paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) {
        throw UsageError(std::string(flag) + ": no .motion files in " + dir);
    }
    std::vector<data::MotionSequence> seqs;
    for (const auto& p : paths) {
        auto seq = data::load_motion(p);
        seqs.push_back(seq.has_derived ? seq : data::preprocess(seq));
    }
    return seqs;
}

vq::VqvaeConfig vqvae_config_from(const cfg::RunConfig& c) {
    vq::VqvaeConfig v;
    v.d_vq = c.get_int("vqvae.d_vq");
    v.K = c.get_int("vqvae.K");
    v.omega = c.get_int("vqvae.omega");
    v.lambda_j = c.get_double("vqvae.lambda_j");
    v.lambda_r = c.get_double("vqvae.lambda_r");
    v.commit_beta = c.get_double("vqvae.commit_beta");
    v.huber_delta = c.get_double("vqvae.huber_delta");
    return v;
}

dfot::DfotConfig dfot_config_from(const cfg::RunConfig& c) {
    dfot::DfotConfig d;
    d.d = c.get_int("dfot.d");
    d.layers = c.get_int("dfot.layers");
    d.heads = c.get_int("dfot.heads");
    d.d_emb = c.get_int("dfot.d_emb");
    d.P_max = c.get_int("dfot.P_max");
    d.omega = c.get_int("vqvae.omega");
    d.d_vq = c.get_int("vqvae.d_vq");
    d.lambda0 = c.get_double("dfot.lambda0");
    d.lambda1 = c.get_double("dfot.lambda1");
    d.lambda2 = c.get_double("dfot.lambda2");
    d.lambda3 = c.get_double("dfot.lambda3");
    d.huber_delta = c.get_double("dfot.huber_delta");
    d.use_vqvae = c.get_bool("dfot.use_vqvae");
    d.use_partner = c.get_bool("dfot.use_partner");
    return d;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << text;
}

/// Top-down (x, z) trajectory plot, one polyline per agent.
std::string trajectory_svg(const data::MotionSequence& seq) {
    const int size = 480, margin = 30;
    double lo = 1e300, hi = -1e300;
    for (int t = 0; t < seq.T; ++t) {
        for (int p = 0; p < seq.P; ++p) {
            if (!seq.presence[p]) continue;
            lo = std::min({lo, seq.root_at(t, p).t.x(), seq.root_at(t, p).t.z()});
            hi = std::max({hi, seq.root_at(t, p).t.x(), seq.root_at(t, p).t.z()});
        }
    }
    if (hi <= lo) hi = lo + 1.0;
    const double scale = (size - 2.0 * margin) / (hi - lo);
    auto sx = [&](double x) { return margin + (x - lo) * scale; };
    const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};

    char buf[160];
    std::string svg =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
        std::to_string(size) + "\" height=\"" + std::to_string(size) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (int p = 0; p < seq.P; ++p) {
        if (!seq.presence[p]) continue;
        svg += "<polyline fill=\"none\" stroke=\"";
        svg += colors[p % 4];
        svg += "\" stroke-width=\"1.5\" points=\"";
        for (int t = 0; t < seq.T; ++t) {
            std::snprintf(buf, sizeof(buf), "%.1f,%.1f ",
                          sx(seq.root_at(t, p).t.x()), sx(seq.root_at(t, p).t.z()));
            svg += buf;
        }
        svg += "\"/>\n";
        std::snprintf(buf, sizeof(buf),
                      "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"4\" fill=\"%s\"/>\n",
                      sx(seq.root_at(0, p).t.x()), sx(seq.root_at(0, p).t.z()),
                      colors[p % 4]);
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

std::string prepare_out_dir(const std::string& out_dir) {
    fs::path path(out_dir);
    const char* root = std::getenv("MAGNET_RUN_DIR");
    if (root && *root && path.is_relative()) {
        path = fs::path(root) / path;
    }
    fs::create_directories(path);
    return path.string();
}

int cmd_gen_data(const GenDataArgs& args) {
    return run_guarded([&] {
        auto config = load_config(args);
        const auto dir = prepare_out_dir(args.out_dir);
        data::GeneratorParams gp;
        gp.mode = data::mode_from_string(args.mode);
        gp.P = args.P;
        gp.T = args.T;
        gp.fps = args.fps;
        gp.radius = config.get_double("data.radius");
        gp.lag = config.get_int("data.lag");
        for (int i = 0; i < args.num; ++i) {
            gp.seed = args.seed + i;
            auto seq = data::generate_interaction(gp);
            if (args.derived) seq = data::preprocess(seq);
            char name[64];
            std::snprintf(name, sizeof(name), "seq_%05llu.motion",
                          static_cast<unsigned long long>(gp.seed));
            data::save_motion(seq, (fs::path(dir) / name).string());
        }
        config.set("data.mode", args.mode);
        config.set("data.P", std::to_string(args.P));
        config.set("data.T", std::to_string(args.T));
        config.write((fs::path(dir) / "resolved.config").string());
        std::cout << "wrote " << args.num << " sequences to " << dir << "\n";
        return 0;
    });
}

int cmd_train_vqvae(const TrainVqvaeArgs& args) {
    return run_guarded([&] {
        auto config = load_config(args);
        const auto dir = prepare_out_dir(args.out_dir);
        auto seqs = load_dir(args.data_dir, "--data-dir");
        // deterministic split: last num_val sequences validate
        const int n_val = std::min<int>(config.get_int("data.num_val"),
                                        static_cast<int>(seqs.size()) - 1);
        std::vector<data::MotionSequence> train(seqs.begin(), seqs.end() - n_val);
        std::vector<data::MotionSequence> val(seqs.end() - n_val, seqs.end());
        if (val.empty()) val = train;

        vq::VqvaeModel model(vqvae_config_from(config),
                             config.get_int("vqvae.seed"));
        vq::VqvaeTrainConfig t;
        t.steps = config.get_int("vqvae.steps");
        t.batch_streams = config.get_int("vqvae.batch");
        t.base_lr = config.get_double("vqvae.lr");
        t.weight_decay = config.get_double("vqvae.weight_decay");
        t.seed = config.get_int("vqvae.seed");
        t.dead_code_steps = config.get_int("vqvae.dead_code_steps");
        t.stop_at_fraction = config.get_double("vqvae.stop_fraction");
        const auto result = vq::train_vqvae(model, train, val, t);

        vq::save_vqvae(model, (fs::path(dir) / "vqvae.ckpt").string());
        config.write((fs::path(dir) / "resolved.config").string());
        std::string log = "step total\n";
        for (const auto& e : result.log) {
            log += std::to_string(e.step) + " " + std::to_string(e.total) + "\n";
        }
        write_text((fs::path(dir) / "train_log.txt").string(), log);
        std::printf("vqvae: %d steps, loss %.6f -> %.6f, codebook used %d\n",
                    result.steps_run, result.initial_loss, result.final_loss,
                    result.codebook_used);
        return 0;
    });
}

int cmd_train_dfot(const TrainDfotArgs& args) {
    return run_guarded([&] {
        auto config = load_config(args);
        const auto dir = prepare_out_dir(args.out_dir);
        auto seqs = load_dir(args.data_dir, "--data-dir");
        const bool use_vqvae = config.get_bool("dfot.use_vqvae");
        std::unique_ptr<vq::VqvaeModel> vqvae;
        if (use_vqvae) {
            require_file(args.vqvae_path, "--vqvae");
            vqvae = std::make_unique<vq::VqvaeModel>(vq::load_vqvae(args.vqvae_path));
        }
        const int n_val = std::min<int>(config.get_int("data.num_val"),
                                        static_cast<int>(seqs.size()) - 1);
        std::vector<data::MotionSequence> train(seqs.begin(), seqs.end() - n_val);
        std::vector<data::MotionSequence> val(seqs.end() - n_val, seqs.end());
        if (val.empty()) val = train;
        if (config.get_bool("data.mirror_augment")) {
            const size_t n = train.size();
            for (size_t i = 0; i < n; ++i) {
                train.push_back(data::mirror_augment(train[i]));
            }
        }

        dfot::DfotModel model(dfot_config_from(config), config.get_int("dfot.seed"));
        dfot::DfotTrainConfig t;
        t.steps = config.get_int("dfot.steps");
        t.batch_examples = config.get_int("dfot.batch");
        t.base_lr = config.get_double("dfot.lr");
        t.weight_decay = config.get_double("dfot.weight_decay");
        t.seed = config.get_int("dfot.seed");
        t.mask_prob = config.get_double("dfot.mask_prob");
        t.shuffle_identities = config.get_bool("dfot.shuffle_identities");
        t.stop_at_fraction = config.get_double("dfot.stop_fraction");
        const auto result = dfot::train_dfot(model, vqvae.get(), train, val, t);

        dfot::save_dfot(model, (fs::path(dir) / "dfot.ckpt").string());
        config.write((fs::path(dir) / "resolved.config").string());
        std::string log = "step total\n";
        for (const auto& e : result.log) {
            log += std::to_string(e.step) + " " + std::to_string(e.total) + "\n";
        }
        write_text((fs::path(dir) / "train_log.txt").string(), log);
        std::printf("dfot: %d steps, loss %.6f -> %.6f\n", result.steps_run,
                    result.initial_loss, result.final_loss);
        return 0;
    });
}

namespace {

struct SampleSetup {
    cfg::RunConfig config;
    std::unique_ptr<vq::VqvaeModel> vqvae;
    std::unique_ptr<dfot::DfotModel> model;
    data::MotionSequence cond;
    data::NormStats stats;
    dfot::TokenSequence tokens;
};

SampleSetup prepare_sample(const SampleArgs& args) {
    SampleSetup s{load_config(args), nullptr, nullptr, {}, {}, {}};
    require_file(args.dfot_path, "--dfot");
    s.model = std::make_unique<dfot::DfotModel>(dfot::load_dfot(args.dfot_path));
    if (s.model->config().use_vqvae) {
        require_file(args.vqvae_path, "--vqvae");
        s.vqvae = std::make_unique<vq::VqvaeModel>(vq::load_vqvae(args.vqvae_path));
    }
    require_file(args.cond_path, "--cond");
    auto cond = data::load_motion(args.cond_path);
    s.cond = cond.has_derived ? cond : data::preprocess(cond);
    s.stats = s.model->norm_stats();
    s.tokens = dfot::assemble_tokens(s.cond, s.vqvae.get(), s.model->config(),
                                     &s.stats);
    return s;
}

/// Initial canonical frames for decoding: ground truth for agents with any
/// clamped history, partner-derived placement for a pure inpaint target.
std::vector<geom::RigidTransform> initial_frames(
    const data::MotionSequence& cond, const sampler::SamplingPlan& plan) {
    std::vector<geom::RigidTransform> out(plan.P);
    for (int a = 0; a < plan.P; ++a) {
        bool has_history = false;
        for (int i = 0; i < plan.T_prime; ++i) {
            if (plan.clamp_from[plan.tok(i, a)] >= 0) has_history = true;
        }
        if (has_history) {
            out[a] = cond.canonical_at(0, a);
        } else {
            int donor = -1;
            for (int b = 0; b < plan.P && donor < 0; ++b) {
                if (b != a && plan.clamped[plan.tok(0, b)]) donor = b;
            }
            out[a] = donor >= 0 ? sampler::initial_from_partner(cond, donor, a)
                                : cond.canonical_at(0, a);
        }
    }
    return out;
}

}  // namespace

int cmd_sample(const SampleArgs& args) {
    return run_guarded([&] {
        auto s = prepare_sample(args);
        const auto dir = prepare_out_dir(args.out_dir);
        const auto& mcfg = s.model->config();

        sampler::GuidanceSpec guidance;
        guidance.mode = sampler::guidance_from_string(args.guidance);
        guidance.w = s.config.get_double("sample.guidance_w");

        const int n_samples = args.samples;
        if (n_samples < 1) throw UsageError("--samples must be >= 1");

        const bool ultralong = args.strategy == "ultralong";
        sampler::SamplingPlan plan;
        if (!ultralong) {
            sampler::PlanParams pp;
            pp.steps = s.config.get_int("sample.steps");
            pp.target_agent = s.config.get_int("sample.target_agent");
            pp.history_len = s.config.get_int("sample.history_len");
            pp.keyframes = s.config.get_int_list("sample.keyframes");
            pp.tt_offset = args.tt_offset >= 0.0
                               ? args.tt_offset
                               : s.config.get_double("sample.tt_offset");
            pp.controller_agent = s.config.get_int("sample.controller");
            pp.controlled_agent = s.config.get_int("sample.controlled");
            plan = sampler::make_plan(sampler::strategy_from_string(args.strategy),
                                      s.tokens.P, s.tokens.T_prime, pp);
            if (args.dump_plan) {
                write_text((fs::path(dir) / "plan.txt").string(), plan.to_text());
            }
        }

        sampler::DecodeOptions dopts;
        dopts.snap_z = s.config.get_bool("sample.snap_z");

        for (int i = 0; i < n_samples; ++i) {
            const std::uint64_t seed = args.seed + i;
            data::MotionSequence motion;
            if (ultralong) {
                const auto rolled = sampler::rollout_ultralong(
                    *s.model, s.tokens, s.config.get_int("sample.window"),
                    s.config.get_int("sample.overlap"),
                    s.config.get_int("sample.total"), guidance, seed);
                std::vector<geom::RigidTransform> init;
                for (int a = 0; a < rolled.P; ++a) {
                    init.push_back(s.cond.canonical_at(0, a));
                }
                motion = sampler::decode_to_motion(rolled, s.vqvae.get(), mcfg,
                                                   s.stats, s.cond.beta, init,
                                                   dopts);
            } else {
                const auto res =
                    sampler::sample(*s.model, plan, s.tokens, guidance, seed);
                motion = sampler::decode_to_motion(res.tokens, s.vqvae.get(), mcfg,
                                                   s.stats, s.cond.beta,
                                                   initial_frames(s.cond, plan),
                                                   dopts);
            }
            char name[64];
            std::snprintf(name, sizeof(name), "sample_%03d.motion", i);
            data::save_motion(motion, (fs::path(dir) / name).string());
            if (args.plot) {
                std::snprintf(name, sizeof(name), "traj_%03d.svg", i);
                write_text((fs::path(dir) / name).string(), trajectory_svg(motion));
            }
        }
        s.config.write((fs::path(dir) / "resolved.config").string());
        std::cout << "wrote " << n_samples << " samples to " << dir << "\n";
        return 0;
    });
}

int cmd_evaluate(const EvaluateArgs& args) {
    return run_guarded([&] {
        auto config = load_config(args);
        const auto dir = prepare_out_dir(args.out_dir);
        require_file(args.ref_path, "--ref");
        auto ref = data::load_motion(args.ref_path);
        if (!ref.has_derived) ref = data::preprocess(ref);
        auto samples = load_dir(args.gen_dir, "--gen-dir");

        const int window = config.get_int("metrics.fd_window");
        const double contact = config.get_double("metrics.contact_height");

        metrics::EvalReport report;
        report.n_samples = static_cast<int>(samples.size());
        report.config_hash = config.hash();

        const auto gen_fd = metrics::motion_features(samples, window);
        const auto ref_fd = metrics::motion_features({ref}, window);
        report.values.emplace_back("fd", metrics::frechet_distance(gen_fd, ref_fd));
        if (samples.size() >= 2) {
            report.values.emplace_back("div", metrics::diversity({gen_fd}));
        } else {
            report.values.emplace_back("div", 0.0);
        }

        double mi = 0, fs_v = 0, ip = 0;
        int mi_n = 0;
        for (const auto& s : samples) {
            fs_v += metrics::foot_skating(s, contact);
            ip += metrics::interpenetration(s);
            for (int a = 0; a < s.P; ++a) {
                for (int b = a + 1; b < s.P; ++b) {
                    if (!s.presence[a] || !s.presence[b]) continue;
                    mi += metrics::motion_interaction(
                        metrics::pair_trajectories(s, a, b),
                        metrics::pair_trajectories(ref, a, b));
                    ++mi_n;
                }
            }
        }
        report.values.emplace_back("mi", mi_n ? mi / mi_n : 0.0);
        report.values.emplace_back("fs", fs_v / samples.size());
        report.values.emplace_back("ip", ip / samples.size());

        const auto errs = metrics::min_joint_errors(samples, ref);
        report.values.emplace_back("mpjpe", errs.mpjpe);
        report.values.emplace_back("mpjve", errs.mpjve);

        const auto text = metrics::report_text(report);
        write_text((fs::path(dir) / "report.txt").string(), text);
        config.write((fs::path(dir) / "resolved.config").string());
        std::cout << text;
        return 0;
    });
}

int cmd_bench(const BenchArgs& args) {
    return run_guarded([&] {
        SampleArgs sa;
        static_cast<CommonArgs&>(sa) = args;
        sa.strategy = args.strategy;
        sa.vqvae_path = args.vqvae_path;
        sa.dfot_path = args.dfot_path;
        sa.cond_path = args.cond_path;
        auto s = prepare_sample(sa);
        const auto dir = prepare_out_dir(args.out_dir);

        const bool ultralong = args.strategy == "ultralong";
        sampler::SamplingPlan plan;
        sampler::PlanParams pp;
        pp.steps = s.config.get_int("sample.steps");
        pp.target_agent = s.config.get_int("sample.target_agent");
        pp.history_len = s.config.get_int("sample.history_len");
        pp.keyframes = s.config.get_int_list("sample.keyframes");
        pp.tt_offset = s.config.get_double("sample.tt_offset");
        pp.controller_agent = s.config.get_int("sample.controller");
        pp.controlled_agent = s.config.get_int("sample.controlled");
        if (!ultralong) {
            plan = sampler::make_plan(sampler::strategy_from_string(args.strategy),
                                      s.tokens.P, s.tokens.T_prime, pp);
        }

        const int omega = s.model->config().omega;
        auto generated_frames = [&]() -> double {
            if (ultralong) return s.config.get_int("sample.total") * omega;
            std::vector<bool> step_generated(plan.T_prime, false);
            for (int i = 0; i < plan.T_prime; ++i) {
                for (int a = 0; a < plan.P; ++a) {
                    if (plan.clamp_from[plan.tok(i, a)] < 0 &&
                        !plan.excluded[plan.tok(i, a)]) {
                        step_generated[i] = true;
                    }
                }
            }
            int n = 0;
            for (bool g : step_generated) n += g;
            return static_cast<double>(n) * omega;
        };

        auto run_once = [&](std::uint64_t seed) {
            if (ultralong) {
                sampler::rollout_ultralong(*s.model, s.tokens,
                                           s.config.get_int("sample.window"),
                                           s.config.get_int("sample.overlap"),
                                           s.config.get_int("sample.total"), {},
                                           seed);
            } else {
                sampler::sample(*s.model, plan, s.tokens, {}, seed);
            }
        };

        run_once(args.seed);  // warmup
        const auto start = std::chrono::steady_clock::now();
        for (int r = 0; r < args.reps; ++r) run_once(args.seed + 1 + r);
        const auto stop = std::chrono::steady_clock::now();
        const double seconds =
            std::chrono::duration<double>(stop - start).count() / args.reps;
        const double fps = generated_frames() / seconds;

        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "strategy %s\nframes_per_run %.0f\nseconds_per_run %.4f\n"
                      "fps %.2f\nconfig_hash %s\n",
                      args.strategy.c_str(), generated_frames(), seconds, fps,
                      s.config.hash().c_str());
        write_text((fs::path(dir) / "bench.txt").string(), buf);
        std::cout << buf;
        return fps > 0 ? 0 : 2;
    });
}

}  // namespace magnet::cli

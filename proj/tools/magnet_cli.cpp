#include <CLI11.hpp>

#include "commands.hpp"

namespace {

void add_common(CLI::App* cmd, magnet::cli::CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (key=value)");
    cmd->add_option("--set", args.overrides, "override config entries, key=value");
    cmd->add_option("--out-dir", args.out_dir,
                    "output directory (relative paths resolve under MAGNET_RUN_DIR)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-agent motion generation pipeline"};
    app.require_subcommand(1);

    magnet::cli::GenDataArgs gen;
    auto* cmd_gen = app.add_subcommand("gen-data", "generate synthetic interaction clips");
    add_common(cmd_gen, gen);
    cmd_gen->add_option("--mode", gen.mode, "orbit|mirror|approach_retreat|ring");
    cmd_gen->add_option("--num", gen.num, "number of sequences");
    cmd_gen->add_option("--P", gen.P, "agents per sequence");
    cmd_gen->add_option("--T", gen.T, "frames per sequence");
    cmd_gen->add_option("--fps", gen.fps, "capture rate");
    cmd_gen->add_option("--seed", gen.seed, "base seed");
    bool raw = false;
    cmd_gen->add_flag("--raw", raw, "skip preprocessing (raw capture only)");

    magnet::cli::TrainVqvaeArgs tv;
    auto* cmd_tv = app.add_subcommand("train-vqvae", "train the pose tokenizer");
    add_common(cmd_tv, tv);
    cmd_tv->add_option("--data-dir", tv.data_dir, "directory of .motion files");

    magnet::cli::TrainDfotArgs td;
    auto* cmd_td = app.add_subcommand("train-dfot", "train the denoising transformer");
    add_common(cmd_td, td);
    cmd_td->add_option("--data-dir", td.data_dir, "directory of .motion files");
    cmd_td->add_option("--vqvae", td.vqvae_path, "tokenizer checkpoint");

    magnet::cli::SampleArgs sa;
    auto* cmd_sa = app.add_subcommand("sample", "generate motion with a trained model");
    add_common(cmd_sa, sa);
    cmd_sa->add_option(
        "--strategy", sa.strategy,
        "inpaint|predict|joint|agentic-sync|agentic-async|inbetween|control|ultralong");
    cmd_sa->add_option("--guidance", sa.guidance, "none|hg|shg|phg");
    cmd_sa->add_option("--tt-offset", sa.tt_offset, "turn-taking offset in [0,1]");
    cmd_sa->add_option("--seed", sa.seed, "sampling seed");
    cmd_sa->add_option("--samples", sa.samples, "number of samples");
    cmd_sa->add_option("--vqvae", sa.vqvae_path, "tokenizer checkpoint");
    cmd_sa->add_option("--dfot", sa.dfot_path, "denoiser checkpoint");
    cmd_sa->add_option("--cond", sa.cond_path, "conditioning .motion file");
    cmd_sa->add_flag("--plot", sa.plot, "write top-down trajectory SVGs");
    cmd_sa->add_flag("--dump-plan", sa.dump_plan, "write the schedule matrix");

    magnet::cli::EvaluateArgs ev;
    auto* cmd_ev = app.add_subcommand("evaluate", "score samples against a reference");
    add_common(cmd_ev, ev);
    cmd_ev->add_option("--gen-dir", ev.gen_dir, "directory of generated samples");
    cmd_ev->add_option("--ref", ev.ref_path, "ground-truth .motion file");

    magnet::cli::BenchArgs be;
    auto* cmd_be = app.add_subcommand("bench", "measure generation throughput");
    add_common(cmd_be, be);
    cmd_be->add_option("--strategy", be.strategy, "sampling strategy to time");
    cmd_be->add_option("--vqvae", be.vqvae_path, "tokenizer checkpoint");
    cmd_be->add_option("--dfot", be.dfot_path, "denoiser checkpoint");
    cmd_be->add_option("--cond", be.cond_path, "conditioning .motion file");
    cmd_be->add_option("--seed", be.seed, "sampling seed");
    cmd_be->add_option("--reps", be.reps, "timed repetitions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    gen.derived = !raw;
    if (cmd_gen->parsed()) return magnet::cli::cmd_gen_data(gen);
    if (cmd_tv->parsed()) return magnet::cli::cmd_train_vqvae(tv);
    if (cmd_td->parsed()) return magnet::cli::cmd_train_dfot(td);
    if (cmd_sa->parsed()) return magnet::cli::cmd_sample(sa);
    if (cmd_ev->parsed()) return magnet::cli::cmd_evaluate(ev);
    if (cmd_be->parsed()) return magnet::cli::cmd_bench(be);
    return 1;
}

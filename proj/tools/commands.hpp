#pragma once

#include <string>
#include <vector>

namespace magnet::cli {

struct CommonArgs {
    std::string config_path;               // optional config file
    std::vector<std::string> overrides;    // key=value pairs
    std::string out_dir = "run";
};

struct GenDataArgs : CommonArgs {
    std::string mode = "orbit";
    int num = 4;
    int P = 2;
    int T = 64;
    double fps = 30.0;
    std::uint64_t seed = 0;
    bool derived = true;
};

struct TrainVqvaeArgs : CommonArgs {
    std::string data_dir;
};

struct TrainDfotArgs : CommonArgs {
    std::string data_dir;
    std::string vqvae_path;
};

struct SampleArgs : CommonArgs {
    std::string strategy = "inpaint";
    std::string guidance = "none";
    double tt_offset = -1.0;  // <0: take from config
    std::uint64_t seed = 0;
    int samples = 1;
    std::string vqvae_path;
    std::string dfot_path;
    std::string cond_path;
    bool plot = false;
    bool dump_plan = false;
};

struct EvaluateArgs : CommonArgs {
    std::string gen_dir;
    std::string ref_path;
};

struct BenchArgs : CommonArgs {
    std::string strategy = "joint";
    std::string vqvae_path;
    std::string dfot_path;
    std::string cond_path;
    std::uint64_t seed = 0;
    int reps = 3;
};

// Each returns a process exit code: 0 ok, 1 usage error, 2 runtime failure.
int cmd_gen_data(const GenDataArgs& args);
int cmd_train_vqvae(const TrainVqvaeArgs& args);
int cmd_train_dfot(const TrainDfotArgs& args);
int cmd_sample(const SampleArgs& args);
int cmd_evaluate(const EvaluateArgs& args);
int cmd_bench(const BenchArgs& args);

/// Resolve the output directory against MAGNET_RUN_DIR and create it.
std::string prepare_out_dir(const std::string& out_dir);

}  // namespace magnet::cli

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "magnet/dataset.hpp"
#include "magnet/nn/checkpoint.hpp"
#include "magnet/nn/layers.hpp"
#include "magnet/nn/optim.hpp"

namespace magnet::vq {

struct VqvaeConfig {
    int J = body::kNumJoints;
    int omega = 4;  // temporal stride; power of two
    int d_vq = 32;
    int K = 64;
    double lambda_j = 1.0;
    double lambda_r = 1.0;
    double commit_beta = 0.25;
    double huber_delta = 1.0;

    int input_width() const { return J * 6 + 9; }  // theta + can_to_root 9D
    int cond_width() const { return 19; }          // beta + delta_can 9D
    int downsample_stages() const;
    void validate() const;

    std::vector<std::pair<std::string, std::string>> echo() const;
    static VqvaeConfig from_echo(const std::map<std::string, std::string>& kv);
};

/// Per-agent frame-rate features: x rows [T, J*6+9], condition rows [T, 19].
struct StreamFeatures {
    int T = 0;
    std::vector<double> x;
    std::vector<double> c;
};

StreamFeatures stream_features(const data::MotionSequence& seq, int agent);

struct VqvaeLoss {
    double total = 0;
    double rotation = 0;
    double translation = 0;
    double codebook = 0;
    double commitment = 0;
};

/// Conditional VQ-VAE over single-agent pose streams with stride omega.
class VqvaeModel {
  public:
    VqvaeModel(VqvaeConfig cfg, std::uint64_t seed);

    const VqvaeConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    /// Repeat-last-frame padding up to a multiple of omega; returns pad count.
    static int pad_frames(std::vector<double>& rows, int width, int T, int omega);

    /// Encoder embeddings H: [ceil(T/omega), d_vq].
    nn::Tensor encode(const nn::Tensor& x, const nn::Tensor& c) const;

    /// Nearest codebook entry per row of h (ties to the lowest index).
    std::vector<int> quantize(const std::vector<double>& h_rows) const;

    /// Decoder: z at token rate, conditions at frame rate -> [T, J*6+9].
    nn::Tensor decode(const nn::Tensor& z, const nn::Tensor& c) const;

    const nn::Tensor& codebook() const { return codebook_; }

    /// Snapshot of the quantizer substitution, for finite-difference
    /// oracles: the straight-through estimator is only FD-checkable when the
    /// stop-gradient contents are held fixed at the base point.
    struct FrozenQuant {
        bool captured = false;
        std::vector<std::vector<int>> indices;
        std::vector<std::vector<double>> e_minus_h;
        std::vector<std::vector<double>> h0;
        std::vector<std::vector<double>> e0;
    };

    /// Full training-path loss for a batch of streams (straight-through
    /// estimator, codebook + commitment terms). Returns the graph scalar and
    /// fills the numeric breakdown. With `frozen` given, the substitution is
    /// captured on the first call and reused afterwards.
    nn::Tensor loss_graph(const std::vector<StreamFeatures>& batch,
                          VqvaeLoss* breakdown,
                          std::int64_t usage_step = -1,
                          FrozenQuant* frozen = nullptr);

    /// Frozen-model token path: embeddings -> indices -> quantized rows.
    struct Encoded {
        int T_prime = 0;
        int pad = 0;
        std::vector<int> indices;
        std::vector<double> z_rows;  // [T_prime, d_vq]
    };
    Encoded encode_quantize(const StreamFeatures& feats) const;

    /// Reconstruction from quantized rows + conditions (frame-rate), frames
    /// trimmed back to T.
    std::vector<double> reconstruct(const Encoded& enc,
                                    const StreamFeatures& feats) const;

    // codebook maintenance (training only)
    std::vector<std::int64_t>& usage_count() { return usage_count_; }
    std::vector<std::int64_t>& last_used() { return last_used_; }
    int reseed_dead_entries(std::int64_t step, std::int64_t horizon,
                            const std::vector<double>& pool_rows, Rng& rng);

  private:
    VqvaeConfig cfg_;
    nn::ParamStore params_;
    std::vector<nn::Conv1d> enc_down_;
    std::vector<nn::ResBlock1d> enc_res_;
    nn::Conv1d enc_in_, enc_out_;
    std::vector<nn::Conv1d> dec_up_;
    std::vector<nn::ResBlock1d> dec_res_;
    nn::Conv1d dec_in_, dec_cond_;
    nn::ResBlock1d dec_cond_res_;
    nn::Linear dec_head_;
    nn::Tensor codebook_;  // [K, d_vq]
    mutable std::vector<std::int64_t> usage_count_;
    std::vector<std::int64_t> last_used_;
};

struct VqvaeTrainConfig {
    int steps = 5000;
    int batch_streams = 4;
    double base_lr = 2e-4;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    int log_every = 50;
    int val_every = 250;
    std::int64_t dead_code_steps = 2000;
    double stop_at_fraction = 0.0;  // stop early once total < frac * initial
};

struct TrainLogEntry {
    int step = 0;
    double total = 0;
};

struct VqvaeTrainResult {
    std::vector<TrainLogEntry> log;
    double initial_loss = 0;
    double final_loss = 0;
    double best_val_loss = 0;
    int best_val_step = 0;
    int steps_run = 0;
    int dead_reseeds = 0;
    int codebook_used = 0;  // distinct entries hit in the last epoch sweep
};

/// AdamW + cosine decay; retains the best-validation parameter snapshot.
VqvaeTrainResult train_vqvae(VqvaeModel& model,
                             const std::vector<data::MotionSequence>& train,
                             const std::vector<data::MotionSequence>& val,
                             const VqvaeTrainConfig& tcfg);

void save_vqvae(const VqvaeModel& model, const std::string& path);
VqvaeModel load_vqvae(const std::string& path);

}  // namespace magnet::vq

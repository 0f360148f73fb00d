#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "magnet/dataset.hpp"
#include "magnet/nn/checkpoint.hpp"
#include "magnet/nn/layers.hpp"
#include "magnet/nn/optim.hpp"
#include "magnet/vqvae.hpp"

namespace magnet::dfot {

struct DfotConfig {
    int d = 64;
    int layers = 2;
    int heads = 4;
    int d_emb = 32;
    int P_max = 4;
    int omega = 4;
    int d_vq = 32;
    int J = body::kNumJoints;
    double lambda0 = 1.0;  // latent pose
    double lambda1 = 1.0;  // self->partner transforms
    double lambda2 = 1.0;  // canonical deltas
    double lambda3 = 1.0;  // interpersonal consistency
    double huber_delta = 1.0;
    bool use_vqvae = true;    // false: raw pose features in the z block
    bool use_partner = true;  // false: partner block zeroed and unsupervised

    int z_width() const { return use_vqvae ? d_vq : omega * (J * 6 + 9); }
    int partner_width() const { return (P_max - 1) * omega * 9; }
    int delta_width() const { return omega * 9; }
    int token_width() const {
        return z_width() + partner_width() + delta_width() + (P_max - 1);
    }
    int z_off() const { return 0; }
    int partner_off() const { return z_width(); }
    int delta_off() const { return z_width() + partner_width(); }
    int presence_off() const { return delta_off() + delta_width(); }

    void validate() const;
    std::vector<std::pair<std::string, std::string>> echo() const;
    static DfotConfig from_echo(const std::map<std::string, std::string>& kv);
};

/// Interleaved multi-agent token matrix: token (time i, agent slot k) lives
/// at row i * P + k; agents at the same time step share a RoPE position.
struct TokenSequence {
    int P = 0;        // agent slots present in the matrix
    int T_prime = 0;  // token time steps
    int width = 0;
    std::vector<double> values;        // [P*T', width]
    std::vector<int> agent_index;      // per token, identity embedding id
    std::vector<int> time_index;       // per token
    std::vector<std::uint8_t> valid;   // per token
    std::vector<std::uint8_t> agent_present;  // per matrix slot
    std::vector<int> seq_agent;        // matrix slot -> sequence agent index

    int n_tokens() const { return P * T_prime; }
    int token_at(int i, int k) const { return i * P + k; }
    double* row(int tok) { return values.data() + static_cast<size_t>(tok) * width; }
    const double* row(int tok) const {
        return values.data() + static_cast<size_t>(tok) * width;
    }
};

/// Tokens from a preprocessed sequence. Masked agents are excluded unless
/// `include_absent` asks for ghost rows (zero content, valid = 0). Applies
/// z-score stats when given (presence-bit channels always pass through raw).
TokenSequence assemble_tokens(const data::MotionSequence& seq,
                              const vq::VqvaeModel* vqvae,
                              const DfotConfig& cfg,
                              const data::NormStats* stats = nullptr,
                              bool include_absent = false);

/// Token-space statistics over clean assembled tokens of a corpus; presence
/// channels get identity stats.
data::NormStats compute_token_stats(
    const std::vector<data::MotionSequence>& seqs, const vq::VqvaeModel* vqvae,
    const DfotConfig& cfg);

/// Cosine schedule; exact 0 at tau = 1. Throws OutOfRange outside [0,1].
double alpha_bar(double tau);

struct NoiseAssignment {
    std::vector<double> tau;      // per token
    std::vector<double> epsilon;  // per token row
};

NoiseAssignment sample_assignment(int n_tokens, int width, Rng& rng);

/// Forward process: sqrt(a) m + sqrt(1-a) eps per token; tokens flagged in
/// `clamp` are copied through exactly.
std::vector<double> perturb(const TokenSequence& tokens,
                            const NoiseAssignment& assignment,
                            const std::vector<std::uint8_t>* clamp = nullptr);

struct DfotLossParts {
    double total = 0;
    double z = 0;
    double partner = 0;
    double delta = 0;
    double consistency = 0;
};

class DfotModel {
  public:
    DfotModel(DfotConfig cfg, std::uint64_t seed);

    const DfotConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    void set_norm_stats(const data::NormStats& stats);
    data::NormStats norm_stats() const;

    /// Denoiser: noisy token rows + per-token noise levels -> predicted
    /// clean rows (graph tensor [N, D]).
    nn::Tensor forward(const std::vector<double>& noisy_rows,
                       const std::vector<double>& tau,
                       const std::vector<int>& time_index,
                       const std::vector<int>& agent_index,
                       const std::vector<std::uint8_t>& valid) const;

    /// Decomposed loss against the clean sequence. Components are reported
    /// lambda-weighted, so total is their exact sum.
    nn::Tensor loss_graph(const nn::Tensor& pred, const TokenSequence& clean,
                          DfotLossParts* parts) const;

  private:
    DfotConfig cfg_;
    nn::ParamStore params_;
    nn::Linear emb1_, emb2_, emb3_;
    nn::LayerNorm ln1_, ln2_, ln3_;
    nn::Tensor psi_;  // [P_max, d]
    std::vector<nn::TransformerBlock> blocks_;
    nn::Linear head_;
    nn::Tensor norm_mean_, norm_std_;  // token-space stats, checkpointed
};

struct DfotTrainConfig {
    int steps = 10000;
    int batch_examples = 2;
    double base_lr = 2e-4;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    double mask_prob = 0.25;     // chance to mask a random strict subset
    bool shuffle_identities = true;
    int log_every = 100;
    int val_every = 500;
    double stop_at_fraction = 0.0;
};

struct DfotTrainResult {
    std::vector<vq::TrainLogEntry> log;
    double initial_loss = 0;
    double final_loss = 0;
    double best_val_loss = 0;
    int best_val_step = 0;
    int steps_run = 0;
};

DfotTrainResult train_dfot(DfotModel& model, const vq::VqvaeModel* vqvae,
                           const std::vector<data::MotionSequence>& train,
                           const std::vector<data::MotionSequence>& val,
                           const DfotTrainConfig& tcfg);

void save_dfot(const DfotModel& model, const std::string& path);
DfotModel load_dfot(const std::string& path);

}  // namespace magnet::dfot

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "magnet/dfot.hpp"

namespace magnet::sampler {

enum class Strategy {
    kInpaint,
    kPredict,
    kJoint,
    kAgenticSync,
    kAgenticAsync,
    kInbetween,
    kControl,
};

Strategy strategy_from_string(const std::string& name);
std::string strategy_to_string(Strategy s);

struct GuidanceSpec {
    enum class Mode { kNone, kHg, kShg, kPhg };
    Mode mode = Mode::kNone;
    double w = 1.0;
};

GuidanceSpec::Mode guidance_from_string(const std::string& name);

struct PlanParams {
    int steps = 30;              // denoise iterations per token (S_d)
    int target_agent = 0;        // inpaint / predict (matrix slot)
    int history_len = 0;         // token steps of clamped shared history
    std::vector<int> keyframes;  // inbetween, token-step indices
    double tt_offset = 0.0;      // agentic-async fraction in [0, 1]
    int controller_agent = 0;    // control
    int controlled_agent = 1;
};

/// Per-(agent, token-step) noise-level trajectories over the outer
/// iterations, plus clamp markers. Token (step i, agent a) lives at index
/// i * P + a, matching TokenSequence rows.
struct SamplingPlan {
    Strategy strategy = Strategy::kJoint;
    int P = 0;
    int T_prime = 0;
    int steps_per_token = 30;
    int n_iters = 0;
    std::vector<std::vector<double>> schedule;  // [P*T'][n_iters + 1]
    std::vector<std::uint8_t> clamped;          // clean conditioning from start
    std::vector<int> clamp_from;  // iteration at which the token becomes clean
                                  // conditioning; -1 for generated tokens
    std::vector<std::uint8_t> excluded;  // not part of the sequence at all

    int tok(int i, int a) const { return i * P + a; }
    /// Monotone non-increasing trajectories, terminal zero, clamped rows
    /// pinned at zero. Throws InvalidStrategyParams on violation.
    void validate() const;
    std::string to_text() const;
};

SamplingPlan make_plan(Strategy strategy, int P_active, int T_prime,
                       const PlanParams& params);

/// One deterministic DDIM update (x0-parameterization, eta = 0). tau_next = 0
/// substitutes alpha = 1 exactly so the final step returns pred bit-for-bit.
void ddim_step(std::vector<double>& cur, const double* pred, int width,
               double tau_cur, double tau_next);

struct SampleResult {
    dfot::TokenSequence tokens;    // final state, all generated tau = 0
    std::vector<double> final_tau; // per token
    std::vector<double> last_pred; // model prediction at the last iteration
    int forwards = 0;              // denoiser invocations (guidance included)
};

/// Run a sampling plan. `conditioning` supplies the token layout and the
/// clean rows for every clamped position (normalized space). Generated
/// tokens start from seeded Gaussian draws.
SampleResult sample(const dfot::DfotModel& model, const SamplingPlan& plan,
                    const dfot::TokenSequence& conditioning,
                    const GuidanceSpec& guidance, std::uint64_t seed);

/// Windowed autoregressive rollout: repeatedly clamp the last `overlap`
/// generated token steps and denoise the next window - overlap steps jointly
/// until `total_new` steps exist. Output length = seed steps + total_new.
dfot::TokenSequence rollout_ultralong(const dfot::DfotModel& model,
                                      const dfot::TokenSequence& seed_tokens,
                                      int window, int overlap, int total_new,
                                      const GuidanceSpec& guidance,
                                      std::uint64_t seed);

struct DecodeOptions {
    bool snap_z = true;  // snap predicted latents to the nearest codebook entry
};

struct DecodeInfo {
    int snapped = 0;
    double mean_snap_distance = 0.0;
};

/// Tokens -> motion: denormalize, snap latents, decode through the VQ-VAE
/// with predicted canonical deltas as conditioning, integrate deltas from
/// the supplied initial canonical frames, and rebuild world roots. The
/// result carries freshly derived relative transforms.
data::MotionSequence decode_to_motion(
    const dfot::TokenSequence& tokens, const vq::VqvaeModel* vqvae,
    const dfot::DfotConfig& cfg, const data::NormStats& stats,
    const std::vector<body::BodyShape>& betas,
    const std::vector<geom::RigidTransform>& initial_canonical,
    const DecodeOptions& opts = {}, DecodeInfo* info = nullptr);

/// Start placement for a generated agent derived from conditioning-side
/// information only: the conditioning agent's first-frame canonical composed
/// with its first-frame partner transform toward the target.
geom::RigidTransform initial_from_partner(const data::MotionSequence& seq,
                                          int cond_agent, int target_agent);

}  // namespace magnet::sampler

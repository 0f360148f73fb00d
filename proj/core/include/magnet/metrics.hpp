#pragma once

#include <string>
#include <utility>
#include <vector>

#include "magnet/dataset.hpp"

namespace magnet::metrics {

/// Rows of per-sample feature vectors.
struct FeatureSet {
    int dim = 0;
    std::vector<double> rows;

    int size() const { return dim == 0 ? 0 : static_cast<int>(rows.size()) / dim; }
    void add_row(const std::vector<double>& row);
    const double* row(int i) const { return rows.data() + static_cast<size_t>(i) * dim; }
};

/// Frechet distance between Gaussian fits of the two sets:
/// |mu_g - mu_r|^2 + tr(Sg + Sr - 2 (Sg Sr)^{1/2}), matrix square roots via
/// symmetric eigendecomposition with eigenvalues floored at zero.
double frechet_distance(const FeatureSet& gen, const FeatureSet& real);

/// Mean across-sample variance (n-1 denominator) per feature dimension,
/// averaged over conditions.
double diversity(const std::vector<FeatureSet>& per_condition);

/// Joint-position trajectories of one agent pair: channel (j, axis) over T
/// frames, stored [T][J*3].
struct PairTrajectories {
    int T = 0;
    int channels = 0;
    std::vector<double> a;
    std::vector<double> b;
};

PairTrajectories pair_trajectories(const data::MotionSequence& seq, int agent_a,
                                   int agent_b);

/// Mean |rho_real - rho_gen| of per-channel Pearson correlations between the
/// two agents' joint trajectories. Channels without variance on either side
/// are skipped (count reported через *skipped).
double motion_interaction(const PairTrajectories& gen,
                          const PairTrajectories& real, int* skipped = nullptr);

/// Mean horizontal foot displacement per frame over ground-contact frames
/// (foot height below `contact_height`); zero when no contact occurs.
double foot_skating(const data::MotionSequence& seq,
                    double contact_height = 0.05);

/// Mean over frames of summed capsule penetration across the two capsule
/// streams (one entry per frame).
double interpenetration_frames(
    const std::vector<std::vector<body::Capsule>>& a,
    const std::vector<std::vector<body::Capsule>>& b);

/// Inter-agent penetration over all unordered present-agent pairs.
double interpenetration(const data::MotionSequence& seq);

struct MinErrors {
    double mpjpe = 0;
    double mpjve = 0;
};

/// Minimum over samples of mean per-joint position / velocity error against
/// the ground truth (velocities by forward difference).
MinErrors min_joint_errors(const std::vector<data::MotionSequence>& samples,
                           const data::MotionSequence& gt);

/// FD/DIV feature extractor: non-overlapping windows of `window` frames;
/// per frame, all present agents' joint positions expressed in the first
/// agent's canonical frame; flattened per window.
FeatureSet motion_features(const std::vector<data::MotionSequence>& samples,
                           int window = 16);

struct EvalReport {
    std::vector<std::pair<std::string, double>> values;
    int n_samples = 0;
    std::string config_hash;
};

/// Text table plus machine-readable key=value block.
std::string report_text(const EvalReport& report);

}  // namespace magnet::metrics

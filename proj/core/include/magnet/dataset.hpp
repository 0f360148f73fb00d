#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "magnet/body.hpp"
#include "magnet/geometry.hpp"
#include "magnet/rng.hpp"

namespace magnet::data {

/// Multi-agent motion clip plus the derived relative-transform representation
/// filled in by preprocess(). Layout is time-major: entry (t, p) lives at
/// index t * P + p, and partner slot s of agent p refers to agent s < p ? s
/// : s + 1 (ascending agent index excluding self).
struct MotionSequence {
    double fps = 30.0;
    int P = 0;
    int T = 0;
    int J = body::kNumJoints;
    std::vector<std::uint8_t> presence;            // P
    std::vector<body::BodyShape> beta;             // P
    std::vector<geom::Rotation6D> theta;           // T*P*J
    std::vector<geom::RigidTransform> root_world;  // T*P

    bool has_derived = false;
    std::vector<geom::RigidTransform> canonical;        // T*P (not serialized)
    std::vector<geom::RigidTransform> can_to_root;      // T*P
    std::vector<geom::RigidTransform> delta_can;        // T*P
    std::vector<geom::RigidTransform> self_to_partner;  // T*P*(P-1)

    geom::Rotation6D& theta_at(int t, int p, int j) {
        return theta[(static_cast<size_t>(t) * P + p) * J + j];
    }
    const geom::Rotation6D& theta_at(int t, int p, int j) const {
        return theta[(static_cast<size_t>(t) * P + p) * J + j];
    }
    geom::RigidTransform& root_at(int t, int p) { return root_world[static_cast<size_t>(t) * P + p]; }
    const geom::RigidTransform& root_at(int t, int p) const {
        return root_world[static_cast<size_t>(t) * P + p];
    }
    const geom::RigidTransform& canonical_at(int t, int p) const {
        return canonical[static_cast<size_t>(t) * P + p];
    }
    const geom::RigidTransform& can_to_root_at(int t, int p) const {
        return can_to_root[static_cast<size_t>(t) * P + p];
    }
    const geom::RigidTransform& delta_can_at(int t, int p) const {
        return delta_can[static_cast<size_t>(t) * P + p];
    }
    /// Partner agent index behind slot s of agent p.
    int partner_of_slot(int p, int s) const { return s < p ? s : s + 1; }
    const geom::RigidTransform& partner_at(int t, int p, int s) const {
        return self_to_partner[(static_cast<size_t>(t) * P + p) * (P - 1) + s];
    }
    geom::RigidTransform& partner_at(int t, int p, int s) {
        return self_to_partner[(static_cast<size_t>(t) * P + p) * (P - 1) + s];
    }
};

enum class InteractionMode { kOrbit, kMirror, kApproachRetreat, kRing };

InteractionMode mode_from_string(const std::string& name);
std::string mode_to_string(InteractionMode mode);

struct GeneratorParams {
    InteractionMode mode = InteractionMode::kOrbit;
    int P = 2;
    int T = 64;
    std::uint64_t seed = 0;
    double fps = 30.0;
    double radius = 1.0;  // orbit/ring circle radius (m)
    int lag = 8;          // mirror / approach reaction lag (frames)
};

/// Deterministic synthetic interaction clip (root trajectories plus limb
/// oscillations with cross-agent phase locking). Does not fill derived
/// transforms; run preprocess() for that.
MotionSequence generate_interaction(const GeneratorParams& params);

/// Resample to 30 fps by frame decimation (fps must be an integer multiple
/// of 30) and fill canonical/root/partner transforms from the geometry ops.
MotionSequence preprocess(const MotionSequence& seq);

/// Reflect the sequence across the x = 0 plane: positions and rotations are
/// conjugated by the reflection and left/right joint channels swap. An
/// involution up to floating-point roundoff.
MotionSequence mirror_augment(const MotionSequence& seq);

/// Reflect a single root pose across x = 0.
geom::RigidTransform mirror_transform(const geom::RigidTransform& T);

/// Clear presence for agents outside `keep` and zero partner slots that
/// reference them. Throws EmptyKeepSet when keep is empty.
MotionSequence mask_agents(const MotionSequence& seq,
                           const std::vector<int>& keep);

/// Reorder agents: new agent i is old agent perm[i]. Partner slots are
/// remapped consistently.
MotionSequence permute_agents(const MotionSequence& seq,
                              const std::vector<int>& perm);

/// World joint positions of agent p at frame t (forward kinematics of the
/// shaped skeleton).
std::vector<geom::Vec3> joint_positions_frame(const MotionSequence& seq, int t,
                                              int p);

/// Per-channel z-score statistics. Standard deviations are floored at 1e-6.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stdev;
    int channels() const { return static_cast<int>(mean.size()); }

    static NormStats identity(int channels);
};

/// Population statistics over rows of a flat row-major matrix.
NormStats compute_norm_stats(const std::vector<double>& rows, int width);

void normalize(std::vector<double>& rows, const NormStats& stats);
void denormalize(std::vector<double>& rows, const NormStats& stats);

/// Text serialization (17 significant digits; exact double roundtrip).
void save_motion(const MotionSequence& seq, const std::string& path);
MotionSequence load_motion(const std::string& path);

}  // namespace magnet::data

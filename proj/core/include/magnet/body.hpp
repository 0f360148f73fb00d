#pragma once

#include <array>
#include <vector>

#include "magnet/geometry.hpp"

namespace magnet::body {

/// Joint indices of the 9-joint default topology.
enum Joint : int {
    kPelvis = 0,
    kSpine = 1,
    kHead = 2,
    kLeftShoulder = 3,
    kRightShoulder = 4,
    kLeftHand = 5,
    kRightHand = 6,
    kLeftFoot = 7,
    kRightFoot = 8,
};

inline constexpr int kNumJoints = 9;

/// Parametric skeleton: a parent forest rooted at the pelvis, per-joint rest
/// offsets from the parent (meters) and per-bone capsule radii.
struct Skeleton {
    std::array<int, kNumJoints> parent;
    std::array<geom::Vec3, kNumJoints> rest_offsets;
    std::array<double, kNumJoints> bone_radii;  // radius of bone parent->j

    /// Rest length of bone parent(j) -> j.
    double bone_length(int j) const { return rest_offsets[j].norm(); }
};

struct BodyShape {
    std::array<double, 10> beta{};  // zero = base skeleton
};

struct Capsule {
    geom::Vec3 a;
    geom::Vec3 b;
    double radius = 0.0;
};

/// The base skeleton (beta = 0): rest offsets chosen so the feet touch the
/// floor when the pelvis sits at height 0.9 m.
const Skeleton& base_skeleton();

/// Bone scaling from shape coefficients: rest_offsets[j] scaled by
/// clamp(1 + (W beta)[j], 0.5, 2.0) with the fixed mixing matrix W below
/// (|entry| <= 0.05). Radii are shape-independent.
Skeleton skeleton_from_shape(const BodyShape& beta);

/// The 9x10 shape mixing matrix W.
const std::array<std::array<double, 10>, kNumJoints>& shape_mixing_matrix();

/// Per-bone scale factors clamp(1 + W beta, 0.5, 2.0).
std::array<double, kNumJoints> shape_scales(const BodyShape& beta);

/// World positions of all joints. Local joint rotations accumulate down the
/// parent chain; the root transform places and orients the pelvis.
std::vector<geom::Vec3> forward_kinematics(
    const Skeleton& skel, const std::vector<geom::Rotation6D>& theta,
    const geom::RigidTransform& root);

/// Minimum distance between segments [p0,p1] and [q0,q1].
double segment_distance(const geom::Vec3& p0, const geom::Vec3& p1,
                        const geom::Vec3& q0, const geom::Vec3& q1);

/// Penetration depth max(0, r_a + r_b - segdist).
double capsule_penetration(const Capsule& a, const Capsule& b);

/// One capsule per bone (parent->child segment), 8 for the default topology.
std::vector<Capsule> body_capsules(const Skeleton& skel,
                                   const std::vector<geom::Vec3>& joints);

}  // namespace magnet::body

#include "magnet/body.hpp"

#include <algorithm>
#include <cmath>

namespace magnet::body {

using geom::Mat3;
using geom::RigidTransform;
using geom::Vec3;

const Skeleton& base_skeleton() {
    static const Skeleton skel = [] {
        Skeleton s;
        s.parent = {-1, 0, 1, 1, 1, 3, 4, 0, 0};
        s.rest_offsets = {
            Vec3(0.00, 0.00, 0.00),   // pelvis (root)
            Vec3(0.00, 0.25, 0.00),   // spine
            Vec3(0.00, 0.30, 0.00),   // head
            Vec3(0.22, 0.20, 0.00),   // left shoulder
            Vec3(-0.22, 0.20, 0.00),  // right shoulder
            Vec3(0.45, 0.00, 0.00),   // left hand
            Vec3(-0.45, 0.00, 0.00),  // right hand
            Vec3(0.10, -0.90, 0.00),  // left foot
            Vec3(-0.10, -0.90, 0.00), // right foot
        };
        s.bone_radii = {0.10, 0.12, 0.08, 0.06, 0.06, 0.04, 0.04, 0.05, 0.05};
        return s;
    }();
    return skel;
}

const std::array<std::array<double, 10>, kNumJoints>& shape_mixing_matrix() {
    // Fixed small-constant mixing of the 10 shape coefficients into per-bone
    // scales. Column 0 is an overall size factor; the rest perturb groups of
    // bones so distinct betas give distinct bodies.
    static const std::array<std::array<double, 10>, kNumJoints> W = {{
        // pelvis (unused: zero offset)
        {{0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00}},
        // spine
        {{0.05, 0.03, 0.00, 0.01, 0.00, 0.00, 0.02, 0.00, 0.00, 0.01}},
        // head
        {{0.05, 0.02, 0.01, 0.00, 0.00, 0.00, 0.00, 0.03, 0.00, 0.00}},
        // left shoulder (kept equal to right so mirroring is exact)
        {{0.05, 0.00, 0.03, 0.00, 0.02, 0.00, 0.00, 0.00, 0.01, 0.00}},
        // right shoulder
        {{0.05, 0.00, 0.03, 0.00, 0.02, 0.00, 0.00, 0.00, 0.01, 0.00}},
        // left hand
        {{0.05, 0.00, 0.00, 0.04, 0.02, 0.01, 0.00, 0.00, 0.00, 0.00}},
        // right hand
        {{0.05, 0.00, 0.00, 0.04, 0.02, 0.01, 0.00, 0.00, 0.00, 0.00}},
        // left foot
        {{0.05, 0.04, 0.00, 0.00, 0.00, 0.02, 0.01, 0.00, 0.00, 0.02}},
        // right foot
        {{0.05, 0.04, 0.00, 0.00, 0.00, 0.02, 0.01, 0.00, 0.00, 0.02}},
    }};
    return W;
}

std::array<double, kNumJoints> shape_scales(const BodyShape& beta) {
    const auto& W = shape_mixing_matrix();
    std::array<double, kNumJoints> scales{};
    for (int j = 0; j < kNumJoints; ++j) {
        double s = 1.0;
        for (int k = 0; k < 10; ++k) s += W[j][k] * beta.beta[k];
        scales[j] = std::clamp(s, 0.5, 2.0);
    }
    return scales;
}

Skeleton skeleton_from_shape(const BodyShape& beta) {
    Skeleton skel = base_skeleton();
    const auto scales = shape_scales(beta);
    for (int j = 0; j < kNumJoints; ++j) skel.rest_offsets[j] *= scales[j];
    return skel;
}

std::vector<Vec3> forward_kinematics(const Skeleton& skel,
                                     const std::vector<geom::Rotation6D>& theta,
                                     const RigidTransform& root) {
    if (theta.size() != static_cast<size_t>(kNumJoints)) {
        throw ShapeMismatch("forward_kinematics: expected one rotation per joint");
    }
    std::vector<Vec3> pos(kNumJoints);
    std::vector<Mat3> accum(kNumJoints);
    pos[0] = root.t;
    accum[0] = root.R * geom::rot6d_to_matrix(theta[0]);
    for (int j = 1; j < kNumJoints; ++j) {
        const int p = skel.parent[j];
        pos[j] = pos[p] + accum[p] * skel.rest_offsets[j];
        accum[j] = accum[p] * geom::rot6d_to_matrix(theta[j]);
    }
    return pos;
}

double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0,
                        const Vec3& q1) {
    // Clamped closest-point parameterization (Ericson, Real-Time Collision
    // Detection 5.1.9): solve on the infinite lines, clamp s, recompute t,
    // clamp t, recompute s.
    const Vec3 d1 = p1 - p0;
    const Vec3 d2 = q1 - q0;
    const Vec3 r = p0 - q0;
    const double a = d1.dot(d1);
    const double e = d2.dot(d2);
    const double f = d2.dot(r);
    constexpr double kEps = 1e-12;

    double s = 0.0, t = 0.0;
    if (a <= kEps && e <= kEps) {
        return r.norm();
    }
    if (a <= kEps) {
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        const double c = d1.dot(r);
        if (e <= kEps) {
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            const double b = d1.dot(d2);
            const double denom = a * e - b * b;
            s = denom > kEps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0)
                             : 0.0;
            t = (b * s + f) / e;
            if (t < 0.0) {
                t = 0.0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1.0) {
                t = 1.0;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    const Vec3 cp = p0 + d1 * s;
    const Vec3 cq = q0 + d2 * t;
    return (cp - cq).norm();
}

double capsule_penetration(const Capsule& a, const Capsule& b) {
    // Evaluate both argument orders: the clamp passes are not symmetric in
    // floating point, and the invariant demands exact symmetry.
    const double d = std::min(segment_distance(a.a, a.b, b.a, b.b),
                              segment_distance(b.a, b.b, a.a, a.b));
    return std::max(0.0, a.radius + b.radius - d);
}

std::vector<Capsule> body_capsules(const Skeleton& skel,
                                   const std::vector<Vec3>& joints) {
    if (joints.size() != static_cast<size_t>(kNumJoints)) {
        throw ShapeMismatch("body_capsules: expected one position per joint");
    }
    std::vector<Capsule> caps;
    caps.reserve(kNumJoints - 1);
    for (int j = 1; j < kNumJoints; ++j) {
        caps.push_back(
            {joints[skel.parent[j]], joints[j], skel.bone_radii[j]});
    }
    return caps;
}

}  // namespace magnet::body

#pragma once

#include <Eigen/Core>

#include <array>
#include <optional>

#include "magnet/errors.hpp"

namespace magnet::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Continuous 6D rotation parameterization: the first two columns of a
/// rotation matrix, stored column-stacked as [c0.x c0.y c0.z c1.x c1.y c1.z].
struct Rotation6D {
    std::array<double, 6> v{1, 0, 0, 0, 1, 0};

    static Rotation6D identity() { return {}; }
    Vec3 col0() const { return {v[0], v[1], v[2]}; }
    Vec3 col1() const { return {v[3], v[4], v[5]}; }
};

/// SE(3) element. Conventions used throughout: a transform named a_to_b (the
/// paper-style T^{a->b}) is the pose of frame b expressed in frame a, i.e. it
/// maps b-local coordinates into a coordinates.
struct RigidTransform {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    static RigidTransform identity() { return {}; }
};

/// World-up is +y and the floor plane is y = 0. The forward axis of a frame
/// is its +z column.
inline constexpr int kUpAxis = 1;

/// Heading-only decomposition of a root pose: `canonical` is the pose of the
/// canonical frame in world coordinates (origin on the floor, rotation a pure
/// yaw) and `can_to_root` the residual pose of the root inside it.
struct CanonicalDecomposition {
    RigidTransform canonical;
    RigidTransform can_to_root;
};

/// Gram-Schmidt decode of the 6D parameterization.
/// Throws DegenerateRotation when the two columns have norm <= 1e-8 or are
/// parallel within 1e-8.
Mat3 rot6d_to_matrix(const Rotation6D& v);

/// First two columns of R. Throws NotARotation when R'R deviates from
/// identity by more than 1e-6 or det(R) <= 0.
Rotation6D matrix_to_rot6d(const Mat3& R);

/// arccos((tr(Ra'Rb) - 1)/2), argument clamped to [-1, 1]. Radians, >= 0.
double geodesic_distance(const Mat3& Ra, const Mat3& Rb);

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& T);
Vec3 apply(const RigidTransform& T, const Vec3& p);

/// Yaw rotation about world up by `angle` radians; maps +z to
/// (sin angle, 0, cos angle).
Mat3 yaw_rotation(double angle);

/// Heading angle of a pose: yaw of the floor projection of its forward axis.
/// Throws GimbalDegenerate when the projection norm is <= 1e-6 and no
/// fallback is given.
double heading_of(const RigidTransform& T,
                  std::optional<double> fallback_yaw = std::nullopt);

/// Split a world root pose into canonical frame (heading-only, on the floor)
/// and the canonical->root residual. compose(canonical, can_to_root)
/// reconstructs the input.
CanonicalDecomposition canonicalize(
    const RigidTransform& root_world,
    std::optional<double> fallback_yaw = std::nullopt);

/// T^{a->b} between two world poses: invert(a) * b.
RigidTransform relative_transform(const RigidTransform& a_world,
                                  const RigidTransform& b_world);

/// One-step propagation of a self->partner transform through the two agents'
/// canonical one-step transforms (each mapping frame t-1 to frame t):
/// invert(d_self) * prev * d_partner. Exact on ground-truth trajectories.
RigidTransform propagate_partner_transform(const RigidTransform& prev_self_to_partner,
                                           const RigidTransform& d_self,
                                           const RigidTransform& d_partner);

/// Max-norm deviation of R from orthonormality plus determinant error.
double rotation_error(const Mat3& R);

/// 9D transform encoding used by tokens and network features:
/// [rot6d (6); translation (3)].
std::array<double, 9> encode_transform_9d(const RigidTransform& T);
RigidTransform decode_transform_9d(const std::array<double, 9>& v);

bool approx_equal(const RigidTransform& a, const RigidTransform& b,
                  double tol);

}  // namespace magnet::geom

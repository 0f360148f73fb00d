#include "magnet/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>

namespace magnet::geom {

namespace {
constexpr double kDegenerateTol = 1e-8;
constexpr double kHeadingTol = 1e-6;
}  // namespace

Mat3 rot6d_to_matrix(const Rotation6D& v) {
    const Vec3 a1 = v.col0();
    const Vec3 a2 = v.col1();
    const double n1 = a1.norm();
    if (n1 <= kDegenerateTol) {
        throw DegenerateRotation("rot6d_to_matrix: first column norm <= 1e-8");
    }
    const Vec3 e1 = a1 / n1;
    const Vec3 u2 = a2 - e1.dot(a2) * e1;
    const double n2 = u2.norm();
    if (n2 <= kDegenerateTol) {
        throw DegenerateRotation(
            "rot6d_to_matrix: columns parallel or second column degenerate");
    }
    const Vec3 e2 = u2 / n2;
    const Vec3 e3 = e1.cross(e2);
    Mat3 R;
    R.col(0) = e1;
    R.col(1) = e2;
    R.col(2) = e3;
    return R;
}

double rotation_error(const Mat3& R) {
    const Mat3 err = R.transpose() * R - Mat3::Identity();
    return std::max(err.cwiseAbs().maxCoeff(),
                    std::abs(R.determinant() - 1.0));
}

Rotation6D matrix_to_rot6d(const Mat3& R) {
    if (rotation_error(R) > 1e-6) {
        throw NotARotation("matrix_to_rot6d: input is not orthonormal");
    }
    Rotation6D out;
    for (int i = 0; i < 3; ++i) {
        out.v[i] = R(i, 0);
        out.v[3 + i] = R(i, 1);
    }
    return out;
}

double geodesic_distance(const Mat3& Ra, const Mat3& Rb) {
    // Same function as |arccos((tr - 1)/2)| with the argument clamped to
    // [-1, 1], evaluated as atan2(sin, cos): arccos alone loses half the
    // significant digits near 0 and pi.
    const Mat3 E = Ra.transpose() * Rb;
    const double c = std::clamp((E.trace() - 1.0) / 2.0, -1.0, 1.0);
    const Vec3 v(E(2, 1) - E(1, 2), E(0, 2) - E(2, 0), E(1, 0) - E(0, 1));
    const double s = 0.5 * v.norm();
    return std::abs(std::atan2(s, c));
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return {a.R * b.R, a.R * b.t + a.t};
}

RigidTransform invert(const RigidTransform& T) {
    const Mat3 Rt = T.R.transpose();
    return {Rt, -(Rt * T.t)};
}

Vec3 apply(const RigidTransform& T, const Vec3& p) { return T.R * p + T.t; }

Mat3 yaw_rotation(double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    Mat3 R;
    // clang-format off
    R <<  c, 0, s,
          0, 1, 0,
         -s, 0, c;
    // clang-format on
    return R;
}

double heading_of(const RigidTransform& T, std::optional<double> fallback_yaw) {
    const Vec3 fwd = T.R.col(2);
    const double hx = fwd.x();
    const double hz = fwd.z();
    if (std::sqrt(hx * hx + hz * hz) <= kHeadingTol) {
        if (fallback_yaw) return *fallback_yaw;
        throw GimbalDegenerate(
            "heading_of: forward axis parallel to world up and no fallback heading");
    }
    return std::atan2(hx, hz);
}

CanonicalDecomposition canonicalize(const RigidTransform& root_world,
                                    std::optional<double> fallback_yaw) {
    const double yaw = heading_of(root_world, fallback_yaw);
    CanonicalDecomposition out;
    out.canonical.R = yaw_rotation(yaw);
    out.canonical.t = Vec3(root_world.t.x(), 0.0, root_world.t.z());
    out.can_to_root = compose(invert(out.canonical), root_world);
    return out;
}

RigidTransform relative_transform(const RigidTransform& a_world,
                                  const RigidTransform& b_world) {
    return compose(invert(a_world), b_world);
}

RigidTransform propagate_partner_transform(
    const RigidTransform& prev_self_to_partner, const RigidTransform& d_self,
    const RigidTransform& d_partner) {
    return compose(invert(d_self), compose(prev_self_to_partner, d_partner));
}

std::array<double, 9> encode_transform_9d(const RigidTransform& T) {
    const Rotation6D r = matrix_to_rot6d(T.R);
    std::array<double, 9> out;
    for (int i = 0; i < 6; ++i) out[i] = r.v[i];
    for (int i = 0; i < 3; ++i) out[6 + i] = T.t(i);
    return out;
}

RigidTransform decode_transform_9d(const std::array<double, 9>& v) {
    Rotation6D r;
    for (int i = 0; i < 6; ++i) r.v[i] = v[i];
    return {rot6d_to_matrix(r), Vec3(v[6], v[7], v[8])};
}

bool approx_equal(const RigidTransform& a, const RigidTransform& b,
                  double tol) {
    return (a.R - b.R).cwiseAbs().maxCoeff() <= tol &&
           (a.t - b.t).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace magnet::geom

#include <Eigen/Geometry>

#include <cmath>

#include "doctest.h"
#include "magnet/geometry.hpp"
#include "magnet/rng.hpp"

using namespace magnet;
using geom::Mat3;
using geom::RigidTransform;
using geom::Rotation6D;
using geom::Vec3;

namespace {

Mat3 random_rotation(Rng& rng) {
    const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    return Eigen::AngleAxisd(rng.uniform(0.0, 3.1), axis).toRotationMatrix();
}

RigidTransform random_transform(Rng& rng) {
    return {random_rotation(rng),
            Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2))};
}

}  // namespace

TEST_CASE("rot6d decode: identity and non-normalized input") {
    Rotation6D id;
    id.v = {1, 0, 0, 0, 1, 0};
    CHECK((geom::rot6d_to_matrix(id) - Mat3::Identity()).norm() == doctest::Approx(0.0));

    // Gram-Schmidt by hand: a1=(2,0,0) -> e1=(1,0,0); a2=(1,1,0) -> e2=(0,1,0).
    Rotation6D skew;
    skew.v = {2, 0, 0, 1, 1, 0};
    CHECK((geom::rot6d_to_matrix(skew) - Mat3::Identity()).norm() < 1e-12);

    Rotation6D zero;
    zero.v = {0, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(geom::rot6d_to_matrix(zero), DegenerateRotation);

    Rotation6D parallel;
    parallel.v = {1, 0, 0, 2, 0, 0};
    CHECK_THROWS_AS(geom::rot6d_to_matrix(parallel), DegenerateRotation);
}

TEST_CASE("matrix_to_rot6d: encode and validation") {
    const Rotation6D id = geom::matrix_to_rot6d(Mat3::Identity());
    const std::array<double, 6> expect{1, 0, 0, 0, 1, 0};
    for (int i = 0; i < 6; ++i) CHECK(id.v[i] == doctest::Approx(expect[i]));

    const Mat3 yaw90 = geom::yaw_rotation(3.14159265358979323846 / 2.0);
    const Rotation6D enc = geom::matrix_to_rot6d(yaw90);
    for (int i = 0; i < 3; ++i) {
        CHECK(enc.v[i] == doctest::Approx(yaw90(i, 0)));
        CHECK(enc.v[3 + i] == doctest::Approx(yaw90(i, 1)));
    }

    CHECK_THROWS_AS(geom::matrix_to_rot6d(Mat3(2.0 * Mat3::Identity())), NotARotation);
}

TEST_CASE("rot6d roundtrip on random rotations (1e-9)") {
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        const Mat3 R = random_rotation(rng);
        const Mat3 back = geom::rot6d_to_matrix(geom::matrix_to_rot6d(R));
        CHECK((back - R).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("geodesic distance closed forms") {
    const Mat3 I = Mat3::Identity();
    CHECK(geom::geodesic_distance(I, I) == doctest::Approx(0.0));

    const Mat3 flip = Eigen::AngleAxisd(3.14159265358979323846, Vec3::UnitX())
                          .toRotationMatrix();
    CHECK(geom::geodesic_distance(I, flip) ==
          doctest::Approx(3.14159265358979323846).epsilon(1e-9));

    const Mat3 yaw90 = geom::yaw_rotation(3.14159265358979323846 / 2.0);
    CHECK(geom::geodesic_distance(I, yaw90) ==
          doctest::Approx(3.14159265358979323846 / 2.0).epsilon(1e-9));
}

TEST_CASE("geodesic distance is a metric over 1000 random triples") {
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        const Mat3 A = random_rotation(rng);
        const Mat3 B = random_rotation(rng);
        const Mat3 C = random_rotation(rng);
        const double ab = geom::geodesic_distance(A, B);
        const double ba = geom::geodesic_distance(B, A);
        const double ac = geom::geodesic_distance(A, C);
        const double cb = geom::geodesic_distance(C, B);
        CHECK(ab == ba);  // symmetry, exact
        CHECK(geom::geodesic_distance(A, A) < 1e-9);
        CHECK(ab <= ac + cb + 1e-9);  // triangle inequality
        CHECK(ab >= 0.0);
    }
}

TEST_CASE("compose / invert / apply algebra") {
    Rng rng(3);
    const RigidTransform T = random_transform(rng);
    CHECK(geom::approx_equal(geom::compose(T, RigidTransform::identity()), T, 1e-15));
    CHECK(geom::approx_equal(geom::compose(geom::invert(T), T),
                             RigidTransform::identity(), 1e-12));

    RigidTransform a, b;
    a.t = Vec3(0, 0, 1);
    b.t = Vec3(1, 0, 0);
    CHECK((geom::compose(a, b).t - Vec3(1, 0, 1)).norm() == doctest::Approx(0.0));

    const Vec3 p(0.3, -0.4, 0.9);
    const RigidTransform ab = geom::compose(a, b);
    CHECK((geom::apply(ab, p) - geom::apply(a, geom::apply(b, p))).norm() < 1e-15);
}

TEST_CASE("canonicalize: floor projection and reconstruction") {
    // Root at origin, identity orientation, height 0.
    const auto dec0 = geom::canonicalize(RigidTransform::identity());
    CHECK(geom::approx_equal(dec0.canonical, RigidTransform::identity(), 1e-15));
    CHECK(geom::approx_equal(dec0.can_to_root, RigidTransform::identity(), 1e-15));

    // Root at (1, 0.9, 2) facing world +x (forward +z column points at +x).
    RigidTransform root;
    root.R = geom::yaw_rotation(3.14159265358979323846 / 2.0);
    root.t = Vec3(1, 0.9, 2);
    const auto dec = geom::canonicalize(root);
    CHECK((dec.canonical.t - Vec3(1, 0, 2)).norm() < 1e-12);
    CHECK((dec.can_to_root.t - Vec3(0, 0.9, 0)).norm() < 1e-12);
    CHECK(geom::approx_equal(geom::compose(dec.canonical, dec.can_to_root), root, 1e-9));

    // Canonical rotation is pure heading: up axis fixed.
    CHECK((dec.canonical.R * Vec3::UnitY() - Vec3::UnitY()).norm() < 1e-15);

    // forward == world up exactly -> degenerate without fallback.
    RigidTransform gimbal;
    gimbal.R = Eigen::AngleAxisd(-3.14159265358979323846 / 2.0, Vec3::UnitX())
                   .toRotationMatrix();  // +z column maps to +y
    CHECK_THROWS_AS(geom::canonicalize(gimbal), GimbalDegenerate);
    const auto fb = geom::canonicalize(gimbal, 0.25);
    CHECK(geom::approx_equal(geom::compose(fb.canonical, fb.can_to_root), gimbal, 1e-9));
}

TEST_CASE("canonicalize reconstruction and idempotence on random poses") {
    Rng rng(5);
    for (int i = 0; i < 300; ++i) {
        RigidTransform root;
        root.R = geom::yaw_rotation(rng.uniform(-3.0, 3.0)) *
                 Eigen::AngleAxisd(rng.uniform(-0.9, 0.9), Vec3::UnitX())
                     .toRotationMatrix();
        root.t = Vec3(rng.uniform(-3, 3), rng.uniform(0, 2), rng.uniform(-3, 3));
        const auto dec = geom::canonicalize(root);
        CHECK(geom::approx_equal(geom::compose(dec.canonical, dec.can_to_root), root, 1e-9));
        CHECK(dec.canonical.t.y() == 0.0);
        // horizontal residual components vanish
        CHECK(std::abs(dec.can_to_root.t.x()) < 1e-9);
        CHECK(std::abs(dec.can_to_root.t.z()) < 1e-9);
        // idempotence: canonicalizing a canonical pose leaves it fixed
        const auto dec2 = geom::canonicalize(dec.canonical);
        CHECK(geom::approx_equal(dec2.can_to_root, RigidTransform::identity(), 1e-9));
    }
}

TEST_CASE("relative_transform basics and chain rule") {
    Rng rng(7);
    const RigidTransform T = random_transform(rng);
    CHECK(geom::approx_equal(geom::relative_transform(T, T),
                             RigidTransform::identity(), 1e-12));

    // Same orientation, pure displacement: relative transform is the
    // displacement expressed in the shared frame.
    RigidTransform a, b;
    b.t = Vec3(2, 0, 0);
    const auto rel = geom::relative_transform(a, b);
    CHECK(geom::approx_equal(rel, {Mat3::Identity(), Vec3(2, 0, 0)}, 1e-15));

    RigidTransform ay = a;
    ay.R = geom::yaw_rotation(0.7);
    RigidTransform by = b;
    by.R = ay.R;
    const auto rel_y = geom::relative_transform(ay, by);
    CHECK((rel_y.t - ay.R.transpose() * Vec3(2, 0, 0)).norm() < 1e-12);

    for (int i = 0; i < 100; ++i) {
        const RigidTransform x = random_transform(rng);
        const RigidTransform y = random_transform(rng);
        const RigidTransform z = random_transform(rng);
        const auto lhs = geom::relative_transform(x, z);
        const auto rhs = geom::compose(geom::relative_transform(x, y),
                                       geom::relative_transform(y, z));
        CHECK(geom::approx_equal(lhs, rhs, 1e-12));
        // group inverse
        CHECK(geom::approx_equal(geom::relative_transform(x, y),
                                 geom::invert(geom::relative_transform(y, x)),
                                 1e-12));
    }
}

TEST_CASE("propagate_partner_transform identities") {
    const RigidTransform id;
    CHECK(geom::approx_equal(geom::propagate_partner_transform(id, id, id), id, 1e-15));

    Rng rng(9);
    const RigidTransform D = random_transform(rng);
    CHECK(geom::approx_equal(geom::propagate_partner_transform(id, D, D), id, 1e-12));

    // Synthetic two-agent canonical trajectories: per-frame direct
    // computation is the oracle.
    std::vector<RigidTransform> canA, canB;
    for (int t = 0; t < 20; ++t) {
        RigidTransform a{geom::yaw_rotation(0.1 * t), Vec3(0.05 * t, 0, 1.0 + 0.02 * t)};
        RigidTransform b{geom::yaw_rotation(-0.07 * t), Vec3(1.0 - 0.03 * t, 0, -0.5)};
        canA.push_back(a);
        canB.push_back(b);
    }
    for (int t = 1; t < 20; ++t) {
        const auto d_self = geom::relative_transform(canA[t - 1], canA[t]);
        const auto d_partner = geom::relative_transform(canB[t - 1], canB[t]);
        const auto prev = geom::relative_transform(canA[t - 1], canB[t - 1]);
        const auto prop = geom::propagate_partner_transform(prev, d_self, d_partner);
        const auto direct = geom::relative_transform(canA[t], canB[t]);
        CHECK(geom::geodesic_distance(prop.R, direct.R) < 1e-9);
        CHECK((prop.t - direct.t).norm() < 1e-9);
    }
}

#include "magnet/dataset.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <set>

namespace magnet::data {

using geom::Mat3;
using geom::RigidTransform;
using geom::Rotation6D;
using geom::Vec3;

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

Rotation6D axis_angle_rot6d(const Vec3& axis, double angle) {
    const Mat3 R = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    return geom::matrix_to_rot6d(R);
}

struct LimbProfile {
    int joint;
    Vec3 axis;
    double amplitude;
    double freq_mult;
    double phase;
};

std::vector<LimbProfile> limb_profiles(Rng& rng) {
    constexpr double kPi = 3.14159265358979323846;
    std::vector<LimbProfile> base = {
        {body::kSpine, {0, 0, 1}, 0.08, 0.5, 0.0},
        {body::kHead, {1, 0, 0}, 0.12, 0.5, 0.4},
        {body::kLeftShoulder, {0, 0, 1}, 0.25, 1.0, 0.0},
        {body::kRightShoulder, {0, 0, 1}, 0.25, 1.0, kPi},
        {body::kLeftHand, {1, 0, 0}, 0.35, 1.0, 0.2},
        {body::kRightHand, {1, 0, 0}, 0.35, 1.0, 0.2 + kPi},
        {body::kLeftFoot, {1, 0, 0}, 0.25, 1.0, 0.0},
        {body::kRightFoot, {1, 0, 0}, 0.25, 1.0, kPi},
    };
    const double global = rng.uniform(0.0, kTwoPi);
    for (auto& p : base) p.phase += global + rng.uniform(-0.15, 0.15);
    return base;
}

void fill_limbs(MotionSequence& seq, const std::vector<LimbProfile>& profiles,
                double base_freq, int p, double time_shift_s) {
    for (int t = 0; t < seq.T; ++t) {
        const double s = t / seq.fps - time_shift_s;
        for (int j = 0; j < seq.J; ++j) seq.theta_at(t, p, j) = Rotation6D::identity();
        for (const auto& prof : profiles) {
            const double angle =
                prof.amplitude * std::sin(kTwoPi * base_freq * prof.freq_mult * s + prof.phase);
            seq.theta_at(t, p, prof.joint) = axis_angle_rot6d(prof.axis, angle);
        }
    }
}

RigidTransform yaw_pose(double yaw, const Vec3& pos) {
    return {geom::yaw_rotation(yaw), pos};
}

/// Reflection across x = 0 of a 6D rotation: exact sign flips, so applying
/// it twice is a bitwise no-op.
Rotation6D mirror_rot6d(const Rotation6D& v) {
    Rotation6D out;
    out.v = {v.v[0], -v.v[1], -v.v[2], -v.v[3], v.v[4], v.v[5]};
    return out;
}

constexpr std::array<int, body::kNumJoints> kMirrorJointMap = {
    body::kPelvis,       body::kSpine,     body::kHead,
    body::kRightShoulder, body::kLeftShoulder,
    body::kRightHand,    body::kLeftHand,
    body::kRightFoot,    body::kLeftFoot,
};

void mirror_frame_from(MotionSequence& dst, int td, int pd,
                       const MotionSequence& src, int ts, int ps) {
    dst.root_at(td, pd) = mirror_transform(src.root_at(ts, ps));
    for (int j = 0; j < dst.J; ++j) {
        dst.theta_at(td, pd, j) = mirror_rot6d(src.theta_at(ts, ps, kMirrorJointMap[j]));
    }
}

void allocate(MotionSequence& seq) {
    seq.presence.assign(seq.P, 1);
    seq.beta.assign(seq.P, body::BodyShape{});
    seq.theta.assign(static_cast<size_t>(seq.T) * seq.P * seq.J, Rotation6D::identity());
    seq.root_world.assign(static_cast<size_t>(seq.T) * seq.P, RigidTransform::identity());
}

void fill_derived(MotionSequence& seq) {
    const size_t n = static_cast<size_t>(seq.T) * seq.P;
    seq.canonical.assign(n, RigidTransform::identity());
    seq.can_to_root.assign(n, RigidTransform::identity());
    seq.delta_can.assign(n, RigidTransform::identity());
    seq.self_to_partner.assign(n * std::max(0, seq.P - 1), RigidTransform::identity());

    for (int p = 0; p < seq.P; ++p) {
        std::optional<double> prev_yaw;
        for (int t = 0; t < seq.T; ++t) {
            const auto dec = geom::canonicalize(seq.root_at(t, p), prev_yaw);
            seq.canonical[static_cast<size_t>(t) * seq.P + p] = dec.canonical;
            seq.can_to_root[static_cast<size_t>(t) * seq.P + p] = dec.can_to_root;
            prev_yaw = std::atan2(dec.canonical.R(0, 2), dec.canonical.R(2, 2));
            if (t > 0) {
                seq.delta_can[static_cast<size_t>(t) * seq.P + p] = geom::relative_transform(
                    seq.canonical_at(t - 1, p), seq.canonical_at(t, p));
            }
        }
    }
    for (int t = 0; t < seq.T; ++t) {
        for (int p = 0; p < seq.P; ++p) {
            for (int s = 0; s < seq.P - 1; ++s) {
                const int q = seq.partner_of_slot(p, s);
                seq.partner_at(t, p, s) = geom::relative_transform(
                    seq.canonical_at(t, p), seq.canonical_at(t, q));
            }
        }
    }
    seq.has_derived = true;
}

}  // namespace

InteractionMode mode_from_string(const std::string& name) {
    if (name == "orbit") return InteractionMode::kOrbit;
    if (name == "mirror") return InteractionMode::kMirror;
    if (name == "approach_retreat") return InteractionMode::kApproachRetreat;
    if (name == "ring") return InteractionMode::kRing;
    throw InvalidConfig("unknown interaction mode: " + name);
}

std::string mode_to_string(InteractionMode mode) {
    switch (mode) {
        case InteractionMode::kOrbit: return "orbit";
        case InteractionMode::kMirror: return "mirror";
        case InteractionMode::kApproachRetreat: return "approach_retreat";
        case InteractionMode::kRing: return "ring";
    }
    return "?";
}

geom::RigidTransform mirror_transform(const geom::RigidTransform& T) {
    RigidTransform out;
    // diag(-1,1,1) conjugation: sign flips only, no arithmetic.
    out.R = T.R;
    out.R(0, 1) = -T.R(0, 1);
    out.R(0, 2) = -T.R(0, 2);
    out.R(1, 0) = -T.R(1, 0);
    out.R(2, 0) = -T.R(2, 0);
    out.t = Vec3(-T.t.x(), T.t.y(), T.t.z());
    return out;
}

MotionSequence generate_interaction(const GeneratorParams& params) {
    if (params.P < 1 || params.P > 4) {
        throw InvalidConfig("generate_interaction: P must be in [1, 4]");
    }
    if (params.T < 64) {
        throw InvalidConfig("generate_interaction: T must be >= 64");
    }
    if (params.mode == InteractionMode::kMirror && params.P != 2) {
        throw InvalidConfig("generate_interaction: mirror mode requires P = 2");
    }
    if (params.fps <= 0) throw InvalidConfig("generate_interaction: fps must be positive");
    if (params.lag < 0 || params.lag >= params.T) {
        throw InvalidConfig("generate_interaction: lag out of range");
    }

    MotionSequence seq;
    seq.fps = params.fps;
    seq.P = params.P;
    seq.T = params.T;
    allocate(seq);

    Rng rng(params.seed);
    for (int p = 0; p < seq.P; ++p) {
        for (double& b : seq.beta[p].beta) b = rng.uniform(-0.5, 0.5);
    }
    const auto profiles = limb_profiles(rng);
    const double base_freq = 0.9;

    switch (params.mode) {
        case InteractionMode::kOrbit: {
            const double omega = kTwoPi * 0.45;  // rad/s around the circle
            for (int p = 0; p < seq.P; ++p) {
                for (int t = 0; t < seq.T; ++t) {
                    const double s = t / seq.fps;
                    const double ang = kTwoPi * p / seq.P + omega * s;
                    const double h = 0.9 + 0.02 * std::sin(2.0 * omega * s);
                    const Vec3 pos(params.radius * std::sin(ang), h,
                                   params.radius * std::cos(ang));
                    seq.root_at(t, p) = yaw_pose(ang + kTwoPi / 4.0, pos);
                }
                fill_limbs(seq, profiles, base_freq, p, /*time_shift_s=*/0.0);
            }
            break;
        }
        case InteractionMode::kMirror: {
            const double ph1 = rng.uniform(0.0, kTwoPi);
            const double ph2 = rng.uniform(0.0, kTwoPi);
            const double ph3 = rng.uniform(0.0, kTwoPi);
            for (int t = 0; t < seq.T; ++t) {
                const double s = t / seq.fps;
                const Vec3 pos(0.8 + 0.15 * std::sin(kTwoPi * 0.35 * s + ph1),
                               0.9 + 0.02 * std::sin(kTwoPi * 0.5 * s),
                               0.3 * std::sin(kTwoPi * 0.22 * s + ph2));
                const double yaw = 0.6 * std::sin(kTwoPi * 0.18 * s + ph3);
                seq.root_at(t, 0) = yaw_pose(yaw, pos);
            }
            fill_limbs(seq, profiles, base_freq, 0, 0.0);
            for (int t = 0; t < seq.T; ++t) {
                mirror_frame_from(seq, t, 1, seq, std::max(0, t - params.lag), 0);
            }
            break;
        }
        case InteractionMode::kApproachRetreat: {
            for (int p = 0; p < seq.P; ++p) {
                const double shift = p * params.lag / seq.fps;
                const double alpha = kTwoPi * p / std::max(1, seq.P);
                for (int t = 0; t < seq.T; ++t) {
                    const double s = t / seq.fps - shift;
                    const double g = 0.75 + 0.35 * std::sin(kTwoPi * 0.3 * s);
                    const double h = 0.9 + 0.015 * std::sin(kTwoPi * 0.6 * s);
                    const Vec3 pos(g * std::sin(alpha), h, g * std::cos(alpha));
                    seq.root_at(t, p) = yaw_pose(alpha + kTwoPi / 2.0, pos);
                }
                fill_limbs(seq, profiles, base_freq, p, shift);
            }
            break;
        }
        case InteractionMode::kRing: {
            for (int p = 0; p < seq.P; ++p) {
                const double alpha = kTwoPi * p / std::max(1, seq.P);
                const Vec3 radial(std::sin(alpha), 0.0, std::cos(alpha));
                const Vec3 tangent(std::cos(alpha), 0.0, -std::sin(alpha));
                for (int t = 0; t < seq.T; ++t) {
                    const double s = t / seq.fps;
                    const double sway = 0.12 * std::sin(kTwoPi * 0.4 * s + 0.4 * p);
                    const double h = 0.9 + 0.02 * std::sin(kTwoPi * 0.5 * s + 0.2 * p);
                    Vec3 pos = params.radius * 1.2 * radial + sway * tangent;
                    pos.y() = h;
                    seq.root_at(t, p) = yaw_pose(alpha + kTwoPi / 2.0, pos);
                }
                fill_limbs(seq, profiles, base_freq, p, 0.1 * p);
            }
            break;
        }
    }
    return seq;
}

MotionSequence preprocess(const MotionSequence& seq) {
    MotionSequence out;
    const double ratio = seq.fps / 30.0;
    const int step = static_cast<int>(std::lround(ratio));
    if (step < 1 || std::abs(ratio - step) > 1e-9) {
        throw UnsupportedFps("preprocess: fps must be an integer multiple of 30");
    }
    out.fps = 30.0;
    out.P = seq.P;
    out.T = (seq.T + step - 1) / step;
    out.J = seq.J;
    out.presence = seq.presence;
    out.beta = seq.beta;
    out.theta.resize(static_cast<size_t>(out.T) * out.P * out.J);
    out.root_world.resize(static_cast<size_t>(out.T) * out.P);
    for (int tn = 0; tn < out.T; ++tn) {
        const int ts = tn * step;
        for (int p = 0; p < out.P; ++p) {
            out.root_at(tn, p) = seq.root_at(ts, p);
            for (int j = 0; j < out.J; ++j) out.theta_at(tn, p, j) = seq.theta_at(ts, p, j);
        }
    }
    fill_derived(out);
    return out;
}

MotionSequence mirror_augment(const MotionSequence& seq) {
    MotionSequence out = seq;
    for (int t = 0; t < seq.T; ++t) {
        for (int p = 0; p < seq.P; ++p) {
            mirror_frame_from(out, t, p, seq, t, p);
        }
    }
    if (seq.has_derived) {
        fill_derived(out);
    }
    return out;
}

MotionSequence mask_agents(const MotionSequence& seq, const std::vector<int>& keep) {
    if (keep.empty()) throw EmptyKeepSet("mask_agents: keep set is empty");
    std::set<int> kept(keep.begin(), keep.end());
    for (int q : kept) {
        if (q < 0 || q >= seq.P) throw InvalidConfig("mask_agents: agent index out of range");
    }
    MotionSequence out = seq;
    for (int p = 0; p < seq.P; ++p) {
        if (!kept.count(p)) out.presence[p] = 0;
    }
    if (out.has_derived) {
        const RigidTransform zero{Mat3::Zero(), Vec3::Zero()};
        for (int t = 0; t < seq.T; ++t) {
            for (int p = 0; p < seq.P; ++p) {
                for (int s = 0; s < seq.P - 1; ++s) {
                    const int q = seq.partner_of_slot(p, s);
                    if (!out.presence[p] || !out.presence[q]) {
                        out.partner_at(t, p, s) = zero;
                    }
                }
            }
        }
    }
    return out;
}

MotionSequence permute_agents(const MotionSequence& seq, const std::vector<int>& perm) {
    if (static_cast<int>(perm.size()) != seq.P) {
        throw InvalidConfig("permute_agents: permutation size mismatch");
    }
    MotionSequence out = seq;
    for (int i = 0; i < seq.P; ++i) {
        const int src = perm[i];
        if (src < 0 || src >= seq.P) throw InvalidConfig("permute_agents: bad index");
        out.presence[i] = seq.presence[src];
        out.beta[i] = seq.beta[src];
    }
    for (int t = 0; t < seq.T; ++t) {
        for (int i = 0; i < seq.P; ++i) {
            const int src = perm[i];
            out.root_at(t, i) = seq.root_at(t, src);
            for (int j = 0; j < seq.J; ++j) out.theta_at(t, i, j) = seq.theta_at(t, src, j);
        }
    }
    if (seq.has_derived) {
        for (int t = 0; t < seq.T; ++t) {
            for (int i = 0; i < seq.P; ++i) {
                out.canonical[static_cast<size_t>(t) * seq.P + i] =
                    seq.canonical[static_cast<size_t>(t) * seq.P + perm[i]];
                out.can_to_root[static_cast<size_t>(t) * seq.P + i] =
                    seq.can_to_root[static_cast<size_t>(t) * seq.P + perm[i]];
                out.delta_can[static_cast<size_t>(t) * seq.P + i] =
                    seq.delta_can[static_cast<size_t>(t) * seq.P + perm[i]];
                for (int s = 0; s < seq.P - 1; ++s) {
                    const int j_new = seq.partner_of_slot(i, s);
                    // locate old slot holding partner perm[j_new] of agent perm[i]
                    const int old_p = perm[i];
                    const int old_q = perm[j_new];
                    const int old_slot = old_q < old_p ? old_q : old_q - 1;
                    out.partner_at(t, i, s) = seq.partner_at(t, old_p, old_slot);
                }
            }
        }
    }
    return out;
}

std::vector<Vec3> joint_positions_frame(const MotionSequence& seq, int t, int p) {
    const body::Skeleton skel = body::skeleton_from_shape(seq.beta[p]);
    std::vector<Rotation6D> theta(seq.J);
    for (int j = 0; j < seq.J; ++j) theta[j] = seq.theta_at(t, p, j);
    return body::forward_kinematics(skel, theta, seq.root_at(t, p));
}

NormStats NormStats::identity(int channels) {
    NormStats s;
    s.mean.assign(channels, 0.0);
    s.stdev.assign(channels, 1.0);
    return s;
}

NormStats compute_norm_stats(const std::vector<double>& rows, int width) {
    if (width <= 0 || rows.size() % width != 0 || rows.empty()) {
        throw ShapeMismatch("compute_norm_stats: bad row width");
    }
    const size_t n = rows.size() / width;
    NormStats s;
    s.mean.assign(width, 0.0);
    s.stdev.assign(width, 0.0);
    for (size_t r = 0; r < n; ++r) {
        for (int c = 0; c < width; ++c) s.mean[c] += rows[r * width + c];
    }
    for (int c = 0; c < width; ++c) s.mean[c] /= static_cast<double>(n);
    for (size_t r = 0; r < n; ++r) {
        for (int c = 0; c < width; ++c) {
            const double d = rows[r * width + c] - s.mean[c];
            s.stdev[c] += d * d;
        }
    }
    for (int c = 0; c < width; ++c) {
        s.stdev[c] = std::max(std::sqrt(s.stdev[c] / static_cast<double>(n)), 1e-6);
    }
    return s;
}

void normalize(std::vector<double>& rows, const NormStats& stats) {
    const int w = stats.channels();
    if (w == 0 || rows.size() % w != 0) throw ShapeMismatch("normalize: width mismatch");
    for (size_t i = 0; i < rows.size(); ++i) {
        const int c = static_cast<int>(i % w);
        rows[i] = (rows[i] - stats.mean[c]) / stats.stdev[c];
    }
}

void denormalize(std::vector<double>& rows, const NormStats& stats) {
    const int w = stats.channels();
    if (w == 0 || rows.size() % w != 0) throw ShapeMismatch("denormalize: width mismatch");
    for (size_t i = 0; i < rows.size(); ++i) {
        const int c = static_cast<int>(i % w);
        rows[i] = rows[i] * stats.stdev[c] + stats.mean[c];
    }
}

}  // namespace magnet::data

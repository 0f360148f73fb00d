#include "magnet/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace magnet::metrics {

void FeatureSet::add_row(const std::vector<double>& row) {
    if (dim == 0) dim = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != dim) {
        throw DimensionMismatch("FeatureSet: inconsistent row width");
    }
    rows.insert(rows.end(), row.begin(), row.end());
}

namespace {

Eigen::VectorXd mean_of(const FeatureSet& s) {
    const int n = s.size();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(s.dim);
    for (int i = 0; i < n; ++i) {
        mu += Eigen::Map<const Eigen::VectorXd>(s.row(i), s.dim);
    }
    return mu / n;
}

Eigen::MatrixXd covariance_of(const FeatureSet& s, const Eigen::VectorXd& mu) {
    const int n = s.size();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(s.dim, s.dim);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd d =
            Eigen::Map<const Eigen::VectorXd>(s.row(i), s.dim) - mu;
        cov += d * d.transpose();
    }
    return cov / (n - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev[i] = std::sqrt(std::max(0.0, ev[i]));
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double pearson(const double* a, const double* b, int n, int stride, bool* ok) {
    double ma = 0, mb = 0;
    for (int i = 0; i < n; ++i) {
        ma += a[static_cast<size_t>(i) * stride];
        mb += b[static_cast<size_t>(i) * stride];
    }
    ma /= n;
    mb /= n;
    double num = 0, va = 0, vb = 0;
    for (int i = 0; i < n; ++i) {
        const double da = a[static_cast<size_t>(i) * stride] - ma;
        const double db = b[static_cast<size_t>(i) * stride] - mb;
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va <= 0.0 || vb <= 0.0) {
        *ok = false;
        return 0.0;
    }
    *ok = true;
    return num / std::sqrt(va * vb);
}

}  // namespace

double frechet_distance(const FeatureSet& gen, const FeatureSet& real) {
    if (gen.dim != real.dim) throw DimensionMismatch("frechet: feature dims differ");
    if (gen.size() < 2 || real.size() < 2) {
        throw TooFewSamples("frechet: need at least two samples per set");
    }
    const Eigen::VectorXd mu_g = mean_of(gen);
    const Eigen::VectorXd mu_r = mean_of(real);
    const Eigen::MatrixXd cov_g = covariance_of(gen, mu_g);
    const Eigen::MatrixXd cov_r = covariance_of(real, mu_r);

    const Eigen::MatrixXd half = psd_sqrt(cov_g);
    Eigen::MatrixXd inner = half * cov_r * half;
    inner = 0.5 * (inner + inner.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    double tr_sqrt = 0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        tr_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()[i]));
    }
    const double d2 = (mu_g - mu_r).squaredNorm() + cov_g.trace() + cov_r.trace() -
                      2.0 * tr_sqrt;
    return std::max(0.0, d2);
}

double diversity(const std::vector<FeatureSet>& per_condition) {
    if (per_condition.empty()) throw TooFewSamples("diversity: no conditions");
    double acc = 0;
    for (const auto& s : per_condition) {
        const int n = s.size();
        if (n < 2) throw TooFewSamples("diversity: need >= 2 samples per condition");
        const Eigen::VectorXd mu = mean_of(s);
        double var_sum = 0;
        for (int i = 0; i < n; ++i) {
            var_sum += (Eigen::Map<const Eigen::VectorXd>(s.row(i), s.dim) - mu)
                           .squaredNorm();
        }
        acc += var_sum / ((n - 1) * static_cast<double>(s.dim));
    }
    return acc / per_condition.size();
}

PairTrajectories pair_trajectories(const data::MotionSequence& seq, int agent_a,
                                   int agent_b) {
    PairTrajectories out;
    out.T = seq.T;
    out.channels = seq.J * 3;
    out.a.resize(static_cast<size_t>(seq.T) * out.channels);
    out.b.resize(static_cast<size_t>(seq.T) * out.channels);
    for (int t = 0; t < seq.T; ++t) {
        const auto pa = data::joint_positions_frame(seq, t, agent_a);
        const auto pb = data::joint_positions_frame(seq, t, agent_b);
        for (int j = 0; j < seq.J; ++j) {
            for (int k = 0; k < 3; ++k) {
                out.a[static_cast<size_t>(t) * out.channels + j * 3 + k] = pa[j][k];
                out.b[static_cast<size_t>(t) * out.channels + j * 3 + k] = pb[j][k];
            }
        }
    }
    return out;
}

double motion_interaction(const PairTrajectories& gen,
                          const PairTrajectories& real, int* skipped) {
    if (gen.T != real.T || gen.channels != real.channels) {
        throw LengthMismatch("motion_interaction: trajectory shapes differ");
    }
    if (gen.T < 2) throw LengthMismatch("motion_interaction: too short");
    int used = 0, skip = 0;
    double acc = 0;
    for (int c = 0; c < gen.channels; ++c) {
        bool ok_g = false, ok_r = false;
        const double rho_g =
            pearson(gen.a.data() + c, gen.b.data() + c, gen.T, gen.channels, &ok_g);
        const double rho_r = pearson(real.a.data() + c, real.b.data() + c, real.T,
                                     real.channels, &ok_r);
        if (!ok_g || !ok_r) {
            ++skip;
            continue;
        }
        acc += std::abs(rho_r - rho_g);
        ++used;
    }
    if (skipped) *skipped = skip;
    return used == 0 ? 0.0 : acc / used;
}

double foot_skating(const data::MotionSequence& seq, double contact_height) {
    double acc = 0;
    int contacts = 0;
    for (int p = 0; p < seq.P; ++p) {
        if (!seq.presence[p]) continue;
        std::vector<geom::Vec3> prev = data::joint_positions_frame(seq, 0, p);
        for (int t = 0; t + 1 < seq.T; ++t) {
            const auto next = data::joint_positions_frame(seq, t + 1, p);
            for (int foot : {body::kLeftFoot, body::kRightFoot}) {
                if (prev[foot].y() < contact_height) {
                    const double dx = next[foot].x() - prev[foot].x();
                    const double dz = next[foot].z() - prev[foot].z();
                    acc += std::sqrt(dx * dx + dz * dz);
                    ++contacts;
                }
            }
            prev = next;
        }
    }
    return contacts == 0 ? 0.0 : acc / contacts;
}

double interpenetration_frames(const std::vector<std::vector<body::Capsule>>& a,
                               const std::vector<std::vector<body::Capsule>>& b) {
    if (a.size() != b.size()) {
        throw LengthMismatch("interpenetration: frame counts differ");
    }
    if (a.empty()) return 0.0;
    double acc = 0;
    for (size_t t = 0; t < a.size(); ++t) {
        for (const auto& ca : a[t]) {
            for (const auto& cb : b[t]) {
                acc += body::capsule_penetration(ca, cb);
            }
        }
    }
    return acc / static_cast<double>(a.size());
}

double interpenetration(const data::MotionSequence& seq) {
    std::vector<int> agents;
    for (int p = 0; p < seq.P; ++p) {
        if (seq.presence[p]) agents.push_back(p);
    }
    if (agents.size() < 2) return 0.0;
    std::vector<body::Skeleton> skels;
    for (int p : agents) skels.push_back(body::skeleton_from_shape(seq.beta[p]));

    double acc = 0;
    for (int t = 0; t < seq.T; ++t) {
        std::vector<std::vector<body::Capsule>> caps(agents.size());
        for (size_t i = 0; i < agents.size(); ++i) {
            caps[i] = body::body_capsules(
                skels[i], data::joint_positions_frame(seq, t, agents[i]));
        }
        for (size_t i = 0; i < agents.size(); ++i) {
            for (size_t j = i + 1; j < agents.size(); ++j) {
                for (const auto& ca : caps[i]) {
                    for (const auto& cb : caps[j]) {
                        acc += body::capsule_penetration(ca, cb);
                    }
                }
            }
        }
    }
    return acc / seq.T;
}

MinErrors min_joint_errors(const std::vector<data::MotionSequence>& samples,
                           const data::MotionSequence& gt) {
    if (samples.empty()) throw ShapeMismatch("min_joint_errors: no samples");
    MinErrors best{1e300, 1e300};
    for (const auto& s : samples) {
        if (s.T != gt.T || s.P != gt.P || s.J != gt.J) {
            throw ShapeMismatch("min_joint_errors: sample/gt shapes differ");
        }
        double pos_acc = 0, vel_acc = 0;
        int pos_n = 0, vel_n = 0;
        for (int p = 0; p < gt.P; ++p) {
            if (!gt.presence[p]) continue;
            std::vector<geom::Vec3> prev_s, prev_g;
            for (int t = 0; t < gt.T; ++t) {
                const auto ps = data::joint_positions_frame(s, t, p);
                const auto pg = data::joint_positions_frame(gt, t, p);
                for (int j = 0; j < gt.J; ++j) {
                    pos_acc += (ps[j] - pg[j]).norm();
                    ++pos_n;
                    if (t > 0) {
                        const geom::Vec3 vs = ps[j] - prev_s[j];
                        const geom::Vec3 vg = pg[j] - prev_g[j];
                        vel_acc += (vs - vg).norm();
                        ++vel_n;
                    }
                }
                prev_s = ps;
                prev_g = pg;
            }
        }
        best.mpjpe = std::min(best.mpjpe, pos_acc / std::max(1, pos_n));
        best.mpjve = std::min(best.mpjve, vel_acc / std::max(1, vel_n));
    }
    return best;
}

FeatureSet motion_features(const std::vector<data::MotionSequence>& samples,
                           int window) {
    FeatureSet out;
    for (const auto& seq : samples) {
        if (!seq.has_derived) {
            throw MissingDerivedTransforms("motion_features: preprocess first");
        }
        std::vector<int> agents;
        for (int p = 0; p < seq.P; ++p) {
            if (seq.presence[p]) agents.push_back(p);
        }
        if (agents.empty()) continue;
        for (int w0 = 0; w0 + window <= seq.T; w0 += window) {
            std::vector<double> row;
            row.reserve(static_cast<size_t>(window) * agents.size() * seq.J * 3);
            for (int t = w0; t < w0 + window; ++t) {
                const auto anchor = geom::invert(seq.canonical_at(t, agents[0]));
                for (int p : agents) {
                    const auto joints = data::joint_positions_frame(seq, t, p);
                    for (const auto& j : joints) {
                        const geom::Vec3 local = geom::apply(anchor, j);
                        row.push_back(local.x());
                        row.push_back(local.y());
                        row.push_back(local.z());
                    }
                }
            }
            out.add_row(row);
        }
    }
    return out;
}

std::string report_text(const EvalReport& report) {
    std::string out = "# metric value n_samples config_hash\n";
    char buf[128];
    for (const auto& [name, value] : report.values) {
        std::snprintf(buf, sizeof(buf), "%-8s %.6f %d %s\n", name.c_str(), value,
                      report.n_samples, report.config_hash.c_str());
        out += buf;
    }
    out += "\n";
    for (const auto& [name, value] : report.values) {
        std::snprintf(buf, sizeof(buf), "%s=%.17g\n", name.c_str(), value);
        out += buf;
    }
    out += "n_samples=" + std::to_string(report.n_samples) + "\n";
    out += "config_hash=" + report.config_hash + "\n";
    return out;
}

}  // namespace magnet::metrics

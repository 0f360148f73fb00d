#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "magnet/dataset.hpp"

namespace magnet::data {

namespace {

constexpr int kSchemaVersion = 1;

void append_number(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

void append_transform(std::string& out, const geom::RigidTransform& T) {
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            append_number(out, T.R(r, c));
            out += ' ';
        }
    }
    for (int i = 0; i < 3; ++i) {
        append_number(out, T.t(i));
        if (i < 2) out += ' ';
    }
    out += '\n';
}

class LineReader {
  public:
    explicit LineReader(const std::string& path) : path_(path), in_(path) {
        if (!in_) throw IoError("cannot open " + path);
    }

    /// Next non-empty line; throws ParseError at end of file.
    std::string next(const char* what) {
        std::string line;
        while (std::getline(in_, line)) {
            ++lineno_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return line;
        }
        throw ParseError(path_ + ": unexpected end of file, expected " +
                         std::string(what));
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(path_ + ":" + std::to_string(lineno_) + ": " + msg);
    }

    int lineno() const { return lineno_; }

  private:
    std::string path_;
    std::ifstream in_;
    int lineno_ = 0;
};

std::vector<double> parse_numbers(LineReader& r, const std::string& line,
                                  size_t expect, const char* field) {
    std::vector<double> out;
    out.reserve(expect);
    const char* s = line.c_str();
    char* end = nullptr;
    while (*s) {
        while (*s == ' ' || *s == '\t') ++s;
        if (!*s) break;
        const double v = std::strtod(s, &end);
        if (end == s) r.fail(std::string("bad number in field ") + field);
        out.push_back(v);
        s = end;
    }
    if (out.size() != expect) {
        r.fail(std::string("field ") + field + ": expected " +
               std::to_string(expect) + " values, got " + std::to_string(out.size()));
    }
    return out;
}

/// "key <numbers...>" line with a fixed key.
std::vector<double> parse_keyed(LineReader& r, const char* key, size_t count) {
    const std::string line = r.next(key);
    const size_t klen = std::strlen(key);
    if (line.compare(0, klen, key) != 0 ||
        (line.size() > klen && line[klen] != ' ')) {
        r.fail(std::string("expected field '") + key + "'");
    }
    return parse_numbers(r, line.substr(klen), count, key);
}

void expect_header(LineReader& r, const char* name) {
    const std::string line = r.next(name);
    if (line != name) r.fail(std::string("expected section '") + name + "'");
}

geom::RigidTransform parse_transform(LineReader& r, const char* field) {
    const auto v = parse_numbers(r, r.next(field), 12, field);
    geom::RigidTransform T;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) T.R(i, j) = v[i * 3 + j];
    }
    T.t = geom::Vec3(v[9], v[10], v[11]);
    return T;
}

}  // namespace

void save_motion(const MotionSequence& seq, const std::string& path) {
    std::string out;
    out.reserve(static_cast<size_t>(seq.T) * seq.P * 1200 + 256);
    out += "schema_version " + std::to_string(kSchemaVersion) + "\n";
    out += "fps ";
    append_number(out, seq.fps);
    out += "\nP " + std::to_string(seq.P);
    out += "\nT " + std::to_string(seq.T);
    out += "\nJ " + std::to_string(seq.J);
    out += "\npresence";
    for (auto b : seq.presence) out += b ? " 1" : " 0";
    out += "\nbeta\n";
    for (int p = 0; p < seq.P; ++p) {
        for (int k = 0; k < 10; ++k) {
            append_number(out, seq.beta[p].beta[k]);
            out += k < 9 ? " " : "\n";
        }
    }
    out += "theta\n";
    for (int t = 0; t < seq.T; ++t) {
        for (int p = 0; p < seq.P; ++p) {
            for (int j = 0; j < seq.J; ++j) {
                const auto& v = seq.theta_at(t, p, j).v;
                for (int k = 0; k < 6; ++k) {
                    append_number(out, v[k]);
                    out += (j == seq.J - 1 && k == 5) ? "" : " ";
                }
            }
            out += '\n';
        }
    }
    out += "root_world\n";
    for (int t = 0; t < seq.T; ++t) {
        for (int p = 0; p < seq.P; ++p) append_transform(out, seq.root_at(t, p));
    }
    if (seq.has_derived) {
        out += "can_to_root\n";
        for (int t = 0; t < seq.T; ++t) {
            for (int p = 0; p < seq.P; ++p) {
                append_transform(out, seq.can_to_root[static_cast<size_t>(t) * seq.P + p]);
            }
        }
        out += "delta_can\n";
        for (int t = 0; t < seq.T; ++t) {
            for (int p = 0; p < seq.P; ++p) {
                append_transform(out, seq.delta_can[static_cast<size_t>(t) * seq.P + p]);
            }
        }
        out += "self_to_partner\n";
        for (int t = 0; t < seq.T; ++t) {
            for (int p = 0; p < seq.P; ++p) {
                for (int s = 0; s < seq.P - 1; ++s) {
                    append_transform(out, seq.partner_at(t, p, s));
                }
            }
        }
    }
    out += "end\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << out;
    if (!f) throw IoError("write failed: " + path);
}

MotionSequence load_motion(const std::string& path) {
    LineReader r(path);

    const auto schema = parse_keyed(r, "schema_version", 1);
    if (static_cast<int>(schema[0]) != kSchemaVersion) {
        throw SchemaVersionMismatch(path + ": schema_version " +
                                    std::to_string(static_cast<int>(schema[0])) +
                                    " (supported: 1)");
    }

    MotionSequence seq;
    seq.fps = parse_keyed(r, "fps", 1)[0];
    seq.P = static_cast<int>(parse_keyed(r, "P", 1)[0]);
    seq.T = static_cast<int>(parse_keyed(r, "T", 1)[0]);
    seq.J = static_cast<int>(parse_keyed(r, "J", 1)[0]);
    if (seq.P < 1 || seq.T < 1) r.fail("P and T must be positive");
    if (seq.J != body::kNumJoints) r.fail("unsupported joint count");

    const auto pres = parse_keyed(r, "presence", seq.P);
    seq.presence.resize(seq.P);
    for (int p = 0; p < seq.P; ++p) seq.presence[p] = pres[p] != 0.0;

    expect_header(r, "beta");
    seq.beta.resize(seq.P);
    for (int p = 0; p < seq.P; ++p) {
        const auto v = parse_numbers(r, r.next("beta row"), 10, "beta");
        std::copy(v.begin(), v.end(), seq.beta[p].beta.begin());
    }

    expect_header(r, "theta");
    seq.theta.resize(static_cast<size_t>(seq.T) * seq.P * seq.J);
    for (int t = 0; t < seq.T; ++t) {
        for (int p = 0; p < seq.P; ++p) {
            const auto v = parse_numbers(r, r.next("theta row"),
                                         static_cast<size_t>(seq.J) * 6, "theta");
            for (int j = 0; j < seq.J; ++j) {
                for (int k = 0; k < 6; ++k) seq.theta_at(t, p, j).v[k] = v[j * 6 + k];
            }
        }
    }

    expect_header(r, "root_world");
    seq.root_world.resize(static_cast<size_t>(seq.T) * seq.P);
    for (int t = 0; t < seq.T; ++t) {
        for (int p = 0; p < seq.P; ++p) seq.root_at(t, p) = parse_transform(r, "root_world");
    }

    std::string section = r.next("derived section or end");
    if (section == "can_to_root") {
        const size_t n = static_cast<size_t>(seq.T) * seq.P;
        seq.can_to_root.resize(n);
        for (size_t i = 0; i < n; ++i) seq.can_to_root[i] = parse_transform(r, "can_to_root");
        expect_header(r, "delta_can");
        seq.delta_can.resize(n);
        for (size_t i = 0; i < n; ++i) seq.delta_can[i] = parse_transform(r, "delta_can");
        expect_header(r, "self_to_partner");
        seq.self_to_partner.resize(n * (seq.P - 1));
        for (size_t i = 0; i < n * (seq.P - 1); ++i) {
            seq.self_to_partner[i] = parse_transform(r, "self_to_partner");
        }
        seq.has_derived = true;
        // canonical frames are not serialized; rebuild from root and residual.
        seq.canonical.resize(n);
        for (size_t i = 0; i < n; ++i) {
            seq.canonical[i] = geom::compose(seq.root_world[i], geom::invert(seq.can_to_root[i]));
        }
        section = r.next("end");
    }
    if (section != "end") r.fail("expected 'end', got '" + section + "'");
    return seq;
}

}  // namespace magnet::data

#include "magnet/nn/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace magnet::nn {

namespace {

constexpr int kSchemaVersion = 1;

void append_values(std::string& out, const std::vector<double>& v) {
    char buf[40];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
        out += buf;
        out += (i + 1) % 8 == 0 || i + 1 == v.size() ? '\n' : ' ';
    }
    if (v.empty()) out += '\n';
}

class Reader {
  public:
    explicit Reader(const std::string& path) : path_(path), in_(path) {
        if (!in_) throw IoError("cannot open " + path);
    }
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
    /// Reads exactly n whitespace-separated doubles spanning multiple lines.
    std::vector<double> read_values(std::size_t n, const char* what) {
        std::vector<double> out;
        out.reserve(n);
        while (out.size() < n) {
            const std::string line = next(what);
            const char* s = line.c_str();
            char* end = nullptr;
            while (*s) {
                while (*s == ' ' || *s == '\t') ++s;
                if (!*s) break;
                const double v = std::strtod(s, &end);
                if (end == s) fail(std::string("bad number in ") + what);
                out.push_back(v);
                s = end;
            }
        }
        if (out.size() != n) fail(std::string("too many values in ") + what);
        return out;
    }

  private:
    std::string path_;
    std::ifstream in_;
    int lineno_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const std::string& model_kind,
                     const std::vector<std::pair<std::string, std::string>>& config,
                     const ParamStore& params, const AdamW* optimizer) {
    std::string out;
    out += "schema_version " + std::to_string(kSchemaVersion) + "\n";
    out += "model_kind " + model_kind + "\n";
    out += "config " + std::to_string(config.size()) + "\n";
    for (const auto& [k, v] : config) out += k + " " + v + "\n";
    out += "params " + std::to_string(params.size()) + "\n";
    for (const auto& [name, tensor] : params.all()) {
        out += "param " + name + " " + std::to_string(tensor.shape().size());
        for (int d : tensor.shape()) out += " " + std::to_string(d);
        out += "\n";
        append_values(out, tensor.values());
    }
    if (optimizer) {
        out += "optimizer adamw " + std::to_string(optimizer->step_count()) + "\n";
        auto& moments = const_cast<AdamW*>(optimizer)->moments();
        out += "moments " + std::to_string(moments.size()) + "\n";
        for (const auto& [name, mv] : moments) {
            out += "moment " + name + " " + std::to_string(mv.m.size()) + "\n";
            append_values(out, mv.m);
            append_values(out, mv.v);
        }
    }
    out += "end\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << out;
    if (!f) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    LoadedCheckpoint ck;

    std::istringstream h(r.next("schema_version"));
    std::string key;
    h >> key >> ck.schema_version;
    if (key != "schema_version") r.fail("expected schema_version");
    if (ck.schema_version != kSchemaVersion) {
        throw SchemaVersionMismatch(path + ": checkpoint schema_version " +
                                    std::to_string(ck.schema_version));
    }

    std::istringstream mk(r.next("model_kind"));
    mk >> key >> ck.model_kind;
    if (key != "model_kind" || ck.model_kind.empty()) r.fail("expected model_kind");

    std::istringstream ch(r.next("config"));
    std::size_t n_config = 0;
    ch >> key >> n_config;
    if (key != "config") r.fail("expected config");
    for (std::size_t i = 0; i < n_config; ++i) {
        const std::string line = r.next("config entry");
        const auto sp = line.find(' ');
        if (sp == std::string::npos) r.fail("bad config entry");
        ck.config[line.substr(0, sp)] = line.substr(sp + 1);
    }

    std::istringstream ph(r.next("params"));
    std::size_t n_params = 0;
    ph >> key >> n_params;
    if (key != "params") r.fail("expected params");
    for (std::size_t i = 0; i < n_params; ++i) {
        std::istringstream pl(r.next("param header"));
        std::string name;
        int rank = 0;
        pl >> key >> name >> rank;
        if (key != "param" || rank < 0) r.fail("bad param header");
        Shape shape(rank);
        for (int d = 0; d < rank; ++d) pl >> shape[d];
        if (!pl) r.fail("bad param shape");
        auto values = r.read_values(shape_numel(shape), name.c_str());
        ck.params.emplace(name, std::make_pair(std::move(shape), std::move(values)));
    }

    std::string line = r.next("optimizer or end");
    if (line.rfind("optimizer", 0) == 0) {
        std::istringstream ol(line);
        std::string kind;
        ol >> key >> kind >> ck.optimizer_step;
        if (kind != "adamw") r.fail("unknown optimizer kind");
        ck.has_optimizer = true;
        std::istringstream ml(r.next("moments"));
        std::size_t n_moments = 0;
        ml >> key >> n_moments;
        if (key != "moments") r.fail("expected moments");
        for (std::size_t i = 0; i < n_moments; ++i) {
            std::istringstream hm(r.next("moment header"));
            std::string name;
            std::size_t count = 0;
            hm >> key >> name >> count;
            if (key != "moment") r.fail("bad moment header");
            AdamW::MomentPair mp;
            mp.m = r.read_values(count, "moment m");
            mp.v = r.read_values(count, "moment v");
            ck.optimizer_moments.emplace(name, std::move(mp));
        }
        line = r.next("end");
    }
    if (line != "end") r.fail("expected 'end'");
    return ck;
}

void apply_checkpoint(ParamStore& params, const LoadedCheckpoint& ckpt) {
    if (params.size() != ckpt.params.size()) {
        throw ShapeMismatch("apply_checkpoint: parameter count mismatch");
    }
    for (auto& [name, tensor] : params.all()) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end()) {
            throw ShapeMismatch("apply_checkpoint: missing parameter " + name);
        }
        if (it->second.first != tensor.shape()) {
            throw ShapeMismatch("apply_checkpoint: shape mismatch for " + name);
        }
        Tensor t = tensor;
        t.raw_values() = it->second.second;
    }
}

}  // namespace magnet::nn

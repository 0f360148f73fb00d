#include "magnet/config.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace magnet::cfg {

const std::map<std::string, std::string>& RunConfig::defaults() {
    static const std::map<std::string, std::string> kDefaults = {
        // synthetic data
        {"data.mode", "orbit"},
        {"data.P", "2"},
        {"data.T", "64"},
        {"data.fps", "30"},
        {"data.num_train", "4"},
        {"data.num_val", "2"},
        {"data.train_seed", "0"},
        {"data.val_seed", "1000"},
        {"data.radius", "1"},
        {"data.lag", "8"},
        {"data.mirror_augment", "0"},
        // vqvae
        {"vqvae.d_vq", "32"},
        {"vqvae.K", "64"},
        {"vqvae.omega", "4"},
        {"vqvae.lambda_j", "1"},
        {"vqvae.lambda_r", "1"},
        {"vqvae.commit_beta", "0.25"},
        {"vqvae.huber_delta", "1"},
        {"vqvae.steps", "5000"},
        {"vqvae.batch", "4"},
        {"vqvae.lr", "0.0002"},
        {"vqvae.weight_decay", "0.0001"},
        {"vqvae.seed", "0"},
        {"vqvae.dead_code_steps", "2000"},
        {"vqvae.stop_fraction", "0"},
        // dfot
        {"dfot.d", "64"},
        {"dfot.layers", "2"},
        {"dfot.heads", "4"},
        {"dfot.d_emb", "32"},
        {"dfot.P_max", "4"},
        {"dfot.lambda0", "1"},
        {"dfot.lambda1", "1"},
        {"dfot.lambda2", "1"},
        {"dfot.lambda3", "1"},
        {"dfot.huber_delta", "1"},
        {"dfot.use_vqvae", "1"},
        {"dfot.use_partner", "1"},
        {"dfot.steps", "10000"},
        {"dfot.batch", "2"},
        {"dfot.lr", "0.0002"},
        {"dfot.weight_decay", "0.0001"},
        {"dfot.seed", "0"},
        {"dfot.mask_prob", "0.25"},
        {"dfot.shuffle_identities", "1"},
        {"dfot.stop_fraction", "0"},
        // sampling
        {"sample.steps", "30"},
        {"sample.history_len", "4"},
        {"sample.target_agent", "0"},
        {"sample.tt_offset", "0"},
        {"sample.keyframes", "0,8,15"},
        {"sample.window", "16"},
        {"sample.overlap", "4"},
        {"sample.total", "40"},
        {"sample.samples", "1"},
        {"sample.seed", "0"},
        {"sample.guidance_w", "1"},
        {"sample.controller", "0"},
        {"sample.controlled", "1"},
        {"sample.snap_z", "1"},
        // metrics
        {"metrics.contact_height", "0.05"},
        {"metrics.fd_window", "16"},
    };
    return kDefaults;
}

RunConfig RunConfig::from_defaults() {
    RunConfig c;
    c.values_ = defaults();
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!defaults().count(key)) {
        throw ConfigError("unknown config key: " + key);
    }
    values_[key] = value;
}

void RunConfig::apply_line(const std::string& raw, const std::string& where) {
    std::string line = raw;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) return;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
        throw ConfigError(where + ": expected key=value, got '" + line + "'");
    }
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    set(key, value);
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    RunConfig c = from_defaults();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        c.apply_line(line, path + ":" + std::to_string(lineno));
    }
    return c;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
}

int RunConfig::get_int(const std::string& key) const {
    try {
        return std::stoi(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not an integer");
    }
}

double RunConfig::get_double(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " is not a number");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config key " + key + " is not a boolean");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + " is not an integer list");
        }
    }
    return out;
}

std::string RunConfig::resolved_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string RunConfig::hash() const { return fnv1a_hex(resolved_text()); }

void RunConfig::write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config: " + path);
    out << "# resolved run configuration (hash " << hash() << ")\n";
    out << resolved_text();
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace magnet::cfg

#pragma once

#include <map>
#include <string>
#include <vector>

#include "magnet/errors.hpp"

namespace magnet::cfg {

/// Flat key=value run configuration. '#' starts a comment, keys must belong
/// to the documented schema (unknown keys are rejected), and every run
/// writes its resolved form next to the outputs.
class RunConfig {
  public:
    static const std::map<std::string, std::string>& defaults();

    static RunConfig from_defaults();
    static RunConfig from_file(const std::string& path);
    /// Parse "key=value" text (used for --set overrides too).
    void apply_line(const std::string& line, const std::string& where);
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;

    /// All keys in sorted order, one per line.
    std::string resolved_text() const;
    /// FNV-1a 64 of the resolved text, hex.
    std::string hash() const;
    void write(const std::string& path) const;

  private:
    std::map<std::string, std::string> values_;
};

std::string fnv1a_hex(const std::string& text);

}  // namespace magnet::cfg

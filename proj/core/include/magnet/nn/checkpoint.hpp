#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "magnet/nn/optim.hpp"

namespace magnet::nn {

struct LoadedCheckpoint {
    int schema_version = 1;
    std::string model_kind;
    std::map<std::string, std::string> config;
    std::map<std::string, std::pair<Shape, std::vector<double>>> params;
    bool has_optimizer = false;
    std::int64_t optimizer_step = 0;
    std::map<std::string, AdamW::MomentPair> optimizer_moments;
};

/// Text checkpoint: schema version, model kind tag, config echo, named
/// parameter tensors at 17 significant digits, optional optimizer state.
void save_checkpoint(const std::string& path, const std::string& model_kind,
                     const std::vector<std::pair<std::string, std::string>>& config,
                     const ParamStore& params, const AdamW* optimizer = nullptr);

LoadedCheckpoint load_checkpoint(const std::string& path);

/// Copy loaded values into an existing store. Throws ShapeMismatch on any
/// name or shape difference in either direction.
void apply_checkpoint(ParamStore& params, const LoadedCheckpoint& ckpt);

}  // namespace magnet::nn

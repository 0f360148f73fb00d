#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "magnet/nn/layers.hpp"

namespace magnet::nn {

struct AdamWConfig {
    double base_lr = 2e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t total_steps = 1;
};

/// Decoupled-weight-decay Adam with bias correction and a cosine learning
/// rate decayed from base_lr (step 0) to exactly zero at total_steps.
class AdamW {
  public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    double lr_at(std::int64_t step) const;
    std::int64_t step_count() const { return step_count_; }

    /// One update from the accumulated gradients; zeroes them afterwards.
    void step(ParamStore& params);

    const AdamWConfig& config() const { return cfg_; }

    struct MomentPair {
        std::vector<double> m, v;
    };
    std::map<std::string, MomentPair>& moments() { return moments_; }
    void set_step_count(std::int64_t n) { step_count_ = n; }

  private:
    AdamWConfig cfg_;
    std::int64_t step_count_ = 0;
    std::map<std::string, MomentPair> moments_;
};

}  // namespace magnet::nn

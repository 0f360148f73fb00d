#include "magnet/nn/optim.hpp"

#include <cmath>

namespace magnet::nn {

double AdamW::lr_at(std::int64_t step) const {
    if (step >= cfg_.total_steps) return 0.0;
    if (step <= 0) return cfg_.base_lr;
    const double x = static_cast<double>(step) / static_cast<double>(cfg_.total_steps);
    return cfg_.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

void AdamW::step(ParamStore& params) {
    const double lr = lr_at(step_count_);
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (auto& [name, tensor] : params.all()) {
        Tensor param = tensor;
        auto& vals = param.raw_values();
        auto& grads = param.raw_grad();
        if (grads.size() != vals.size()) continue;  // never touched by backward
        auto& mom = moments_[name];
        if (mom.m.size() != vals.size()) {
            mom.m.assign(vals.size(), 0.0);
            mom.v.assign(vals.size(), 0.0);
        }
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double g = grads[i];
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            vals[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                             cfg_.weight_decay * vals[i]);
            grads[i] = 0.0;
        }
    }
}

}  // namespace magnet::nn

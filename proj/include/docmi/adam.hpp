#pragma once

#include <cstdint>

#include "docmi/params.hpp"

namespace docmi {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a named parameter set. Moment accumulators are
// created lazily from the first step's layout; the step counter increases by
// one per step.
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    // Applies one update in place. grads must share the params layout.
    void step(ParameterSet& params, const ParameterSet& grads);

    std::int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    ParameterSet m_;
    ParameterSet v_;
    std::int64_t t_ = 0;
    bool initialized_ = false;
};

} // namespace docmi

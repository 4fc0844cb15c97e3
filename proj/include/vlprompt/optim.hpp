#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vlprompt/tensor.hpp"

namespace vlp {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;   // decoupled, applied as lr_eff * wd * w
    double warmup_frac = 0.0;    // fraction of total_steps ramping lr linearly from 0
    std::int64_t total_steps = 0;  // required when warmup_frac > 0
};

/// Bias-corrected adaptive-moment optimizer with linear warmup.
///
/// Moment buffers are keyed by parameter name and created on first use, in
/// the parameter's dtype. One step: t += 1;
///   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
///   w -= lr_eff * ( (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps) + wd*w )
/// where lr_eff ramps t/W for the first W = round(warmup_frac*total_steps)
/// steps and equals lr afterwards.
class Adam {
public:
    explicit Adam(AdamConfig cfg);

    /// Applies one update to every (name, tensor) pair; parameters with no
    /// accumulated gradient are skipped (their moments do not advance).
    /// A NaN gradient raises DomainError naming the parameter.
    void step(const NamedTensors& params);

    std::int64_t step_count() const { return step_; }
    double effective_lr() const;  // lr that the *next* step will use
    const AdamConfig& config() const { return cfg_; }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    AdamConfig cfg_;
    std::int64_t step_ = 0;
    std::map<std::string, Moments> state_;
};

}  // namespace vlp

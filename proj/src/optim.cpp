#include "vlprompt/optim.hpp"

#include <cmath>

#include "vlprompt/errors.hpp"

namespace vlp {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
    if (cfg_.lr < 0) throw ConfigError("adam: learning rate must be >= 0");
    if (cfg_.weight_decay < 0) throw ConfigError("adam: weight decay must be >= 0");
    if (cfg_.warmup_frac < 0 || cfg_.warmup_frac > 1) throw ConfigError("adam: warmup fraction must be in [0, 1]");
    if (cfg_.warmup_frac > 0 && cfg_.total_steps <= 0) {
        throw ConfigError("adam: warmup requires a positive total step count");
    }
}

double Adam::effective_lr() const {
    const std::int64_t t = step_ + 1;
    const auto warm = static_cast<std::int64_t>(std::llround(cfg_.warmup_frac * static_cast<double>(cfg_.total_steps)));
    if (warm > 0 && t <= warm) {
        return cfg_.lr * static_cast<double>(t) / static_cast<double>(warm);
    }
    return cfg_.lr;
}

void Adam::step(const NamedTensors& params) {
    const double lr_eff = effective_lr();
    step_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

    for (const auto& [name, param] : params) {
        Tensor p = param;
        if (!p.has_grad()) continue;
        const std::int64_t n = p.numel();
        auto& mom = state_[name];
        if (mom.m.empty()) {
            mom.m.assign(static_cast<std::size_t>(n), 0.0);
            mom.v.assign(static_cast<std::size_t>(n), 0.0);
        } else if (static_cast<std::int64_t>(mom.m.size()) != n) {
            throw ShapeError("adam: moment buffers for '" + name + "' do not match parameter shape " +
                             shape_str(p.shape()));
        }
        for (std::int64_t i = 0; i < n; ++i) {
            const double g = p.grad_at(i);
            if (std::isnan(g)) {
                throw DomainError("adam: NaN gradient in parameter '" + name + "' at index " + std::to_string(i));
            }
            const auto ui = static_cast<std::size_t>(i);
            mom.m[ui] = cfg_.beta1 * mom.m[ui] + (1.0 - cfg_.beta1) * g;
            mom.v[ui] = cfg_.beta2 * mom.v[ui] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = mom.m[ui] / bc1;
            const double vhat = mom.v[ui] / bc2;
            const double w = p.value_at(i);
            const double upd = lr_eff * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w);
            if (p.dtype() == Dtype::F32) {
                p.data_mut<float>()[ui] = static_cast<float>(w - upd);
            } else {
                p.data_mut<double>()[ui] = w - upd;
            }
        }
    }
}

}  // namespace vlp

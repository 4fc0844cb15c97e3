#pragma once

// Central finite-difference oracle for gradients. Kept independent of the
// autodiff implementation: it only calls forward evaluations through the
// public Tensor API and perturbs leaf values in place.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vlprompt/tensor.hpp"

namespace vlptest {

using ScalarFn = std::function<vlp::Tensor(std::vector<vlp::Tensor>&)>;

struct GradCheckReport {
    double max_err = 0.0;       // max of |ad - fd| / (atol + rtol * max(|ad|, |fd|))
    std::string worst;          // "input i coord j: ad=..., fd=..."
    bool ok(double budget = 1.0) const { return max_err <= budget; }
};

/// Compares backward() gradients of fn(inputs) against central finite
/// differences for every coordinate of every tracked input. The criterion is
/// |ad - fd| <= atol + rtol * max(|ad|, |fd|), reported as a normalized error.
inline GradCheckReport grad_check(const ScalarFn& fn, std::vector<vlp::Tensor>& inputs, double rtol,
                                  double atol = 1e-7, double h_base = 1e-5) {
    for (auto& t : inputs) t.zero_grad();
    vlp::Tensor loss = fn(inputs);
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs) analytic.push_back(t.grad_to_doubles());

    GradCheckReport rep;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        vlp::Tensor& t = inputs[k];
        if (!t.requires_grad()) continue;
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const double x0 = t.value_at(i);
            const double h = h_base * std::max(1.0, std::abs(x0));
            const auto ui = static_cast<std::size_t>(i);

            auto poke = [&](double v) {
                if (t.dtype() == vlp::Dtype::F32) {
                    t.data_mut<float>()[ui] = static_cast<float>(v);
                } else {
                    t.data_mut<double>()[ui] = v;
                }
            };
            poke(x0 + h);
            const double fp = fn(inputs).item();
            poke(x0 - h);
            const double fm = fn(inputs).item();
            poke(x0);

            const double fd = (fp - fm) / (2.0 * h);
            const double ad = analytic[k][ui];
            const double err = std::abs(ad - fd) / (atol + rtol * std::max(std::abs(ad), std::abs(fd)));
            if (err > rep.max_err) {
                rep.max_err = err;
                rep.worst = "input " + std::to_string(k) + " coord " + std::to_string(i) +
                            ": analytic=" + std::to_string(ad) + " fd=" + std::to_string(fd);
            }
        }
    }
    return rep;
}

/// Nudges values away from a non-smooth point (|x| < margin -> pushed to +-margin).
inline void avoid_kinks(vlp::Tensor& t, double margin) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double v = t.value_at(i);
        if (std::abs(v) < margin) {
            const double nv = v < 0 ? -margin : margin;
            if (t.dtype() == vlp::Dtype::F32) {
                t.data_mut<float>()[static_cast<std::size_t>(i)] = static_cast<float>(nv);
            } else {
                t.data_mut<double>()[static_cast<std::size_t>(i)] = nv;
            }
        }
    }
}

}  // namespace vlptest

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "geoaware/numerics/tensor.hpp"
#include "geoaware/rng.hpp"

namespace geoaware::nn {

struct GradCheckOptions {
    double step = 1e-4;
    // Elements whose one-sided differences disagree by more than this are
    // straddling a ReLU kink; they are re-measured with step * refine_factor.
    double kink_threshold = 1e-6;
    double refine_factor = 1e-2;
    // 0 checks every element; otherwise a seeded sample of this many per input.
    std::size_t max_elements_per_input = 0;
    std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t refined = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Error per element is |g_ad - g_fd| / max(1, |g_fd|).
inline GradCheckResult grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                  std::vector<Tensor<double>> inputs, const GradCheckOptions& options = {}) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.clear_grad();
    }
    Tensor<double> out = f(inputs);
    if (out.size() != 1) {
        throw DimensionError("grad_check: function must return a scalar");
    }
    ensure_finite<double>(out.values(), "grad_check forward");
    out.backward();

    auto eval = [&]() {
        NoGradGuard guard;
        const double v = f(inputs).item();
        if (!std::isfinite(v)) {
            throw NumericError("grad_check: non-finite function value");
        }
        return v;
    };

    GradCheckResult result;
    Rng rng(options.sample_seed);
    const double f0 = eval();
    for (auto& t : inputs) {
        std::vector<double> analytic(t.size(), 0.0);
        if (t.has_grad()) {
            std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        }
        std::vector<std::size_t> idx(t.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            idx[i] = i;
        }
        if (options.max_elements_per_input != 0 && idx.size() > options.max_elements_per_input) {
            for (std::size_t i = 0; i < options.max_elements_per_input; ++i) {
                std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
            }
            idx.resize(options.max_elements_per_input);
        }
        auto values = t.mutable_values();
        for (const std::size_t i : idx) {
            const double x0 = values[i];
            auto central = [&](double h, double f0, bool& kinked) {
                values[i] = x0 + h;
                const double fp = eval();
                values[i] = x0 - h;
                const double fm = eval();
                values[i] = x0;
                const double fwd = (fp - f0) / h;
                const double bwd = (f0 - fm) / h;
                kinked = std::abs(fwd - bwd) > options.kink_threshold * std::max(1.0, std::abs(fwd + bwd) / 2);
                return (fp - fm) / (2 * h);
            };
            bool kinked = false;
            double numeric = central(options.step, f0, kinked);
            if (kinked) {
                bool again = false;
                numeric = central(options.step * options.refine_factor, f0, again);
                ++result.refined;
            }
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            result.max_rel_error = std::max(result.max_rel_error, err);
            ++result.checked;
        }
    }
    return result;
}

} // namespace geoaware::nn

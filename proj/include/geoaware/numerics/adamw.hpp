#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "geoaware/numerics/param_store.hpp"

namespace geoaware::nn {

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// AdamW with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
/// Moments are kept in double regardless of the parameter precision.
template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWOptions options = {}) : options_(options) {}

    const AdamWOptions& options() const { return options_; }
    AdamWOptions& options() { return options_; }
    std::size_t step_count() const { return step_count_; }

    /// Updates every trainable entry, then clears all grads.
    void step(ParamStore<T>& params) { step(params, params.trainable_names()); }

    /// Updates only `names` (all must be trainable), then clears all grads.
    void step(ParamStore<T>& params, const std::vector<std::string>& names) {
        for (const auto& name : names) {
            if (params.is_frozen(name)) {
                throw StateError("adamw: refusing to update frozen parameter " + name);
            }
            if (!params.get(name).has_grad()) {
                throw StateError("adamw: trainable parameter has no gradient: " + name);
            }
        }
        ++step_count_;
        const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_count_));
        const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_count_));
        for (const auto& name : names) {
            auto& p = params.get(name);
            auto& [m, v] = moments_[name];
            if (m.empty()) {
                m.assign(p.size(), 0.0);
                v.assign(p.size(), 0.0);
            }
            auto values = p.mutable_values();
            const auto grad = p.grad();
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
                v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
                const double m_hat = m[i] / bias1;
                const double v_hat = v[i] / bias2;
                const double pv = static_cast<double>(values[i]);
                const double update = m_hat / (std::sqrt(v_hat) + options_.eps) + options_.weight_decay * pv;
                values[i] = static_cast<T>(pv - options_.lr * update);
            }
        }
        params.zero_grad();
    }

    const std::vector<double>& first_moment(const std::string& name) const { return moments_.at(name).first; }
    const std::vector<double>& second_moment(const std::string& name) const { return moments_.at(name).second; }

private:
    AdamWOptions options_;
    std::size_t step_count_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

} // namespace geoaware::nn

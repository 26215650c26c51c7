#pragma once

#include <cmath>
#include <string>

#include "geoaware/numerics/ops.hpp"
#include "geoaware/numerics/param_store.hpp"
#include "geoaware/rng.hpp"

namespace geoaware::nn {

/// Trainable tensor with entries uniform in ±1/sqrt(fan_in).
template <typename T>
Tensor<T>& add_uniform(ParamStore<T>& ps, const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> v(numel(shape));
    for (auto& x : v) {
        x = static_cast<T>(rng.uniform(-bound, bound));
    }
    return ps.add(name, Tensor<T>(std::move(shape), std::move(v), true));
}

/// Trainable tensor with entries drawn from N(0, sd²).
template <typename T>
Tensor<T>& add_normal(ParamStore<T>& ps, const std::string& name, Shape shape, double sd, Rng& rng) {
    std::vector<T> v(numel(shape));
    for (auto& x : v) {
        x = static_cast<T>(rng.normal(0.0, sd));
    }
    return ps.add(name, Tensor<T>(std::move(shape), std::move(v), true));
}

template <typename T>
Tensor<T>& add_constant(ParamStore<T>& ps, const std::string& name, Shape shape, T value) {
    auto n = numel(shape);
    return ps.add(name, Tensor<T>(std::move(shape), std::vector<T>(n, value), true));
}

/// Dense layer `prefix.w` [in×out] and `prefix.b` [out].
template <typename T>
void add_linear(ParamStore<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    add_uniform(ps, prefix + ".w", {in, out}, in, rng);
    add_uniform(ps, prefix + ".b", {out}, in, rng);
}

template <typename T>
Tensor<T> apply_linear(const ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& x) {
    return linear(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"));
}

/// Two dense layers with a ReLU between them.
template <typename T>
Tensor<T> apply_mlp2(const ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& x) {
    return apply_linear(ps, prefix + ".fc2", relu(apply_linear(ps, prefix + ".fc1", x)));
}

template <typename T>
void add_mlp2(ParamStore<T>& ps, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
              Rng& rng) {
    add_linear(ps, prefix + ".fc1", in, hidden, rng);
    add_linear(ps, prefix + ".fc2", hidden, out, rng);
}

} // namespace geoaware::nn

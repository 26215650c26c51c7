#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "geoaware/backbones/geo_stub.hpp"

namespace geoaware::backbones {

enum class SelectMode { even, all, last };

struct LayerSelection {
    SelectMode mode = SelectMode::even;
    std::size_t count = 4; // ignored for `all`

    bool operator==(const LayerSelection&) const = default;
};

inline std::string to_string(const LayerSelection& s) {
    switch (s.mode) {
    case SelectMode::all:
        return "all";
    case SelectMode::even:
        return "even" + std::to_string(s.count);
    case SelectMode::last:
        return "last" + std::to_string(s.count);
    }
    return "?";
}

/// Accepts "all", "evenN"/"even(N)", "lastN"/"last(N)".
inline LayerSelection parse_layer_selection(std::string s) {
    if (s == "all") {
        return {SelectMode::all, 0};
    }
    std::erase(s, '(');
    std::erase(s, ')');
    for (const auto& [prefix, mode] : {std::pair{"even", SelectMode::even}, std::pair{"last", SelectMode::last}}) {
        const std::string p = prefix;
        if (s.rfind(p, 0) == 0 && s.size() > p.size()) {
            const std::string digits = s.substr(p.size());
            if (digits.find_first_not_of("0123456789") != std::string::npos || digits.size() > 3) {
                break;
            }
            return {mode, static_cast<std::size_t>(std::stoul(digits))};
        }
    }
    throw ConfigError("unknown layer selection: " + s);
}

/// 1-based ascending layer indices. even(L) uses floor((i+1)·M/(L+1)),
/// bumped where needed to stay strictly increasing.
inline std::vector<std::size_t> select_layer_indices(std::size_t m, const LayerSelection& sel) {
    if (sel.mode == SelectMode::all) {
        std::vector<std::size_t> out(m);
        for (std::size_t i = 0; i < m; ++i) {
            out[i] = i + 1;
        }
        return out;
    }
    if (sel.count < 1) {
        throw ConfigError("layer selection needs L >= 1");
    }
    if (sel.count > m) {
        throw ConfigError("layer selection L=" + std::to_string(sel.count) + " exceeds M=" + std::to_string(m));
    }
    std::vector<std::size_t> out;
    if (sel.mode == SelectMode::last) {
        for (std::size_t l = m - sel.count + 1; l <= m; ++l) {
            out.push_back(l);
        }
        return out;
    }
    std::size_t prev = 0;
    for (std::size_t i = 0; i < sel.count; ++i) {
        const std::size_t idx = std::max((i + 1) * m / (sel.count + 1), prev + 1);
        out.push_back(idx);
        prev = idx;
    }
    return out;
}

inline std::vector<nn::Tensor<double>> select_layers(const FeaturePyramid& pyr, const LayerSelection& sel) {
    std::vector<nn::Tensor<double>> out;
    for (const auto l : select_layer_indices(pyr.layers.size(), sel)) {
        out.push_back(pyr.layers[l - 1]);
    }
    return out;
}

} // namespace geoaware::backbones

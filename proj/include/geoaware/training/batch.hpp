#pragma once

#include <vector>

#include "geoaware/backbones/geo_stub.hpp"
#include "geoaware/backbones/pixel_encoder.hpp"
#include "geoaware/deskworld/dataset.hpp"
#include "geoaware/deskworld/render.hpp"
#include "geoaware/policy/network.hpp"

namespace geoaware::training {

using deskworld::CameraPose;
using deskworld::SceneState;
using policy::PolicyConfig;
using policy::PolicyInput;

/// Featurizes scenes for the policy. Sample i is seen through cameras[i]
/// (V poses). Observations are always derived here, never stored.
template <typename T>
PolicyInput<T> observe(const PolicyConfig& cfg, const backbones::GeoBackbone& geo,
                       const std::vector<const SceneState*>& scenes,
                       const std::vector<std::vector<CameraPose>>& cameras, const std::vector<std::size_t>& lang_ids) {
    const std::size_t b = scenes.size();
    if (b == 0 || cameras.size() != b || lang_ids.size() != b) {
        throw DimensionError("observe: scenes, cameras and instructions must have one entry per sample");
    }
    PolicyInput<T> in;
    in.batch = b;
    in.lang_ids = lang_ids;
    std::vector<T> prop(b * deskworld::kProprioDim);
    for (std::size_t i = 0; i < b; ++i) {
        if (cameras[i].size() != cfg.views) {
            throw DimensionError("observe: expected " + std::to_string(cfg.views) + " cameras per sample");
        }
        const auto p = deskworld::proprio(*scenes[i]);
        for (std::size_t k = 0; k < p.size(); ++k) {
            prop[i * p.size() + k] = static_cast<T>(p[k]);
        }
    }
    in.proprio = nn::Tensor<T>({b, deskworld::kProprioDim}, std::move(prop));

    if (cfg.backbone == policy::BackboneKind::geo) {
        const auto& gc = geo.config();
        const auto layers = cfg.selected_layers(gc);
        const std::size_t per = gc.width * gc.keypoints;
        std::vector<std::vector<std::vector<T>>> buf(cfg.views, std::vector<std::vector<T>>(layers.size()));
        for (auto& v : buf) {
            for (auto& l : v) {
                l.resize(b * per);
            }
        }
        std::vector<double> view, world;
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t v = 0; v < cfg.views; ++v) {
                geo.raw_halves(*scenes[i], cameras[i][v], view, world);
                for (std::size_t l = 0; l < layers.size(); ++l) {
                    geo.write_layer(view, world, layers[l], true, buf[v][l].data() + i * per);
                }
            }
        }
        in.geo.resize(cfg.views);
        for (std::size_t v = 0; v < cfg.views; ++v) {
            for (auto& l : buf[v]) {
                in.geo[v].emplace_back(nn::Shape{b, gc.width, gc.keypoints}, std::move(l));
            }
        }
    } else {
        for (std::size_t v = 0; v < cfg.views; ++v) {
            const auto& cam0 = cameras[0][v];
            const std::size_t h = static_cast<std::size_t>(cam0.height), w = static_cast<std::size_t>(cam0.width);
            std::vector<T> pixels(b * 3 * h * w);
            for (std::size_t i = 0; i < b; ++i) {
                const auto img = deskworld::render_image(*scenes[i], cameras[i][v]);
                if (static_cast<std::size_t>(img.width) != w || static_cast<std::size_t>(img.height) != h) {
                    throw DimensionError("observe: cameras in one batch must share an image size");
                }
                backbones::write_image_chw(img, pixels.data() + i * 3 * h * w);
            }
            in.images.emplace_back(nn::Shape{b, 3, h, w}, std::move(pixels));
        }
    }
    return in;
}

struct StepIndex {
    std::size_t episode = 0;
    std::size_t step = 0;

    bool operator==(const StepIndex&) const = default;
};

/// Every (episode, step) pair, episode-major.
inline std::vector<StepIndex> all_steps(const deskworld::Dataset& ds) {
    std::vector<StepIndex> out;
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        for (std::size_t s = 0; s < ds.episodes[e].steps.size(); ++s) {
            out.push_back({e, s});
        }
    }
    return out;
}

template <typename T>
struct Batch {
    PolicyInput<T> input;
    nn::Tensor<T> targets; // [B × 7·T_c], normalized
    std::vector<T> mask;   // same size as targets; 0 past the episode end
    std::vector<StepIndex> indices;
};

/// Normalized expert chunk starting at `start`, zero-padded past the episode
/// end, with its validity mask.
template <typename T>
void write_chunk(const deskworld::Episode& ep, std::size_t start, std::size_t chunk, T* target, T* mask) {
    for (std::size_t c = 0; c < chunk; ++c) {
        const bool valid = start + c < ep.steps.size();
        const auto a = valid ? ep.steps[start + c].action.flatten() : std::array<double, deskworld::kActionDim>{};
        for (std::size_t k = 0; k < deskworld::kActionDim; ++k) {
            target[c * deskworld::kActionDim + k] = static_cast<T>(a[k] * policy::kActionScale[k]);
            mask[c * deskworld::kActionDim + k] = valid ? T{1} : T{0};
        }
    }
}

template <typename T>
Batch<T> make_batch(const deskworld::Dataset& ds, const std::vector<StepIndex>& indices, const PolicyConfig& cfg,
                    const backbones::GeoBackbone& geo, const std::vector<CameraPose>& cameras) {
    const std::size_t b = indices.size();
    if (b == 0) {
        throw DimensionError("make_batch: empty index list");
    }
    std::vector<const SceneState*> scenes;
    std::vector<std::size_t> lang;
    const std::size_t width = cfg.action_dim();
    std::vector<T> targets(b * width), mask(b * width);
    for (std::size_t i = 0; i < b; ++i) {
        const auto& [e, s] = indices[i];
        if (e >= ds.episodes.size() || s >= ds.episodes[e].steps.size()) {
            throw InputError("make_batch: index (" + std::to_string(e) + ", " + std::to_string(s) + ") out of range");
        }
        const auto& ep = ds.episodes[e];
        scenes.push_back(&ep.steps[s].scene);
        lang.push_back(policy::vocabulary_id(cfg, ep.instruction));
        write_chunk(ep, s, cfg.chunk, targets.data() + i * width, mask.data() + i * width);
    }
    Batch<T> out;
    out.input = observe<T>(cfg, geo, scenes, std::vector<std::vector<CameraPose>>(b, cameras), lang);
    out.targets = nn::Tensor<T>({b, width}, std::move(targets));
    out.mask = std::move(mask);
    out.indices = indices;
    return out;
}

} // namespace geoaware::training

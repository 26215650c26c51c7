#pragma once

#include <string>

#include "geoaware/deskworld/render.hpp"
#include "geoaware/numerics/init.hpp"

namespace geoaware::backbones {

inline constexpr std::size_t kPixelChannels[3] = {8, 16, 32};

/// Registers the CNN + FiLM + head parameters under `pix.*`.
template <typename T>
void add_pixel_encoder(nn::ParamStore<T>& ps, std::size_t lang_width, std::size_t repr, Rng& rng) {
    std::size_t cin = 3;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t cout = kPixelChannels[i];
        const std::string p = "pix.conv" + std::to_string(i + 1);
        nn::add_uniform(ps, p + ".w", {cout, cin, 3, 3}, cin * 9, rng);
        nn::add_uniform(ps, p + ".b", {cout}, cin * 9, rng);
        cin = cout;
    }
    nn::add_linear(ps, "pix.film", lang_width, 2 * kPixelChannels[2], rng);
    nn::add_mlp2(ps, "pix.head", kPixelChannels[2], repr, repr, rng);
}

/// Channel-first copy of a rendered image into `out` ([3 × H × W]).
template <typename T>
void write_image_chw(const deskworld::Image& img, T* out) {
    const std::size_t hw = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            out[c * hw + p] = static_cast<T>(img.pixels[p * 3 + c]);
        }
    }
}

/// Conv stack up to (and including) the last conv, before modulation.
template <typename T>
nn::Tensor<T> pixel_trunk(const nn::ParamStore<T>& ps, const nn::Tensor<T>& images) {
    if (images.rank() != 4 || images.dim(1) != 3) {
        throw DimensionError("pixel encoder expects [B×3×H×W], got " + nn::to_string(images.shape()));
    }
    auto h = nn::relu(nn::conv2d(images, ps.get("pix.conv1.w"), ps.get("pix.conv1.b"), 2, 1));
    h = nn::relu(nn::conv2d(h, ps.get("pix.conv2.w"), ps.get("pix.conv2.b"), 2, 1));
    return nn::conv2d(h, ps.get("pix.conv3.w"), ps.get("pix.conv3.b"), 2, 1);
}

/// Modulated map -> ReLU -> global average pool -> head MLP.
template <typename T>
nn::Tensor<T> pixel_head(const nn::ParamStore<T>& ps, const nn::Tensor<T>& modulated) {
    const std::size_t b = modulated.dim(0), c = modulated.dim(1);
    auto pooled = nn::reshape(nn::adaptive_avg_pool1d(nn::relu(modulated), 1), {b, c});
    return nn::apply_mlp2(ps, "pix.head", pooled);
}

/// images [B×3×H×W] in [0,1], lang [B×D_lang] -> [B×D_repr].
/// FiLM scale is 1 + (first half of the generator output), shift the rest.
template <typename T>
nn::Tensor<T> pixel_features(const nn::ParamStore<T>& ps, const nn::Tensor<T>& images, const nn::Tensor<T>& lang) {
    auto h = pixel_trunk(ps, images);
    const std::size_t b = h.dim(0), c = h.dim(1), s = h.dim(2) * h.dim(3);
    if (lang.rank() != 2 || lang.dim(0) != b) {
        throw DimensionError("pixel encoder: language batch mismatch");
    }
    auto mod = nn::apply_linear(ps, "pix.film", lang);
    auto gamma = nn::add_bias(nn::slice(mod, 1, 0, c), nn::Tensor<T>::full({c}, T{1}));
    auto beta = nn::slice(mod, 1, c, 2 * c);
    return pixel_head(ps, nn::film(nn::reshape(h, {b, c, s}), gamma, beta));
}

} // namespace geoaware::backbones

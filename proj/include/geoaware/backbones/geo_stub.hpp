#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "geoaware/deskworld/camera.hpp"
#include "geoaware/deskworld/world.hpp"
#include "geoaware/hash.hpp"
#include "geoaware/numerics/tensor.hpp"
#include "geoaware/rng.hpp"

namespace geoaware::backbones {

using deskworld::CameraPose;
using deskworld::SceneState;
using deskworld::Vec3;

struct GeoStubConfig {
    std::size_t layers = 12;    // M
    std::size_t width = 32;     // D_vggt
    std::size_t keypoints = 16; // N_l
    std::uint64_t lift_seed = 0x6e0a;

    bool operator==(const GeoStubConfig&) const = default;

    /// Invariance weight of 1-based layer l: (l-1)/(M-1).
    double alpha(std::size_t l) const {
        return static_cast<double>(l - 1) / static_cast<double>(layers - 1);
    }

    void validate() const {
        if (layers < 2 || layers > 64) {
            throw ConfigError("geo: layer count must be in [2, 64]");
        }
        if (width < 1 || keypoints < 1) {
            throw ConfigError("geo: width and keypoints must be positive");
        }
    }
};

/// Attribute classes carried in the world-frame half of each token.
enum class Keypoint : int { end_effector, red_block, blue_block, plate, bowl, fiducial };
inline constexpr std::size_t kAttributeCount = 6;
// Raw token: 4 view channels (u/W, v/H, depth, visible) overlapping 4 world
// channels (x, y, z, 0), followed by the attribute one-hot.
inline constexpr std::size_t kRawWidth = 4 + kAttributeCount;

struct KeypointSample {
    Vec3 world;
    Keypoint kind;
};

/// Fixed keypoint order: ee, red, blue, plate, bowl, then table fiducials.
inline std::vector<KeypointSample> scene_keypoints(const SceneState& scene) {
    std::vector<KeypointSample> out;
    out.push_back({scene.ee_pos, Keypoint::end_effector});
    out.push_back({scene.object(deskworld::kRedBlock).pos, Keypoint::red_block});
    out.push_back({scene.object(deskworld::kBlueBlock).pos, Keypoint::blue_block});
    out.push_back({scene.goal(deskworld::kPlate).center, Keypoint::plate});
    out.push_back({scene.goal(deskworld::kBowl).center, Keypoint::bowl});
    for (const auto& f : deskworld::table_fiducials()) {
        out.push_back({f, Keypoint::fiducial});
    }
    return out;
}

struct FeaturePyramid {
    std::vector<nn::Tensor<double>> layers; // M tensors of [N_l × D_vggt]
    std::size_t view_index = 0;
};

/// Lift entries are N(0, (kLiftGain^2)/kRawWidth); the three coordinate rows
/// get an extra kCoordGain so positions dominate the one-hot attributes.
inline constexpr double kLiftGain = 3.1622776601683795; // sqrt(10)
inline constexpr double kCoordGain = 10.0;

/// Frozen geometric-feature surrogate. Layer l mixes a camera-frame
/// description of each keypoint with a world-frame one by alpha_l and lifts
/// the result through a fixed random linear map.
class GeoBackbone {
public:
    explicit GeoBackbone(GeoStubConfig cfg = {}) : cfg_(cfg) {
        cfg_.validate();
        const double sd = kLiftGain / std::sqrt(static_cast<double>(kRawWidth));
        lifts_.resize(cfg_.layers);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            Rng rng(mix_seed(cfg_.lift_seed, l + 1));
            lifts_[l].resize(kRawWidth * cfg_.width);
            for (auto& w : lifts_[l]) {
                w = rng.normal(0.0, sd);
            }
            for (std::size_t i = 0; i < 3 * cfg_.width; ++i) {
                lifts_[l][i] *= kCoordGain;
            }
        }
    }

    const GeoStubConfig& config() const { return cfg_; }

    /// Lift matrix of 1-based layer l, row-major [kRawWidth × D_vggt].
    const std::vector<double>& lift(std::size_t l) const { return lifts_.at(l - 1); }

    std::string lift_hash() const {
        Fnv1a h;
        for (const auto& m : lifts_) {
            h.update(std::span<const double>(m));
        }
        return h.hex();
    }

    /// Camera-frame and world-frame halves for every keypoint slot; padded
    /// slots stay zero.
    void raw_halves(const SceneState& scene, const CameraPose& cam, std::vector<double>& view,
                    std::vector<double>& world) const {
        const auto kps = scene_keypoints(scene);
        if (kps.size() > cfg_.keypoints) {
            throw ConfigError("geo: scene has " + std::to_string(kps.size()) + " keypoints, capacity " +
                              std::to_string(cfg_.keypoints));
        }
        view.assign(cfg_.keypoints * kRawWidth, 0.0);
        world.assign(cfg_.keypoints * kRawWidth, 0.0);
        const auto frame = deskworld::camera_frame(cam);
        for (std::size_t j = 0; j < kps.size(); ++j) {
            const auto p = deskworld::project(frame, cam, kps[j].world);
            double* v = view.data() + j * kRawWidth;
            if (p.in_front) {
                v[0] = p.u / cam.width;
                v[1] = p.v / cam.height;
                v[2] = p.depth;
                v[3] = (v[0] >= 0.0 && v[0] <= 1.0 && v[1] >= 0.0 && v[1] <= 1.0) ? 1.0 : 0.0;
            } else {
                v[2] = std::max(p.depth, 0.0);
            }
            double* w = world.data() + j * kRawWidth;
            w[0] = kps[j].world[0];
            w[1] = kps[j].world[1];
            w[2] = kps[j].world[2];
            w[4 + static_cast<std::size_t>(kps[j].kind)] = 1.0;
        }
    }

    /// Writes 1-based layer l as [N_l × D] (token-major) or [D × N_l]
    /// (channel-major) into `out`.
    template <typename T>
    void write_layer(const std::vector<double>& view, const std::vector<double>& world, std::size_t l,
                     bool channel_major, T* out) const {
        const double a = cfg_.alpha(l);
        const auto& m = lift(l);
        const std::size_t n = cfg_.keypoints, d = cfg_.width;
        std::array<double, kRawWidth> r{};
        std::vector<double> token(d);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t c = 0; c < kRawWidth; ++c) {
                r[c] = (1.0 - a) * view[j * kRawWidth + c] + a * world[j * kRawWidth + c];
            }
            std::fill(token.begin(), token.end(), 0.0);
            for (std::size_t c = 0; c < kRawWidth; ++c) {
                if (r[c] == 0.0) {
                    continue;
                }
                for (std::size_t e = 0; e < d; ++e) {
                    token[e] += r[c] * m[c * d + e];
                }
            }
            for (std::size_t e = 0; e < d; ++e) {
                out[channel_major ? e * n + j : j * d + e] = static_cast<T>(token[e]);
            }
        }
    }

    FeaturePyramid features(const SceneState& scene, const CameraPose& cam, std::size_t view_index = 0) const {
        std::vector<double> view, world;
        raw_halves(scene, cam, view, world);
        FeaturePyramid pyr;
        pyr.view_index = view_index;
        for (std::size_t l = 1; l <= cfg_.layers; ++l) {
            std::vector<double> values(cfg_.keypoints * cfg_.width);
            write_layer(view, world, l, false, values.data());
            pyr.layers.emplace_back(nn::Shape{cfg_.keypoints, cfg_.width}, std::move(values));
        }
        return pyr;
    }

private:
    GeoStubConfig cfg_;
    std::vector<std::vector<double>> lifts_;
};

} // namespace geoaware::backbones

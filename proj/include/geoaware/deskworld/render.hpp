#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "geoaware/deskworld/camera.hpp"
#include "geoaware/deskworld/world.hpp"

namespace geoaware::deskworld {

/// RGB image, row-major [height][width][3], values in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    float at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

using Rgb = std::array<float, 3>;

inline constexpr Rgb kBackground{0.05f, 0.05f, 0.05f};
inline constexpr Rgb kEndEffectorColor{0.95f, 0.95f, 0.95f};
inline constexpr Rgb kFiducialColor{0.5f, 0.5f, 0.5f};

inline Rgb object_color(const std::string& tag) {
    if (tag == "red") {
        return {0.9f, 0.1f, 0.1f};
    }
    if (tag == "blue") {
        return {0.1f, 0.2f, 0.9f};
    }
    return {0.7f, 0.3f, 0.7f};
}

inline Rgb goal_color(int goal_id) {
    return goal_id == kPlate ? Rgb{0.2f, 0.7f, 0.2f} : Rgb{0.8f, 0.7f, 0.1f};
}

// World-space disc radii.
inline constexpr double kObjectRadius = 0.035;
inline constexpr double kEndEffectorRadius = 0.025;
inline constexpr double kFiducialRadius = 0.02;

/// Splats scene elements as antialiased discs. Goal regions are drawn first
/// (they lie on the table), everything else far-to-near. Disc radius in
/// pixels is focal * world_radius / depth; points behind the camera are culled.
inline Image render_image(const SceneState& scene, const CameraPose& cam) {
    const CameraFrame frame = camera_frame(cam);
    Image img{cam.width, cam.height, {}};
    img.pixels.resize(static_cast<std::size_t>(cam.width) * cam.height * 3);
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
        std::copy(kBackground.begin(), kBackground.end(), img.pixels.begin() + static_cast<long>(i));
    }

    struct Splat {
        Vec3 pos;
        double radius;
        Rgb color;
        int layer; // 0 = on-table, 1 = solid
        int order;
    };
    std::vector<Splat> splats;
    int order = 0;
    for (const auto& g : scene.goal_regions) {
        splats.push_back({g.center, g.radius, goal_color(g.id), 0, order++});
    }
    for (const auto& f : table_fiducials()) {
        splats.push_back({f, kFiducialRadius, kFiducialColor, 0, order++});
    }
    for (const auto& o : scene.objects) {
        splats.push_back({o.pos, kObjectRadius, object_color(o.color), 1, order++});
    }
    splats.push_back({scene.ee_pos, kEndEffectorRadius, kEndEffectorColor, 1, order++});

    struct Projected {
        Projection p;
        const Splat* s;
    };
    std::vector<Projected> visible;
    for (const auto& s : splats) {
        const Projection p = project(frame, cam, s.pos);
        if (p.in_front) {
            visible.push_back({p, &s});
        }
    }
    std::stable_sort(visible.begin(), visible.end(), [](const Projected& a, const Projected& b) {
        if (a.s->layer != b.s->layer) {
            return a.s->layer < b.s->layer;
        }
        if (a.s->layer == 1 && a.p.depth != b.p.depth) {
            return a.p.depth > b.p.depth;
        }
        return a.s->order < b.s->order;
    });

    for (const auto& [p, s] : visible) {
        const double r = cam.focal * s->radius / p.depth;
        const int x0 = std::max(0, static_cast<int>(std::floor(p.u - r - 1)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(p.u + r + 1)));
        const int y0 = std::max(0, static_cast<int>(std::floor(p.v - r - 1)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(p.v + r + 1)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = x + 0.5 - p.u, dy = y + 0.5 - p.v;
                const double coverage = std::clamp(r - std::sqrt(dx * dx + dy * dy) + 0.5, 0.0, 1.0);
                if (coverage <= 0.0) {
                    continue;
                }
                float* px = &img.pixels[(static_cast<std::size_t>(y) * cam.width + x) * 3];
                for (int c = 0; c < 3; ++c) {
                    px[c] = static_cast<float>(px[c] * (1.0 - coverage) + s->color[c] * coverage);
                }
            }
        }
    }
    return img;
}

} // namespace geoaware::deskworld

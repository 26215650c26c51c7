#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "geoaware/deskworld/camera.hpp"
#include "geoaware/rng.hpp"

namespace geoaware::deskworld {

enum class ViewCategory { seen, novel_small, novel_medium, novel_large };

inline std::string to_string(ViewCategory c) {
    switch (c) {
    case ViewCategory::seen:
        return "seen";
    case ViewCategory::novel_small:
        return "novel-small";
    case ViewCategory::novel_medium:
        return "novel-medium";
    case ViewCategory::novel_large:
        return "novel-large";
    }
    return "?";
}

inline ViewCategory parse_view_category(const std::string& s) {
    for (auto c : {ViewCategory::seen, ViewCategory::novel_small, ViewCategory::novel_medium,
                   ViewCategory::novel_large}) {
        if (s == to_string(c)) {
            return c;
        }
    }
    if (s == "novel_small") {
        return ViewCategory::novel_small;
    }
    if (s == "novel_medium") {
        return ViewCategory::novel_medium;
    }
    if (s == "novel_large") {
        return ViewCategory::novel_large;
    }
    throw ConfigError("unknown viewpoint category: " + s);
}

/// Angular band (degrees) of each novel category relative to its nearest seen camera.
inline std::pair<double, double> category_band(ViewCategory c) {
    switch (c) {
    case ViewCategory::seen:
        return {0.0, 0.0};
    case ViewCategory::novel_small:
        return {10.0, 20.0};
    case ViewCategory::novel_medium:
        return {25.0, 40.0};
    case ViewCategory::novel_large:
        return {45.0, 60.0};
    }
    return {0.0, 0.0};
}

struct ViewpointSet {
    ViewCategory category = ViewCategory::seen;
    std::vector<CameraPose> cameras;
};

inline constexpr double kTopAzimuth = -90.0;
inline constexpr double kTopElevation = 80.0;
inline constexpr double kSideAzimuth = 0.0;
inline constexpr double kSideElevation = 30.0;
inline constexpr double kMinElevation = 15.0;
inline constexpr double kMaxElevation = 85.0;

/// The two fixed training cameras: near top-down and oblique side.
inline std::vector<CameraPose> seen_cameras(const SimConfig& sim = {}) {
    return {camera_from_direction(sphere_direction(kTopAzimuth, kTopElevation), sim),
            camera_from_direction(sphere_direction(kSideAzimuth, kSideElevation), sim)};
}

/// Draws `count` cameras. Camera i is derived from seen camera i % 2 by a
/// great-circle rotation of uniform angle in the category band along a
/// uniform direction. Draws are rejected unless the source stays the nearest
/// seen camera and the elevation stays within [15°, 85°].
inline ViewpointSet sample_viewpoints(ViewCategory category, std::size_t count, std::uint64_t seed,
                                      const SimConfig& sim = {}) {
    const auto seen = seen_cameras(sim);
    if (category == ViewCategory::seen) {
        return {category, seen};
    }
    const auto [lo, hi] = category_band(category);
    Rng rng(mix_seed(seed, 0x71e3));
    ViewpointSet out{category, {}};
    for (std::size_t i = 0; i < count; ++i) {
        const CameraPose& source = seen[i % seen.size()];
        const Vec3 d = (1.0 / norm(source.position)) * source.position;
        const Vec3 helper = std::abs(d[2]) < 0.9 ? Vec3{0.0, 0.0, 1.0} : Vec3{1.0, 0.0, 0.0};
        const Vec3 c1 = cross(d, helper);
        const Vec3 e1 = (1.0 / norm(c1)) * c1;
        const Vec3 e2 = cross(d, e1);
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            const double theta = deg_to_rad(rng.uniform(lo, hi));
            const double psi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const Vec3 t = std::cos(psi) * e1 + std::sin(psi) * e2;
            const Vec3 dir = std::cos(theta) * d + std::sin(theta) * t;
            CameraPose cam = camera_from_direction(dir, sim);
            const double el = elevation_deg(cam);
            if (el < kMinElevation || el > kMaxElevation) {
                continue;
            }
            const double to_source = angular_offset_deg(cam, source);
            bool nearest = true;
            for (const auto& other : seen) {
                nearest = nearest && angular_offset_deg(cam, other) >= to_source - 1e-12;
            }
            if (!nearest) {
                continue;
            }
            out.cameras.push_back(cam);
            placed = true;
        }
        if (!placed) {
            throw GenerationError("sample_viewpoints: no admissible camera after 1000 draws");
        }
    }
    return out;
}

/// Offset (degrees) from a camera to its nearest seen camera.
inline double offset_from_seen_deg(const CameraPose& cam, const SimConfig& sim = {}) {
    double best = 360.0;
    for (const auto& s : seen_cameras(sim)) {
        best = std::min(best, angular_offset_deg(cam, s));
    }
    return best;
}

} // namespace geoaware::deskworld

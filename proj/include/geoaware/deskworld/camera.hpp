#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "geoaware/deskworld/types.hpp"

namespace geoaware::deskworld {

/// Pinhole camera: look-at extrinsics plus focal length and principal point
/// in pixels.
struct CameraPose {
    Vec3 position{};
    Vec3 look_at{};
    Vec3 up{0.0, 0.0, 1.0};
    double focal = 36.0;
    std::array<double, 2> principal_point{16.0, 16.0};
    int width = 32;
    int height = 32;

    bool operator==(const CameraPose&) const = default;
};

/// Right-handed camera basis: x right, y down, z forward (right × down = forward).
struct CameraFrame {
    Vec3 right;
    Vec3 down;
    Vec3 forward;
};

inline CameraFrame camera_frame(const CameraPose& cam) {
    if (!(cam.focal > 0.0)) {
        throw CameraError("camera focal length must be positive");
    }
    if (cam.width <= 0 || cam.height <= 0) {
        throw CameraError("camera image size must be positive");
    }
    const Vec3 view = cam.look_at - cam.position;
    const double len = norm(view);
    if (!(len > 1e-12)) {
        throw CameraError("camera position coincides with look_at");
    }
    const Vec3 forward = (1.0 / len) * view;
    const Vec3 side = cross(forward, cam.up);
    const double side_len = norm(side);
    if (!(side_len > 1e-9)) {
        throw CameraError("camera up vector is parallel to the view direction");
    }
    const Vec3 right = (1.0 / side_len) * side;
    const Vec3 down = cross(forward, right);
    return {right, down, forward};
}

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
    bool in_front = false;
};

inline Projection project(const CameraFrame& frame, const CameraPose& cam, const Vec3& point) {
    const Vec3 rel = point - cam.position;
    const double xc = dot(frame.right, rel);
    const double yc = dot(frame.down, rel);
    const double zc = dot(frame.forward, rel);
    Projection p;
    p.depth = zc;
    p.in_front = zc > 1e-6;
    if (p.in_front) {
        p.u = cam.focal * xc / zc + cam.principal_point[0];
        p.v = cam.focal * yc / zc + cam.principal_point[1];
    }
    return p;
}

inline Projection project(const CameraPose& cam, const Vec3& point) { return project(camera_frame(cam), cam, point); }

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

inline Vec3 sphere_direction(double azimuth_deg, double elevation_deg) {
    const double az = deg_to_rad(azimuth_deg), el = deg_to_rad(elevation_deg);
    return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

/// Camera at `direction * radius` looking at the workspace origin, z up.
inline CameraPose camera_from_direction(const Vec3& direction, const SimConfig& sim) {
    CameraPose cam;
    cam.position = sim.camera_radius * direction;
    cam.look_at = {0.0, 0.0, 0.0};
    cam.up = {0.0, 0.0, 1.0};
    cam.focal = sim.focal;
    cam.width = sim.image_size;
    cam.height = sim.image_size;
    cam.principal_point = {sim.image_size / 2.0, sim.image_size / 2.0};
    return cam;
}

/// Angle in degrees between two cameras as seen from the workspace origin.
inline double angular_offset_deg(const CameraPose& a, const CameraPose& b) {
    const double c = dot(a.position, b.position) / (norm(a.position) * norm(b.position));
    return rad_to_deg(std::acos(std::clamp(c, -1.0, 1.0)));
}

inline double elevation_deg(const CameraPose& cam) {
    return rad_to_deg(std::asin(std::clamp(cam.position[2] / norm(cam.position), -1.0, 1.0)));
}

} // namespace geoaware::deskworld

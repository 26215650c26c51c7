#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geoaware/errors.hpp"

namespace geoaware::deskworld {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }

/// Simulator constants. Defaults give 10-40 step expert episodes.
struct SimConfig {
    double max_step = 0.05;      // per-axis translation clip, meters
    double grasp_radius = 0.03;  // meters
    int episode_cap = 200;
    double goal_radius = 0.06;
    double min_separation = 0.08;   // any two placed items
    double goal_separation = 0.2;   // between goal region centers
    double table_half_extent = 0.15; // placement square [-e, e]^2 at z = 0
    double workspace_half_extent = 0.5;
    Vec3 home{0.0, 0.0, 0.25};
    int image_size = 32;
    double focal = 36.0;
    double camera_radius = 1.0;

    bool operator==(const SimConfig&) const = default;
};

struct ObjectState {
    int id = 0;
    std::string color;
    Vec3 pos{};

    bool operator==(const ObjectState&) const = default;
};

struct GoalRegion {
    int id = 0;
    std::string name;
    Vec3 center{};
    double radius = 0.06;

    bool operator==(const GoalRegion&) const = default;
};

struct SceneState {
    Vec3 ee_pos{};
    Vec3 ee_rot{}; // accumulated axis-angle; physically inert
    double gripper = 1.0; // +1 open, -1 closed
    std::vector<ObjectState> objects;
    std::vector<GoalRegion> goal_regions;
    std::optional<int> held_object;

    const ObjectState& object(int id) const {
        for (const auto& o : objects) {
            if (o.id == id) {
                return o;
            }
        }
        throw TaskError("scene has no object " + std::to_string(id));
    }

    const GoalRegion& goal(int id) const {
        for (const auto& g : goal_regions) {
            if (g.id == id) {
                return g;
            }
        }
        throw TaskError("scene has no goal region " + std::to_string(id));
    }

    bool operator==(const SceneState&) const = default;
};

inline constexpr std::size_t kActionDim = 7;
inline constexpr std::size_t kProprioDim = 7;

/// Relative end-effector command: translation, axis-angle rotation, gripper.
struct Action {
    Vec3 d_pos{};
    Vec3 d_rot{};
    double gripper_cmd = 1.0;

    std::array<double, kActionDim> flatten() const {
        return {d_pos[0], d_pos[1], d_pos[2], d_rot[0], d_rot[1], d_rot[2], gripper_cmd};
    }

    static Action from_flat(std::span<const double> v) {
        if (v.size() != kActionDim) {
            throw InputError("action must have 7 components");
        }
        return Action{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, v[6]};
    }

    bool operator==(const Action&) const = default;
};

struct Placement {
    int object_id = 0;
    int goal_id = 0;

    bool operator==(const Placement&) const = default;
};

struct TaskSpec {
    int id = 0;
    std::string instruction;
    std::vector<Placement> placements; // completed in order

    bool operator==(const TaskSpec&) const = default;
};

/// ee position, ee orientation, gripper.
inline std::array<double, kProprioDim> proprio(const SceneState& s) {
    return {s.ee_pos[0], s.ee_pos[1], s.ee_pos[2], s.ee_rot[0], s.ee_rot[1], s.ee_rot[2], s.gripper};
}

} // namespace geoaware::deskworld

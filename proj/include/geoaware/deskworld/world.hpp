#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "geoaware/deskworld/types.hpp"
#include "geoaware/rng.hpp"

namespace geoaware::deskworld {

inline constexpr int kRedBlock = 0;
inline constexpr int kBlueBlock = 1;
inline constexpr int kPlate = 0;
inline constexpr int kBowl = 1;

/// Fixed task templates over a closed instruction vocabulary.
inline std::vector<TaskSpec> make_tasks() {
    return {
        {0, "put the red block on the plate", {{kRedBlock, kPlate}}},
        {1, "put the blue block in the bowl", {{kBlueBlock, kBowl}}},
        {2, "put the red block in the bowl", {{kRedBlock, kBowl}}},
        {3, "put both blocks on the plate", {{kRedBlock, kPlate}, {kBlueBlock, kPlate}}},
    };
}

/// Fixed table markers (corners), visible to both backbones.
inline std::vector<Vec3> table_fiducials() {
    return {{-0.4, -0.4, 0.0}, {0.4, -0.4, 0.0}, {0.4, 0.4, 0.0}, {-0.4, 0.4, 0.0}};
}

/// Samples a scene for `task`. Objects and goal regions lie on the table with
/// pairwise separation >= min_separation and goal centers >= goal_separation apart.
inline SceneState reset(const TaskSpec& task, std::uint64_t seed, const SimConfig& sim = {}) {
    (void)task; // every task shares the same object and region set
    Rng rng(mix_seed(seed, 0x5eed));
    const double e = sim.table_half_extent;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<Vec3> pts(4);
        for (auto& p : pts) {
            p = {rng.uniform(-e, e), rng.uniform(-e, e), 0.0};
        }
        bool ok = true;
        for (std::size_t i = 0; i < pts.size() && ok; ++i) {
            for (std::size_t j = i + 1; j < pts.size() && ok; ++j) {
                ok = distance(pts[i], pts[j]) >= sim.min_separation;
            }
        }
        ok = ok && distance(pts[2], pts[3]) >= sim.goal_separation;
        if (!ok) {
            continue;
        }
        SceneState s;
        s.ee_pos = sim.home;
        s.gripper = 1.0;
        s.objects = {{kRedBlock, "red", pts[0]}, {kBlueBlock, "blue", pts[1]}};
        s.goal_regions = {{kPlate, "plate", pts[2], sim.goal_radius}, {kBowl, "bowl", pts[3], sim.goal_radius}};
        return s;
    }
    throw GenerationError("reset: could not place objects after 1000 attempts");
}

inline double clip_axis(double v, double limit) { return std::clamp(v, -limit, limit); }

/// Applies one action. Order: translate (clipped per axis, clamped to the
/// workspace), accumulate rotation, then gripper transition with grasp/release.
inline SceneState step(const SceneState& scene, const Action& action, const SimConfig& sim = {}) {
    for (const double v : action.flatten()) {
        if (!std::isfinite(v)) {
            throw InputError("step: non-finite action component");
        }
    }
    SceneState next = scene;
    const double w = sim.workspace_half_extent;
    for (int i = 0; i < 3; ++i) {
        next.ee_pos[i] = std::clamp(scene.ee_pos[i] + clip_axis(action.d_pos[i], sim.max_step), -w, w);
        next.ee_rot[i] = scene.ee_rot[i] + action.d_rot[i];
    }
    next.gripper = action.gripper_cmd >= 0.0 ? 1.0 : -1.0;

    if (scene.gripper > 0.0 && next.gripper < 0.0) {
        double best = sim.grasp_radius;
        for (const auto& o : next.objects) {
            const double d = distance(o.pos, next.ee_pos);
            if (d <= best) {
                best = d;
                next.held_object = o.id;
            }
        }
    } else if (scene.gripper < 0.0 && next.gripper > 0.0) {
        next.held_object.reset();
    }
    if (next.held_object) {
        for (auto& o : next.objects) {
            if (o.id == *next.held_object) {
                o.pos = next.ee_pos;
            }
        }
    }
    return next;
}

inline bool placed(const SceneState& scene, const Placement& p) {
    const auto& obj = scene.object(p.object_id);
    const auto& goal = scene.goal(p.goal_id);
    return distance(obj.pos, goal.center) <= goal.radius && scene.held_object != p.object_id;
}

/// True iff every designated object rests (not held) inside its goal region.
inline bool success(const SceneState& scene, const TaskSpec& task) {
    return std::all_of(task.placements.begin(), task.placements.end(),
                       [&](const Placement& p) { return placed(scene, p); });
}

/// Scripted expert: approach -> grasp -> transport -> release for each
/// placement in order, with a proportional controller (gain 1) clipped to
/// max_step per axis.
inline Action expert_action(const SceneState& scene, const TaskSpec& task, const SimConfig& sim = {}) {
    const double w = sim.workspace_half_extent;
    auto toward = [&](const Vec3& subgoal) {
        for (const double c : subgoal) {
            if (std::abs(c) > w) {
                throw TaskError("expert: subgoal outside the workspace");
            }
        }
        Vec3 d{};
        for (int i = 0; i < 3; ++i) {
            d[i] = clip_axis(subgoal[i] - scene.ee_pos[i], sim.max_step);
        }
        return d;
    };

    if (scene.held_object) {
        const int held = *scene.held_object;
        for (const auto& p : task.placements) {
            if (p.object_id != held) {
                continue;
            }
            const Vec3 center = scene.goal(p.goal_id).center;
            // Release once the goal is reachable within this step.
            const bool arrive = distance(scene.ee_pos, center) <= sim.grasp_radius;
            return Action{toward(center), {}, arrive ? 1.0 : -1.0};
        }
        // Holding something the task does not need: let go.
        return Action{{}, {}, 1.0};
    }

    for (const auto& p : task.placements) {
        if (placed(scene, p)) {
            continue;
        }
        const Vec3 target = scene.object(p.object_id).pos;
        // A closed, empty gripper must reopen before it can grasp again.
        const bool close = scene.gripper > 0.0 && distance(scene.ee_pos, target) <= sim.grasp_radius;
        return Action{toward(target), {}, close ? -1.0 : 1.0};
    }
    return Action{{}, {}, 1.0};
}

} // namespace geoaware::deskworld

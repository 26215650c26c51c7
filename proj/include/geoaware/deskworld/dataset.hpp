#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "geoaware/deskworld/viewpoints.hpp"
#include "geoaware/deskworld/world.hpp"

namespace geoaware::deskworld {

struct EpisodeStep {
    SceneState scene;
    std::array<double, kProprioDim> proprio{};
    Action action;

    bool operator==(const EpisodeStep&) const = default;
};

struct Episode {
    int task_id = 0;
    std::string instruction;
    std::uint64_t seed = 0;
    std::vector<EpisodeStep> steps;
    SceneState final_scene;

    bool operator==(const Episode&) const = default;
};

struct Dataset {
    std::uint64_t seed = 0;
    std::vector<TaskSpec> tasks;
    std::vector<CameraPose> seen_cameras;
    std::vector<Episode> episodes;

    std::size_t sample_count() const {
        std::size_t n = 0;
        for (const auto& e : episodes) {
            n += e.steps.size();
        }
        return n;
    }

    const TaskSpec& task(int id) const {
        for (const auto& t : tasks) {
            if (t.id == id) {
                return t;
            }
        }
        throw TaskError("dataset has no task " + std::to_string(id));
    }
};

/// Reset seed for episode `index` of `task_id` under dataset seed `seed`.
inline std::uint64_t episode_seed(std::uint64_t seed, int task_id, std::size_t index) {
    return mix_seed(mix_seed(seed, static_cast<std::uint64_t>(task_id)), index);
}

/// Runs the scripted expert from `start` until success or the step cap.
inline Episode expert_episode(const TaskSpec& task, std::uint64_t seed, const SimConfig& sim = {}) {
    Episode ep;
    ep.task_id = task.id;
    ep.instruction = task.instruction;
    ep.seed = seed;
    SceneState scene = reset(task, seed, sim);
    for (int t = 0; t < sim.episode_cap && !success(scene, task); ++t) {
        const Action a = expert_action(scene, task, sim);
        ep.steps.push_back({scene, proprio(scene), a});
        scene = step(scene, a, sim);
    }
    if (ep.steps.empty() || !success(scene, task)) {
        throw GenerationError("expert failed on task " + std::to_string(task.id) + " seed " + std::to_string(seed));
    }
    ep.final_scene = scene;
    return ep;
}

/// Replays the stored actions from the first scene; true when every stored
/// scene is reproduced within `tol` and the final scene satisfies the task.
inline bool verify_episode(const Episode& ep, const TaskSpec& task, const SimConfig& sim = {}, double tol = 1e-9) {
    if (ep.steps.empty()) {
        return false;
    }
    auto close = [tol](const SceneState& a, const SceneState& b) {
        auto near3 = [tol](const Vec3& x, const Vec3& y) {
            return std::abs(x[0] - y[0]) <= tol && std::abs(x[1] - y[1]) <= tol && std::abs(x[2] - y[2]) <= tol;
        };
        if (!near3(a.ee_pos, b.ee_pos) || !near3(a.ee_rot, b.ee_rot) || a.gripper != b.gripper ||
            a.held_object != b.held_object || a.objects.size() != b.objects.size()) {
            return false;
        }
        for (std::size_t i = 0; i < a.objects.size(); ++i) {
            if (!near3(a.objects[i].pos, b.objects[i].pos)) {
                return false;
            }
        }
        return true;
    };
    SceneState scene = ep.steps.front().scene;
    for (const auto& s : ep.steps) {
        if (!close(scene, s.scene)) {
            return false;
        }
        scene = step(scene, s.action, sim);
    }
    return close(scene, ep.final_scene) && success(ep.final_scene, task);
}

/// Scripted-expert demonstrations from distinct reset seeds. Scenes, not
/// rendered observations, are stored.
inline Dataset generate_dataset(const std::vector<TaskSpec>& tasks, std::size_t episodes_per_task, std::uint64_t seed,
                                const SimConfig& sim = {}) {
    if (episodes_per_task < 1) {
        throw ConfigError("episodes_per_task must be >= 1");
    }
    Dataset ds;
    ds.seed = seed;
    ds.tasks = tasks;
    ds.seen_cameras = seen_cameras(sim);
    for (const auto& task : tasks) {
        for (std::size_t e = 0; e < episodes_per_task; ++e) {
            ds.episodes.push_back(expert_episode(task, episode_seed(seed, task.id, e), sim));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// JSON-lines persistence. Floats are written with 17 significant digits.

namespace io {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <std::size_t N>
std::string arr(const std::array<double, N>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < N; ++i) {
        s += (i ? "," : "") + num(v[i]);
    }
    return s + "]";
}

inline std::string str(const std::string& s) { return nlohmann::json(s).dump(); }

inline std::string scene_json(const SceneState& s) {
    std::string out = "{\"ee_pos\":" + arr(s.ee_pos) + ",\"ee_rot\":" + arr(s.ee_rot) + ",\"gripper\":" + num(s.gripper) +
                      ",\"objects\":[";
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        const auto& o = s.objects[i];
        out += std::string(i ? "," : "") + "{\"id\":" + std::to_string(o.id) + ",\"color\":" + str(o.color) +
               ",\"pos\":" + arr(o.pos) + "}";
    }
    out += "],\"goal_regions\":[";
    for (std::size_t i = 0; i < s.goal_regions.size(); ++i) {
        const auto& g = s.goal_regions[i];
        out += std::string(i ? "," : "") + "{\"id\":" + std::to_string(g.id) + ",\"name\":" + str(g.name) +
               ",\"center\":" + arr(g.center) + ",\"radius\":" + num(g.radius) + "}";
    }
    out += "],\"held_object\":" + (s.held_object ? std::to_string(*s.held_object) : std::string("null")) + "}";
    return out;
}

inline std::string camera_json(const CameraPose& c) {
    return "{\"position\":" + arr(c.position) + ",\"look_at\":" + arr(c.look_at) + ",\"up\":" + arr(c.up) +
           ",\"focal\":" + num(c.focal) + ",\"principal_point\":" + arr(c.principal_point) + ",\"image_size\":[" +
           std::to_string(c.width) + "," + std::to_string(c.height) + "]}";
}

inline std::string task_json(const TaskSpec& t) {
    std::string out = "{\"id\":" + std::to_string(t.id) + ",\"instruction\":" + str(t.instruction) + ",\"placements\":[";
    for (std::size_t i = 0; i < t.placements.size(); ++i) {
        out += std::string(i ? "," : "") + "[" + std::to_string(t.placements[i].object_id) + "," +
               std::to_string(t.placements[i].goal_id) + "]";
    }
    return out + "]}";
}

inline std::string episode_json(const Episode& ep) {
    std::string out = "{\"task_id\":" + std::to_string(ep.task_id) + ",\"instruction\":" + str(ep.instruction) +
                      ",\"seed\":" + std::to_string(ep.seed) + ",\"steps\":[";
    for (std::size_t i = 0; i < ep.steps.size(); ++i) {
        const auto& s = ep.steps[i];
        out += std::string(i ? "," : "") + "{\"scene\":" + scene_json(s.scene) + ",\"proprio\":" + arr(s.proprio) +
               ",\"action\":" + arr(s.action.flatten()) + "}";
    }
    return out + "],\"final_scene\":" + scene_json(ep.final_scene) + "}";
}

template <std::size_t N>
std::array<double, N> read_arr(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != N) {
        throw FormatError("expected numeric array of length " + std::to_string(N));
    }
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        out[i] = j[i].get<double>();
    }
    return out;
}

inline SceneState read_scene(const nlohmann::json& j) {
    SceneState s;
    s.ee_pos = read_arr<3>(j.at("ee_pos"));
    s.ee_rot = read_arr<3>(j.at("ee_rot"));
    s.gripper = j.at("gripper").get<double>();
    for (const auto& o : j.at("objects")) {
        s.objects.push_back({o.at("id").get<int>(), o.at("color").get<std::string>(), read_arr<3>(o.at("pos"))});
    }
    for (const auto& g : j.at("goal_regions")) {
        s.goal_regions.push_back({g.at("id").get<int>(), g.at("name").get<std::string>(), read_arr<3>(g.at("center")),
                                  g.at("radius").get<double>()});
    }
    if (!j.at("held_object").is_null()) {
        s.held_object = j.at("held_object").get<int>();
    }
    return s;
}

inline CameraPose read_camera(const nlohmann::json& j) {
    CameraPose c;
    c.position = read_arr<3>(j.at("position"));
    c.look_at = read_arr<3>(j.at("look_at"));
    c.up = read_arr<3>(j.at("up"));
    c.focal = j.at("focal").get<double>();
    c.principal_point = read_arr<2>(j.at("principal_point"));
    c.width = j.at("image_size").at(0).get<int>();
    c.height = j.at("image_size").at(1).get<int>();
    return c;
}

inline TaskSpec read_task(const nlohmann::json& j) {
    TaskSpec t;
    t.id = j.at("id").get<int>();
    t.instruction = j.at("instruction").get<std::string>();
    for (const auto& p : j.at("placements")) {
        t.placements.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    }
    return t;
}

inline Episode read_episode(const nlohmann::json& j) {
    Episode ep;
    ep.task_id = j.at("task_id").get<int>();
    ep.instruction = j.at("instruction").get<std::string>();
    ep.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("steps")) {
        const auto a = read_arr<kActionDim>(s.at("action"));
        ep.steps.push_back({read_scene(s.at("scene")), read_arr<kProprioDim>(s.at("proprio")), Action::from_flat(a)});
    }
    ep.final_scene = read_scene(j.at("final_scene"));
    if (ep.steps.empty()) {
        throw FormatError("episode has no steps");
    }
    return ep;
}

} // namespace io

inline std::string serialize_dataset(const Dataset& ds) {
    std::string out = "{\"format_version\":1,\"tasks\":[";
    for (std::size_t i = 0; i < ds.tasks.size(); ++i) {
        out += (i ? "," : "") + io::task_json(ds.tasks[i]);
    }
    out += "],\"seen_cameras\":[";
    for (std::size_t i = 0; i < ds.seen_cameras.size(); ++i) {
        out += (i ? "," : "") + io::camera_json(ds.seen_cameras[i]);
    }
    out += "],\"seed\":" + std::to_string(ds.seed) + "}\n";
    for (const auto& ep : ds.episodes) {
        out += io::episode_json(ep) + "\n";
    }
    return out;
}

inline Dataset parse_dataset(std::istream& in) {
    Dataset ds;
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError("dataset: missing header line");
    }
    try {
        const auto header = nlohmann::json::parse(line);
        if (header.at("format_version").get<int>() != 1) {
            throw FormatError("dataset: unsupported format_version");
        }
        for (const auto& t : header.at("tasks")) {
            ds.tasks.push_back(io::read_task(t));
        }
        for (const auto& c : header.at("seen_cameras")) {
            ds.seen_cameras.push_back(io::read_camera(c));
        }
        ds.seed = header.at("seed").get<std::uint64_t>();
        while (std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            ds.episodes.push_back(io::read_episode(nlohmann::json::parse(line)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: ") + e.what());
    }
    return ds;
}

/// Writes to a temporary sibling and renames it over `path`, so a failed
/// write never leaves a truncated dataset.
inline void save_dataset(const Dataset& ds, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw InputError("cannot write dataset to " + path);
        }
        out << serialize_dataset(ds);
        if (!out) {
            out.close();
            std::remove(tmp.c_str());
            throw InputError("failed writing dataset to " + path);
        }
    }
    std::filesystem::rename(tmp, path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open dataset " + path);
    }
    return parse_dataset(in);
}

} // namespace geoaware::deskworld

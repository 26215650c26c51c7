#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "geoaware/deskworld/types.hpp"
#include "geoaware/policy/config.hpp"

namespace geoaware {

using Json = nlohmann::ordered_json;

struct TrainConfig {
    std::size_t steps = 5000;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t vq_pretrain_steps = 2000;
    std::size_t eval_every = 1000; // progress report interval (steps)

    bool operator==(const TrainConfig&) const = default;

    void validate() const {
        if (steps < 1 || batch_size < 1) {
            throw ConfigError("train: steps and batch_size must be >= 1");
        }
        if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
            throw ConfigError("train: lr and weight_decay must be non-negative");
        }
    }
};

struct EvalConfig {
    std::size_t rollouts_per_task = 10;
    std::size_t max_steps = 200;

    bool operator==(const EvalConfig&) const = default;
};

struct DataConfig {
    std::size_t episodes_per_task = 50;

    bool operator==(const DataConfig&) const = default;
};

/// Everything a run needs, under namespaced keys.
struct RunConfig {
    std::uint64_t seed = 0;
    deskworld::SimConfig sim;
    backbones::GeoStubConfig geo;
    policy::PolicyConfig policy;
    TrainConfig train;
    EvalConfig eval;
    DataConfig data;

    bool operator==(const RunConfig&) const = default;

    void validate() const {
        geo.validate();
        policy.validate(geo);
        train.validate();
        if (policy.views != 2) {
            throw ConfigError("policy.views must be 2 (two fixed training cameras)");
        }
        if (eval.rollouts_per_task < 1 || data.episodes_per_task < 1) {
            throw ConfigError("eval.rollouts_per_task and data.episodes_per_task must be >= 1");
        }
    }
};

namespace config_detail {

/// Reads `key` from `j` into `out` if present; records the key as known.
template <typename V>
void read(const Json& j, const char* key, V& out, std::set<std::string>& known) {
    known.insert(key);
    if (j.contains(key)) {
        out = j.at(key).get<V>();
    }
}

inline void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& ns) {
    if (!j.is_object()) {
        throw ConfigError("config: " + (ns.empty() ? std::string("root") : ns) + " must be an object");
    }
    for (const auto& [k, _] : j.items()) {
        if (!known.contains(k)) {
            throw ConfigError("config: unknown key " + (ns.empty() ? k : ns + "." + k));
        }
    }
}

inline Json vec3(const deskworld::Vec3& v) { return Json::array({v[0], v[1], v[2]}); }

} // namespace config_detail

inline Json to_json(const RunConfig& c) {
    using config_detail::vec3;
    Json j;
    j["seed"] = c.seed;
    j["sim"] = {{"max_step", c.sim.max_step},
                {"grasp_radius", c.sim.grasp_radius},
                {"episode_cap", c.sim.episode_cap},
                {"goal_radius", c.sim.goal_radius},
                {"min_separation", c.sim.min_separation},
                {"goal_separation", c.sim.goal_separation},
                {"table_half_extent", c.sim.table_half_extent},
                {"workspace_half_extent", c.sim.workspace_half_extent},
                {"home", vec3(c.sim.home)},
                {"image_size", c.sim.image_size},
                {"focal", c.sim.focal},
                {"camera_radius", c.sim.camera_radius}};
    j["geo"] = {{"layers", c.geo.layers},
                {"width", c.geo.width},
                {"keypoints", c.geo.keypoints},
                {"lift_seed", c.geo.lift_seed}};
    const auto& p = c.policy;
    j["policy"] = {{"repr", p.repr},
                   {"conv", p.conv},
                   {"hidden", p.hidden},
                   {"lang_emb", p.lang_emb},
                   {"chunk", p.chunk},
                   {"select", backbones::to_string(p.selection)},
                   {"trunk_layers", p.trunk_layers},
                   {"trunk_heads", p.trunk_heads},
                   {"ff_mult", p.ff_mult},
                   {"views", p.views},
                   {"head", policy::to_string(p.head)},
                   {"backbone", policy::to_string(p.backbone)},
                   {"vq",
                    {{"codes", p.vq.codes},
                     {"latent", p.vq.latent},
                     {"hidden", p.vq.hidden},
                     {"beta", p.vq.beta},
                     {"offset_weight", p.vq.offset_weight}}},
                   {"vocabulary", p.vocabulary}};
    j["train"] = {{"steps", c.train.steps},
                  {"batch_size", c.train.batch_size},
                  {"lr", c.train.lr},
                  {"weight_decay", c.train.weight_decay},
                  {"vq_pretrain_steps", c.train.vq_pretrain_steps},
                  {"eval_every", c.train.eval_every}};
    j["eval"] = {{"rollouts_per_task", c.eval.rollouts_per_task}, {"max_steps", c.eval.max_steps}};
    j["data"] = {{"episodes_per_task", c.data.episodes_per_task}};
    return j;
}

/// Overlays `j` onto `base`. Missing keys keep their base value; unknown keys
/// are rejected.
inline RunConfig merge_json(RunConfig c, const Json& j) {
    using config_detail::read;
    using config_detail::reject_unknown;
    try {
        std::set<std::string> root;
        read(j, "seed", c.seed, root);
        for (const char* ns : {"sim", "geo", "policy", "train", "eval", "data"}) {
            root.insert(ns);
        }
        reject_unknown(j, root, "");
        if (j.contains("sim")) {
            const auto& s = j.at("sim");
            std::set<std::string> k;
            read(s, "max_step", c.sim.max_step, k);
            read(s, "grasp_radius", c.sim.grasp_radius, k);
            read(s, "episode_cap", c.sim.episode_cap, k);
            read(s, "goal_radius", c.sim.goal_radius, k);
            read(s, "min_separation", c.sim.min_separation, k);
            read(s, "goal_separation", c.sim.goal_separation, k);
            read(s, "table_half_extent", c.sim.table_half_extent, k);
            read(s, "workspace_half_extent", c.sim.workspace_half_extent, k);
            std::array<double, 3> home = c.sim.home;
            read(s, "home", home, k);
            c.sim.home = home;
            read(s, "image_size", c.sim.image_size, k);
            read(s, "focal", c.sim.focal, k);
            read(s, "camera_radius", c.sim.camera_radius, k);
            reject_unknown(s, k, "sim");
        }
        if (j.contains("geo")) {
            const auto& g = j.at("geo");
            std::set<std::string> k;
            read(g, "layers", c.geo.layers, k);
            read(g, "width", c.geo.width, k);
            read(g, "keypoints", c.geo.keypoints, k);
            read(g, "lift_seed", c.geo.lift_seed, k);
            reject_unknown(g, k, "geo");
        }
        if (j.contains("policy")) {
            const auto& p = j.at("policy");
            std::set<std::string> k;
            read(p, "repr", c.policy.repr, k);
            read(p, "conv", c.policy.conv, k);
            read(p, "hidden", c.policy.hidden, k);
            read(p, "lang_emb", c.policy.lang_emb, k);
            read(p, "chunk", c.policy.chunk, k);
            std::string select = backbones::to_string(c.policy.selection);
            read(p, "select", select, k);
            c.policy.selection = backbones::parse_layer_selection(select);
            read(p, "trunk_layers", c.policy.trunk_layers, k);
            read(p, "trunk_heads", c.policy.trunk_heads, k);
            read(p, "ff_mult", c.policy.ff_mult, k);
            read(p, "views", c.policy.views, k);
            std::string head = policy::to_string(c.policy.head);
            read(p, "head", head, k);
            c.policy.head = policy::parse_head(head);
            std::string backbone = policy::to_string(c.policy.backbone);
            read(p, "backbone", backbone, k);
            c.policy.backbone = policy::parse_backbone(backbone);
            read(p, "vocabulary", c.policy.vocabulary, k);
            k.insert("vq");
            reject_unknown(p, k, "policy");
            if (p.contains("vq")) {
                const auto& v = p.at("vq");
                std::set<std::string> vk;
                read(v, "codes", c.policy.vq.codes, vk);
                read(v, "latent", c.policy.vq.latent, vk);
                read(v, "hidden", c.policy.vq.hidden, vk);
                read(v, "beta", c.policy.vq.beta, vk);
                read(v, "offset_weight", c.policy.vq.offset_weight, vk);
                reject_unknown(v, vk, "policy.vq");
            }
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            std::set<std::string> k;
            read(t, "steps", c.train.steps, k);
            read(t, "batch_size", c.train.batch_size, k);
            read(t, "lr", c.train.lr, k);
            read(t, "weight_decay", c.train.weight_decay, k);
            read(t, "vq_pretrain_steps", c.train.vq_pretrain_steps, k);
            read(t, "eval_every", c.train.eval_every, k);
            reject_unknown(t, k, "train");
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            std::set<std::string> k;
            read(e, "rollouts_per_task", c.eval.rollouts_per_task, k);
            read(e, "max_steps", c.eval.max_steps, k);
            reject_unknown(e, k, "eval");
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            std::set<std::string> k;
            read(d, "episodes_per_task", c.data.episodes_per_task, k);
            reject_unknown(d, k, "data");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig from_json(const Json& j) { return merge_json(RunConfig{}, j); }

inline RunConfig parse_config(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return from_json(j);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

} // namespace geoaware

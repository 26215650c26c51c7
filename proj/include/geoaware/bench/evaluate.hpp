#pragma once

#include <string>
#include <vector>

#include "geoaware/bench/report.hpp"
#include "geoaware/bench/rollout.hpp"
#include "geoaware/training/checkpoint.hpp"
#include "geoaware/training/train.hpp"

namespace geoaware::bench {

struct EvalOptions {
    deskworld::ViewCategory category = deskworld::ViewCategory::seen;
    std::size_t rollouts_per_task = 10;
    std::vector<std::uint64_t> seeds{0};
    std::size_t max_steps = 200;
};

/// Scene and camera seed of rollout `r` of `task_id` under evaluation seed `seed`.
inline std::uint64_t rollout_seed(std::uint64_t seed, int task_id, std::size_t r) {
    return mix_seed(mix_seed(seed ^ 0x5eed0e7a1ULL, static_cast<std::uint64_t>(task_id)), r);
}

/// Runs rollouts_per_task rollouts per task and seed. Counts are pooled over
/// seeds, so with equal rollouts per seed the rate is the seed average.
inline EvalReport evaluate(const BatchPolicy& pol, const std::string& model, const std::vector<TaskSpec>& tasks,
                           const EvalOptions& opt, const deskworld::SimConfig& sim = {}) {
    if (opt.rollouts_per_task < 1 || opt.seeds.empty()) {
        throw ConfigError("evaluate: need at least one rollout and one seed");
    }
    std::vector<RolloutSpec> specs;
    std::vector<std::size_t> owner;
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        for (const auto seed : opt.seeds) {
            for (std::size_t r = 0; r < opt.rollouts_per_task; ++r) {
                const auto rs = rollout_seed(seed, tasks[ti].id, r);
                specs.push_back({&tasks[ti], rs, rollout_cameras(opt.category, rs, sim)});
                owner.push_back(ti);
            }
        }
    }
    const auto results = run_rollouts(pol, specs, sim, opt.max_steps);
    EvalReport rep;
    rep.model = model;
    rep.category = deskworld::to_string(opt.category);
    rep.seeds = opt.seeds;
    for (const auto& t : tasks) {
        rep.tasks.push_back({t.id, 0, 0});
    }
    double length = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        auto& tr = rep.tasks[owner[i]];
        ++tr.rollouts;
        tr.successes += results[i].success ? 1 : 0;
        length += static_cast<double>(results[i].steps);
    }
    rep.mean_episode_length = results.empty() ? 0.0 : length / static_cast<double>(results.size());
    return rep;
}

inline EvalReport evaluate(const policy::Policy<float>& pol, const std::string& model,
                           const std::vector<TaskSpec>& tasks, const EvalOptions& opt,
                           const deskworld::SimConfig& sim = {}) {
    const backbones::GeoBackbone geo(pol.geo);
    return evaluate(learned_policy(pol, geo), model, tasks, opt, sim);
}

/// Evaluates both checkpoints per category and reports geo/pixel ratios.
inline ComparisonReport compare(const training::Checkpoint& geo_ck, const training::Checkpoint& pixel_ck,
                                const std::vector<deskworld::ViewCategory>& categories,
                                const std::vector<TaskSpec>& tasks, EvalOptions opt) {
    if (!(geo_ck.config.sim == pixel_ck.config.sim)) {
        throw ConfigError("compare: checkpoints were trained under different simulator settings");
    }
    ComparisonReport rep;
    rep.geo_model = "geoaware-" + policy::to_string(geo_ck.config.policy.head);
    rep.pixel_model = "pixel-" + policy::to_string(pixel_ck.config.policy.head);
    for (const auto c : categories) {
        opt.category = c;
        rep.geo.push_back(evaluate(geo_ck.policy, rep.geo_model, tasks, opt, geo_ck.config.sim));
        rep.pixel.push_back(evaluate(pixel_ck.policy, rep.pixel_model, tasks, opt, pixel_ck.config.sim));
        rep.rows.push_back({deskworld::to_string(c), rep.geo.back().average_rate(), rep.pixel.back().average_rate()});
    }
    return rep;
}

struct AblationRun {
    AblationReport report;
    std::vector<RunConfig> configs;
    std::vector<policy::Policy<float>> policies;
};

/// Trains one geo policy per layer-selection mode with shared seeds and
/// evaluates each on seen and novel-medium views.
inline AblationRun ablate_layers(const deskworld::Dataset& ds, const RunConfig& base,
                                 const std::vector<backbones::LayerSelection>& modes, const EvalOptions& eval,
                                 const std::function<void(const std::string&, training::Phase, std::size_t, double)>&
                                     progress = {}) {
    if (base.policy.backbone != policy::BackboneKind::geo) {
        throw ConfigError("ablate: layer selection applies to the geo backbone only");
    }
    if (modes.empty()) {
        throw ConfigError("ablate: no modes given");
    }
    const auto default_mode = backbones::to_string(policy::PolicyConfig{}.selection);
    AblationRun out;
    for (const auto& mode : modes) {
        RunConfig cfg = base;
        cfg.policy.selection = mode;
        cfg.validate();
        const auto name = backbones::to_string(mode);
        training::ProgressFn cb;
        if (progress) {
            cb = [&](training::Phase ph, std::size_t s, double l) { progress(name, ph, s, l); };
        }
        auto trained = training::bc_train(ds, cfg, cb);
        EvalOptions seen = eval, novel = eval;
        seen.category = deskworld::ViewCategory::seen;
        novel.category = deskworld::ViewCategory::novel_medium;
        const std::string model = "geoaware-" + name;
        out.report.rows.push_back({name, name == default_mode,
                                   evaluate(trained.policy, model, ds.tasks, seen, cfg.sim),
                                   evaluate(trained.policy, model, ds.tasks, novel, cfg.sim)});
        out.configs.push_back(cfg);
        out.policies.push_back(std::move(trained.policy));
    }
    return out;
}

} // namespace geoaware::bench

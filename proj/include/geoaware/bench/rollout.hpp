#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "geoaware/deskworld/viewpoints.hpp"
#include "geoaware/deskworld/world.hpp"
#include "geoaware/training/batch.hpp"

namespace geoaware::bench {

using deskworld::Action;
using deskworld::CameraPose;
using deskworld::SceneState;
using deskworld::TaskSpec;

/// One pending decision: the current scene, its task and the cameras it is
/// observed through.
struct PolicyQuery {
    const SceneState* scene = nullptr;
    const TaskSpec* task = nullptr;
    const std::vector<CameraPose>* cameras = nullptr;
};

/// Maps a batch of queries to actions. An empty optional marks a failed
/// decision (non-finite output); `diagnostics` receives the reason.
using BatchPolicy =
    std::function<std::vector<std::optional<Action>>(const std::vector<PolicyQuery>&, std::vector<std::string>& diagnostics)>;

/// First action of a normalized chunk, in simulator units, gripper thresholded at 0.
inline std::optional<Action> decode_action(std::span<const float> chunk) {
    std::array<double, deskworld::kActionDim> a{};
    for (std::size_t k = 0; k < deskworld::kActionDim; ++k) {
        const double v = chunk[k];
        if (!std::isfinite(v)) {
            return std::nullopt;
        }
        a[k] = v / policy::kActionScale[k];
    }
    a[6] = a[6] >= 0.0 ? 1.0 : -1.0;
    return Action::from_flat(a);
}

/// Wraps a trained policy. The policy is read-only; the backbone is the
/// frozen geometry surrogate matching its config.
inline BatchPolicy learned_policy(const policy::Policy<float>& pol, const backbones::GeoBackbone& geo) {
    return [&pol, &geo](const std::vector<PolicyQuery>& qs, std::vector<std::string>& diag) {
        diag.assign(qs.size(), "");
        auto run = [&](std::size_t begin, std::size_t end) {
            std::vector<const SceneState*> scenes;
            std::vector<std::vector<CameraPose>> cams;
            std::vector<std::size_t> lang;
            for (std::size_t i = begin; i < end; ++i) {
                scenes.push_back(qs[i].scene);
                cams.push_back(*qs[i].cameras);
                lang.push_back(policy::vocabulary_id(pol.config, qs[i].task->instruction));
            }
            nn::NoGradGuard guard;
            const auto in = training::observe<float>(pol.config, geo, scenes, cams, lang);
            return policy::policy_forward(pol, in);
        };
        std::vector<std::optional<Action>> out(qs.size());
        const std::size_t w = pol.config.action_dim();
        try {
            const auto pred = run(0, qs.size());
            for (std::size_t i = 0; i < qs.size(); ++i) {
                out[i] = decode_action(pred.values().subspan(i * w, w));
                if (!out[i]) {
                    diag[i] = "non-finite policy output";
                }
            }
        } catch (const NumericError&) {
            // Isolate the offending samples.
            for (std::size_t i = 0; i < qs.size(); ++i) {
                try {
                    out[i] = decode_action(run(i, i + 1).values().subspan(0, w));
                    if (!out[i]) {
                        diag[i] = "non-finite policy output";
                    }
                } catch (const NumericError& e) {
                    diag[i] = e.what();
                }
            }
        }
        return out;
    };
}

/// The scripted expert; it reads the true scene and ignores the cameras.
inline BatchPolicy expert_policy(const deskworld::SimConfig& sim) {
    return [sim](const std::vector<PolicyQuery>& qs, std::vector<std::string>& diag) {
        diag.assign(qs.size(), "");
        std::vector<std::optional<Action>> out;
        for (const auto& q : qs) {
            out.emplace_back(deskworld::expert_action(*q.scene, *q.task, sim));
        }
        return out;
    };
}

struct RolloutSpec {
    const TaskSpec* task = nullptr;
    std::uint64_t seed = 0;
    std::vector<CameraPose> cameras;
};

struct RolloutResult {
    bool success = false;
    std::size_t steps = 0;
    std::vector<SceneState> trajectory; // initial scene plus one per executed action
    std::string diagnostic;             // set when the rollout was aborted
};

/// Closed-loop rollouts in lockstep so the policy sees one batch per step.
inline std::vector<RolloutResult> run_rollouts(const BatchPolicy& pol, const std::vector<RolloutSpec>& specs,
                                               const deskworld::SimConfig& sim, std::size_t max_steps) {
    std::vector<RolloutResult> results(specs.size());
    std::vector<SceneState> scenes;
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        scenes.push_back(deskworld::reset(*specs[i].task, specs[i].seed, sim));
        results[i].trajectory.push_back(scenes.back());
        if (deskworld::success(scenes[i], *specs[i].task)) {
            results[i].success = true;
        } else {
            active.push_back(i);
        }
    }
    std::vector<std::string> diag;
    for (std::size_t t = 0; t < max_steps && !active.empty(); ++t) {
        std::vector<PolicyQuery> qs;
        for (const auto i : active) {
            qs.push_back({&scenes[i], specs[i].task, &specs[i].cameras});
        }
        const auto acts = pol(qs, diag);
        std::vector<std::size_t> still;
        for (std::size_t j = 0; j < active.size(); ++j) {
            const auto i = active[j];
            auto& r = results[i];
            if (!acts[j]) {
                r.diagnostic = "step " + std::to_string(t) + ": " + (diag[j].empty() ? "no action" : diag[j]);
                continue;
            }
            scenes[i] = deskworld::step(scenes[i], *acts[j], sim);
            r.trajectory.push_back(scenes[i]);
            ++r.steps;
            if (deskworld::success(scenes[i], *specs[i].task)) {
                r.success = true;
            } else {
                still.push_back(i);
            }
        }
        active = std::move(still);
    }
    return results;
}

inline RolloutResult rollout(const BatchPolicy& pol, const TaskSpec& task, const std::vector<CameraPose>& cameras,
                             std::uint64_t seed, const deskworld::SimConfig& sim = {}, std::size_t max_steps = 200) {
    return run_rollouts(pol, {{&task, seed, cameras}}, sim, max_steps).front();
}

/// Evaluation cameras for one rollout. Novel draws must not coincide with a
/// training camera.
inline std::vector<CameraPose> rollout_cameras(deskworld::ViewCategory category, std::uint64_t rollout_seed,
                                               const deskworld::SimConfig& sim) {
    const auto seen = deskworld::seen_cameras(sim);
    if (category == deskworld::ViewCategory::seen) {
        return seen;
    }
    auto cams = deskworld::sample_viewpoints(category, seen.size(), mix_seed(rollout_seed, 0xca3e), sim).cameras;
    for (const auto& c : cams) {
        for (const auto& s : seen) {
            if (c == s) {
                throw StateError("novel evaluation camera coincides with a training camera");
            }
        }
    }
    return cams;
}

} // namespace geoaware::bench

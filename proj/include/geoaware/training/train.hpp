#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "geoaware/config.hpp"
#include "geoaware/deskworld/viewpoints.hpp"
#include "geoaware/numerics/adamw.hpp"
#include "geoaware/training/batch.hpp"

namespace geoaware::training {

/// Raised when a training step produces a non-finite value.
class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(std::size_t step, const std::string& diagnostic)
        : NumericError("training diverged at step " + std::to_string(step) + ": " + diagnostic), step_(step) {}

    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

enum class Phase { codebook, policy };

struct TrainResult {
    policy::Policy<float> policy;
    std::vector<double> losses;    // per step of the main phase
    std::vector<double> vq_losses; // per step of codebook pretraining
};

using ProgressFn = std::function<void(Phase, std::size_t step, double recent_loss)>;

inline std::vector<std::string> names_with_prefix(const nn::ParamStore<float>& ps, const std::string& prefix) {
    std::vector<std::string> out;
    for (const auto& n : ps.names()) {
        if (n.rfind(prefix, 0) == 0) {
            out.push_back(n);
        }
    }
    return out;
}

/// "name=norm" for every parameter; non-finite norms flag the culprit.
inline std::string parameter_norms(const nn::ParamStore<float>& ps) {
    std::ostringstream os;
    bool first = true;
    for (const auto& name : ps.names()) {
        double s = 0.0;
        for (const float v : ps.get(name).values()) {
            s += static_cast<double>(v) * v;
        }
        os << (first ? "" : ", ") << name << "=" << std::sqrt(s);
        first = false;
    }
    return os.str();
}

/// Mean of the last `window` entries (or fewer, at the start).
inline double trailing_mean(const std::vector<double>& xs, std::size_t end, std::size_t window) {
    const std::size_t begin = end > window ? end - window : 0;
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        s += xs[i];
    }
    return end > begin ? s / static_cast<double>(end - begin) : 0.0;
}

namespace train_detail {

inline std::vector<StepIndex> sample(const std::vector<StepIndex>& pool, std::size_t n, Rng& rng) {
    std::vector<StepIndex> out(n);
    for (auto& s : out) {
        s = pool[rng.index(pool.size())];
    }
    return out;
}

template <typename F>
double guarded_step(std::size_t step, const nn::ParamStore<float>& ps, F&& body) {
    try {
        return body();
    } catch (const NumericError& e) {
        throw TrainingDiverged(step, std::string(e.what()) + "; parameter norms: " + parameter_norms(ps));
    }
}

/// Normalized expert chunks and masks for the sampled steps (no observations).
inline std::pair<nn::Tensor<float>, std::vector<float>> action_targets(const deskworld::Dataset& ds,
                                                                      const std::vector<StepIndex>& idx,
                                                                      const policy::PolicyConfig& cfg) {
    const std::size_t w = cfg.action_dim();
    std::vector<float> t(idx.size() * w), m(idx.size() * w);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        write_chunk(ds.episodes[idx[i].episode], idx[i].step, cfg.chunk, t.data() + i * w, m.data() + i * w);
    }
    return {nn::Tensor<float>({idx.size(), w}, std::move(t)), std::move(m)};
}

} // namespace train_detail

/// Behavior cloning on uniformly sampled (episode, step) pairs, observed
/// through the dataset's seen cameras. With the VQ-BeT head the codebook is
/// pretrained first and frozen for the policy phase.
inline TrainResult bc_train(const deskworld::Dataset& ds, const RunConfig& cfg, const ProgressFn& progress = {}) {
    cfg.validate();
    const auto pool = all_steps(ds);
    if (pool.empty()) {
        throw InputError("bc_train: dataset has no steps");
    }
    const backbones::GeoBackbone geo(cfg.geo);
    const auto cameras = ds.seen_cameras.empty() ? deskworld::seen_cameras(cfg.sim) : ds.seen_cameras;
    TrainResult result{policy::make_policy<float>(cfg.policy, cfg.geo, mix_seed(cfg.seed, 1)), {}, {}};
    auto& pol = result.policy;
    auto& ps = pol.params;
    Rng rng(mix_seed(cfg.seed, 2));
    const nn::AdamWOptions opts{cfg.train.lr, 0.9, 0.999, 1e-8, cfg.train.weight_decay};
    const std::size_t report = std::max<std::size_t>(cfg.train.eval_every, 1);

    if (cfg.policy.head == policy::HeadKind::vqbet) {
        const auto vq_names = names_with_prefix(ps, "vq.");
        // Seed the codebook with encodings of distinct random expert chunks.
        {
            nn::NoGradGuard guard;
            const auto [acts, mask] =
                train_detail::action_targets(ds, train_detail::sample(pool, cfg.policy.vq.codes, rng), cfg.policy);
            auto z = policy::vq_encode(ps, acts);
            auto codes = ps.get("vq.codes").mutable_values();
            std::copy(z.values().begin(), z.values().end(), codes.begin());
        }
        nn::AdamW<float> vq_opt(opts);
        for (std::size_t s = 0; s < cfg.train.vq_pretrain_steps; ++s) {
            const double loss = train_detail::guarded_step(s, ps, [&] {
                const auto [acts, mask] = train_detail::action_targets(
                    ds, train_detail::sample(pool, cfg.train.batch_size, rng), cfg.policy);
                auto l = policy::vqvae_loss(ps, cfg.policy.vq, acts, std::span<const float>(mask));
                l.backward();
                vq_opt.step(ps, vq_names);
                return static_cast<double>(l.item());
            });
            result.vq_losses.push_back(loss);
            if (progress && (s + 1) % report == 0) {
                progress(Phase::codebook, s + 1, trailing_mean(result.vq_losses, s + 1, 100));
            }
        }
        for (const auto& n : vq_names) {
            ps.freeze(n);
        }
        pol.codebook_trained = true;
    }

    nn::AdamW<float> opt(opts);
    for (std::size_t s = 0; s < cfg.train.steps; ++s) {
        const double loss = train_detail::guarded_step(s, ps, [&] {
            const auto batch =
                make_batch<float>(ds, train_detail::sample(pool, cfg.train.batch_size, rng), cfg.policy, geo, cameras);
            auto h = policy::action_embedding(pol, batch.input);
            const std::span<const float> mask(batch.mask);
            nn::Tensor<float> l;
            if (cfg.policy.head == policy::HeadKind::mlp) {
                l = nn::masked_mse_loss(policy::mlp_head(ps, h), batch.targets, mask);
            } else {
                const auto codes = policy::vq_targets(ps, batch.targets);
                l = policy::vqbet_loss(pol, h, batch.targets, codes, mask);
            }
            l.backward();
            opt.step(ps);
            return static_cast<double>(l.item());
        });
        result.losses.push_back(loss);
        if (progress && (s + 1) % report == 0) {
            progress(Phase::policy, s + 1, trailing_mean(result.losses, s + 1, 100));
        }
    }
    return result;
}

/// Masked MSE of the MLP head (normalized units) over the given steps.
inline double evaluate_mse(const policy::Policy<float>& pol, const deskworld::Dataset& ds,
                           const std::vector<StepIndex>& steps, const backbones::GeoBackbone& geo,
                           const std::vector<deskworld::CameraPose>& cameras) {
    nn::NoGradGuard guard;
    const auto batch = make_batch<float>(ds, steps, pol.config, geo, cameras);
    const auto pred = policy::policy_forward(pol, batch.input);
    return nn::masked_mse_loss(pred, batch.targets, std::span<const float>(batch.mask)).item();
}

} // namespace geoaware::training

#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "geoaware/numerics/grad_check.hpp"
#include "geoaware/policy/network.hpp"
#include "geoaware/training/batch.hpp"

namespace geoaware::cli {

using TensorD = nn::Tensor<double>;
using GradFn = std::function<TensorD(const std::vector<TensorD>&)>;

struct GradCase {
    std::string name;
    bool composite = false;
    GradFn f;
    std::vector<TensorD> inputs;
    // 0 checks every element.
    std::size_t sample = 0;
};

struct GradCaseResult {
    std::string name;
    bool composite = false;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    bool pass = false;
};

struct GradSuiteResult {
    std::vector<GradCaseResult> cases;
    double seconds = 0.0;

    bool pass() const {
        for (const auto& c : cases) {
            if (!c.pass) {
                return false;
            }
        }
        return true;
    }
    std::vector<std::string> failing() const {
        std::vector<std::string> out;
        for (const auto& c : cases) {
            if (!c.pass) {
                out.push_back(c.name);
            }
        }
        return out;
    }
};

namespace gc_detail {

inline TensorD random(nn::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(nn::numel(shape));
    for (auto& x : v) {
        x = rng.uniform(lo, hi);
    }
    return TensorD(std::move(shape), std::move(v));
}

// Scalar readout with a fixed random weight per element.
inline TensorD probe(const TensorD& y, std::uint64_t seed) {
    Rng rng(seed);
    return nn::sum(nn::mul(y, random(y.shape(), rng)));
}

inline nn::ParamStore<double> store(const std::vector<std::string>& names, const std::vector<TensorD>& t) {
    nn::ParamStore<double> ps;
    for (std::size_t i = 0; i < names.size(); ++i) {
        ps.add(names[i], t[i]);
    }
    return ps;
}

inline void take(const nn::ParamStore<double>& ps, const std::function<bool(const std::string&)>& keep,
                 std::vector<std::string>& names, std::vector<TensorD>& tensors) {
    for (const auto& n : ps.trainable_names()) {
        if (keep(n)) {
            names.push_back(n);
            tensors.push_back(ps.get(n).detach());
        }
    }
}

inline bool starts(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

inline policy::PolicyConfig small_policy(policy::HeadKind head, policy::BackboneKind backbone) {
    policy::PolicyConfig c;
    c.repr = 8;
    c.conv = 4;
    c.hidden = 8;
    c.lang_emb = 4;
    c.trunk_heads = 2;
    c.selection = {backbones::SelectMode::even, 2};
    c.head = head;
    c.backbone = backbone;
    c.vq.codes = 6;
    c.vq.latent = 3;
    c.vq.hidden = 5;
    return c;
}

inline backbones::GeoStubConfig small_geo() { return {4, 6, 10, 0x6e0a}; }

inline policy::PolicyInput<double> scene_input(const policy::PolicyConfig& cfg, std::size_t batch,
                                               std::uint64_t seed) {
    const auto tasks = deskworld::make_tasks();
    std::vector<deskworld::SceneState> scenes;
    std::vector<std::size_t> lang;
    for (std::size_t i = 0; i < batch; ++i) {
        auto s = deskworld::reset(tasks[i % tasks.size()], seed + i);
        s.ee_pos = {0.05 * static_cast<double>(i), -0.1, 0.2};
        scenes.push_back(s);
        lang.push_back(i % tasks.size());
    }
    std::vector<const deskworld::SceneState*> ptrs;
    for (const auto& s : scenes) {
        ptrs.push_back(&s);
    }
    const backbones::GeoBackbone geo(small_geo());
    return training::observe<double>(cfg, geo, ptrs,
                                     std::vector<std::vector<deskworld::CameraPose>>(batch, deskworld::seen_cameras()),
                                     lang);
}

} // namespace gc_detail

/// Every primitive op, the encoders, trunk, both heads and the full forward
/// pass, as scalar functions of their differentiable inputs. A case named in
/// `faults` gets its backward corrupted (gradient scaled by 1.5); this is how
/// the suite's failure path is exercised.
inline std::vector<GradCase> grad_cases(std::uint64_t seed = 0x9c, const std::vector<std::string>& faults = {}) {
    using namespace nn;
    using gc_detail::probe;
    Rng rng(seed);
    auto R = [&](Shape s, double lo = -1.0, double hi = 1.0) { return gc_detail::random(std::move(s), rng, lo, hi); };
    std::vector<GradCase> cases;
    auto prim = [&](std::string name, GradFn f, std::vector<TensorD> in) {
        const bool broken = std::find(faults.begin(), faults.end(), name) != faults.end();
        const auto k = cases.size() + 1;
        GradFn g = [f, broken, k](const std::vector<TensorD>& x) {
            auto y = f(x);
            return probe(broken ? scale_grad(y, 1.5) : y, 0x51 + k);
        };
        cases.push_back({std::move(name), false, std::move(g), std::move(in), 0});
    };

    prim("matmul", [](const auto& x) { return matmul(x[0], x[1]); }, {R({3, 4}), R({4, 5})});
    prim("add_bias", [](const auto& x) { return add_bias(x[0], x[1]); }, {R({2, 3, 4}), R({4})});
    prim("add", [](const auto& x) { return add(x[0], x[1]); }, {R({3, 4}), R({3, 4})});
    prim("sub", [](const auto& x) { return sub(x[0], x[1]); }, {R({3, 4}), R({3, 4})});
    prim("mul", [](const auto& x) { return mul(x[0], x[1]); }, {R({3, 4}), R({3, 4})});
    prim("scale", [](const auto& x) { return scale(x[0], -1.7); }, {R({5})});
    prim("relu", [](const auto& x) { return relu(x[0]); }, {R({4, 6})});
    prim("sum", [](const auto& x) { return sum(x[0]); }, {R({2, 5})});
    prim("mean", [](const auto& x) { return mean(x[0]); }, {R({2, 5})});
    prim("layer_norm", [](const auto& x) { return layer_norm(x[0], x[1], x[2]); },
         {R({3, 6}, -2.0, 2.0), R({6}), R({6})});
    prim("softmax", [](const auto& x) { return softmax(x[0]); }, {R({3, 5}, -2.0, 2.0)});
    prim("reshape", [](const auto& x) { return reshape(x[0], {6, 2}); }, {R({3, 4})});
    prim("transpose", [](const auto& x) { return transpose(x[0]); }, {R({2, 3, 4})});
    prim("concat", [](const auto& x) { return concat<double>({x[0], x[1]}, 1); }, {R({2, 3}), R({2, 4})});
    prim("slice", [](const auto& x) { return slice(x[0], 1, 1, 4); }, {R({3, 5})});
    prim("embedding_lookup", [](const auto& x) { return embedding_lookup(x[0], {2, 0, 2, 3}); }, {R({4, 3})});
    prim("add_tiled", [](const auto& x) { return add_tiled(x[0], x[1]); }, {R({6, 3}), R({3, 3})});
    prim("conv1d", [](const auto& x) { return conv1d(x[0], x[1], x[2], 1, 1); }, {R({2, 3, 7}), R({4, 3, 3}), R({4})});
    prim("conv1d_strided", [](const auto& x) { return conv1d(x[0], x[1], x[2], 2, 0); },
         {R({3, 9}), R({2, 3, 3}), R({2})});
    prim("conv2d", [](const auto& x) { return conv2d(x[0], x[1], x[2], 2, 1); },
         {R({2, 2, 6, 6}), R({3, 2, 3, 3}), R({3})});
    prim("adaptive_avg_pool1d", [](const auto& x) { return adaptive_avg_pool1d(x[0], 3); }, {R({2, 3, 7})});
    prim("film", [](const auto& x) { return film(x[0], x[1], x[2]); }, {R({2, 3, 5}), R({2, 3}), R({2, 3})});
    prim("causal_self_attention", [](const auto& x) { return causal_self_attention(x[0], 2, 3, 2); },
         {R({6, 12})});
    {
        const auto target = R({3, 4});
        prim("mse_loss", [target](const auto& x) { return mse_loss(x[0], target); }, {R({3, 4})});
        const std::vector<double> mask{1, 1, 0, 1, 0, 1, 1, 1, 1, 0, 0, 1};
        prim("masked_mse_loss",
             [target, mask](const auto& x) { return masked_mse_loss(x[0], target, std::span<const double>(mask)); },
             {R({3, 4})});
    }
    prim("cross_entropy", [](const auto& x) { return cross_entropy(x[0], {1, 0, 4}); }, {R({3, 5}, -2.0, 2.0)});

    using namespace policy;
    using gc_detail::starts;
    auto composite = [&](std::string name, GradFn f, std::vector<TensorD> in, std::size_t sample) {
        cases.push_back({std::move(name), true, std::move(f), std::move(in), sample});
    };
    {
        const auto pol = make_policy<double>(gc_detail::small_policy(HeadKind::mlp, BackboneKind::geo),
                                             gc_detail::small_geo(), mix_seed(seed, 1));
        std::vector<std::string> names;
        std::vector<TensorD> t;
        gc_detail::take(pol.params, [](const std::string& n) { return starts(n, "vis."); }, names, t);
        t.push_back(R({2, 6, 10}));
        t.push_back(R({2, 6, 10}));
        composite(
            "project_vision",
            [names](const auto& in) {
                return probe(project_vision(gc_detail::store(names, in), {in[in.size() - 2], in.back()}), 0x71);
            },
            t, 0);
    }
    {
        const auto pol = make_policy<double>(gc_detail::small_policy(HeadKind::mlp, BackboneKind::geo),
                                             gc_detail::small_geo(), mix_seed(seed, 2));
        std::vector<std::string> names;
        std::vector<TensorD> t;
        gc_detail::take(
            pol.params, [](const std::string& n) { return starts(n, "trunk.block") || starts(n, "trunk.ln_f"); }, names,
            t);
        t.push_back(R({2 * pol.config.tokens(), 8}));
        const auto cfg = pol.config;
        composite(
            "trunk",
            [names, cfg](const auto& in) {
                return probe(trunk_forward(gc_detail::store(names, in), cfg, in.back(), 2), 0x72);
            },
            t, 30);
    }
    {
        const auto pol = make_policy<double>(gc_detail::small_policy(HeadKind::mlp, BackboneKind::geo),
                                             gc_detail::small_geo(), mix_seed(seed, 3));
        std::vector<std::string> names;
        std::vector<TensorD> t;
        gc_detail::take(pol.params, [](const std::string& n) { return starts(n, "head.mlp"); }, names, t);
        t.push_back(R({3, 8}));
        composite(
            "mlp_head",
            [names](const auto& in) { return probe(mlp_head(gc_detail::store(names, in), in.back()), 0x73); }, t, 0);
    }
    {
        auto pol = make_policy<double>(gc_detail::small_policy(HeadKind::vqbet, BackboneKind::geo),
                                       gc_detail::small_geo(), mix_seed(seed, 4));
        std::vector<std::string> names;
        std::vector<TensorD> t;
        gc_detail::take(
            pol.params,
            [](const std::string& n) { return starts(n, "head.") || starts(n, "vq.dec") || n == "vq.codes"; }, names,
            t);
        t.push_back(R({3, 8}));
        const auto actions = R({3, 7});
        const auto cfg = pol.config;
        const auto geo = pol.geo;
        composite(
            "vqbet_head",
            [names, cfg, geo, actions](const auto& in) {
                Policy<double> p{cfg, geo, gc_detail::store(names, in), true};
                return vqbet_loss(p, in.back(), actions, {0, 5, 2});
            },
            t, 0);
    }
    for (const auto backbone : {BackboneKind::geo, BackboneKind::pixel}) {
        const auto pol = make_policy<double>(gc_detail::small_policy(HeadKind::mlp, backbone), gc_detail::small_geo(),
                                             mix_seed(seed, 5));
        std::vector<std::string> names;
        std::vector<TensorD> t;
        gc_detail::take(pol.params, [](const std::string&) { return true; }, names, t);
        const auto in = gc_detail::scene_input(pol.config, 2, mix_seed(seed, 6));
        const auto cfg = pol.config;
        const auto geo = pol.geo;
        const auto table = pol.params.get("lang.table");
        composite(
            backbone == BackboneKind::geo ? "end_to_end_geo" : "end_to_end_pixel",
            [names, cfg, geo, table, in](const auto& x) {
                Policy<double> p{cfg, geo, gc_detail::store(names, x), false};
                p.params.add("lang.table", table, true);
                return probe(policy_forward(p, in), 0x74);
            },
            t, 8);
    }
    return cases;
}

inline GradSuiteResult run_grad_suite(const std::vector<GradCase>& cases, double tol = 1e-4,
                                      const std::function<void(const GradCaseResult&)>& on_case = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    GradSuiteResult out;
    for (const auto& c : cases) {
        nn::GradCheckOptions opt;
        opt.max_elements_per_input = c.sample;
        opt.sample_seed = 0x5a;
        std::vector<TensorD> inputs;
        for (const auto& t : c.inputs) {
            inputs.push_back(t.clone());
        }
        const auto r = nn::grad_check(c.f, std::move(inputs), opt);
        out.cases.push_back({c.name, c.composite, r.max_rel_error, r.checked, r.max_rel_error <= tol});
        if (on_case) {
            on_case(out.cases.back());
        }
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

} // namespace geoaware::cli

#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "geoaware/bench/evaluate.hpp"
#include "geoaware/cli/gradcheck.hpp"
#include "geoaware/config.hpp"
#include "geoaware/deskworld/dataset.hpp"
#include "geoaware/training/checkpoint.hpp"
#include "geoaware/training/train.hpp"

namespace geoaware::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumeric = 2, kCheckpoint = 3, kSchema = 4 };

/// Maps a library error onto the documented exit codes.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) {
        return kNumeric;
    }
    if (dynamic_cast<const SchemaError*>(&e)) {
        return kSchema;
    }
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
        dynamic_cast<const InputError*>(&e)) {
        return kCheckpoint;
    }
    return kUsage;
}

/// Seed default before any config file: GEOAWARE_SEED if set, else 0.
inline std::uint64_t env_seed() {
    const char* s = std::getenv("GEOAWARE_SEED");
    if (s == nullptr || *s == '\0') {
        return 0;
    }
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    if (*end != '\0') {
        throw ConfigError(std::string("GEOAWARE_SEED is not an unsigned integer: ") + s);
    }
    return v;
}

/// Defaults, then the config file (if any), with GEOAWARE_SEED sitting between
/// the two. Flags are applied by the caller.
inline RunConfig base_config(const std::string& path) {
    RunConfig c;
    c.seed = env_seed();
    if (path.empty()) {
        return c;
    }
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    Json j;
    try {
        j = Json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return merge_json(c, j);
}

inline std::string pct(double rate) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(1) << rate << "%";
    return o.str();
}

// ---------------------------------------------------------------------------

struct GenDataOptions {
    std::string config;
    std::string out = "data.jsonl";
    std::optional<std::size_t> episodes_per_task;
    std::optional<std::uint64_t> seed;
};

inline int cmd_gen_data(const GenDataOptions& o, std::ostream& out, std::ostream& err) {
    auto cfg = base_config(o.config);
    if (o.episodes_per_task) {
        cfg.data.episodes_per_task = *o.episodes_per_task;
    }
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    cfg.validate();
    deskworld::Dataset ds;
    ds.seed = cfg.seed;
    ds.tasks = deskworld::make_tasks();
    ds.seen_cameras = deskworld::seen_cameras(cfg.sim);
    bool ok = true;
    for (const auto& task : ds.tasks) {
        std::size_t success = 0;
        for (std::size_t e = 0; e < cfg.data.episodes_per_task; ++e) {
            try {
                ds.episodes.push_back(
                    deskworld::expert_episode(task, deskworld::episode_seed(cfg.seed, task.id, e), cfg.sim));
                ++success;
            } catch (const GenerationError& ex) {
                err << ex.what() << "\n";
                ok = false;
            }
        }
        out << "task " << task.id << " (" << task.instruction << "): expert success " << success << "/"
            << cfg.data.episodes_per_task << "\n";
    }
    if (!ok) {
        err << "error: expert failed; no dataset written\n";
        return kUsage;
    }
    deskworld::save_dataset(ds, o.out);
    out << "episodes: " << ds.episodes.size() << " (" << ds.sample_count() << " steps) -> " << o.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string config;
    std::string data = "data.jsonl";
    std::string out = "model.ckpt";
    std::optional<std::string> head;
    std::optional<std::string> backbone;
    std::optional<std::size_t> steps;
    std::optional<std::uint64_t> seed;
};

inline RunConfig train_config(const TrainOptions& o) {
    auto cfg = base_config(o.config);
    if (o.head) {
        cfg.policy.head = policy::parse_head(*o.head);
    }
    if (o.backbone) {
        cfg.policy.backbone = policy::parse_backbone(*o.backbone);
    }
    if (o.steps) {
        cfg.train.steps = *o.steps;
    }
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    cfg.validate();
    return cfg;
}

inline void print_progress(std::ostream& out, const std::string& tag, training::Phase ph, std::size_t step,
                           double loss) {
    out << tag << (ph == training::Phase::codebook ? "codebook" : "policy") << " step " << step << " loss "
        << std::setprecision(6) << loss << "\n";
    out.flush();
}

inline int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
    const auto cfg = train_config(o);
    const auto ds = deskworld::load_dataset(o.data);
    try {
        auto res = training::bc_train(ds, cfg, [&](training::Phase ph, std::size_t s, double l) {
            print_progress(out, "", ph, s, l);
        });
        training::save_checkpoint(res.policy, cfg, cfg.train.steps, o.out);
        const double final_loss =
            res.losses.empty() ? 0.0 : training::trailing_mean(res.losses, res.losses.size(), 100);
        out << "final loss " << std::setprecision(6) << final_loss << " -> " << o.out << "\n";
    } catch (const training::TrainingDiverged& e) {
        err << "error: " << e.what() << "\n";
        return kNumeric;
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalCliOptions {
    std::string ckpt = "model.ckpt";
    std::string views = "seen";
    std::optional<std::size_t> rollouts;
    std::optional<std::uint64_t> seed;
    std::string report = "eval.json";
};

inline int cmd_eval(const EvalCliOptions& o, std::ostream& out, std::ostream&) {
    const auto category = deskworld::parse_view_category(o.views);
    const auto ck = training::load_checkpoint(o.ckpt);
    ck.config.validate();
    bench::EvalOptions eo;
    eo.category = category;
    eo.rollouts_per_task = o.rollouts.value_or(ck.config.eval.rollouts_per_task);
    eo.seeds = {o.seed.value_or(env_seed())};
    eo.max_steps = ck.config.eval.max_steps;
    const std::string model = (ck.config.policy.backbone == policy::BackboneKind::geo ? "geoaware-" : "pixel-") +
                              policy::to_string(ck.config.policy.head);
    const auto rep = bench::evaluate(ck.policy, model, deskworld::make_tasks(), eo, ck.config.sim);
    bench::write_text(o.report, to_json(rep).dump(2) + "\n");
    for (const auto& t : rep.tasks) {
        out << "task " << t.id << ": " << t.successes << "/" << t.rollouts << "\n";
    }
    out << model << " " << rep.category << ": " << pct(rep.average_rate()) << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct AblateOptions {
    std::string config;
    std::string data = "data.jsonl";
    std::string modes = "all,even4,last4";
    std::string out_dir = "ablation";
};

inline std::vector<backbones::LayerSelection> parse_modes(const std::string& s) {
    std::vector<backbones::LayerSelection> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(backbones::parse_layer_selection(item));
        }
    }
    if (out.empty()) {
        throw ConfigError("ablate: no modes given");
    }
    return out;
}

inline int cmd_ablate(const AblateOptions& o, std::ostream& out, std::ostream&) {
    const auto cfg = base_config(o.config);
    cfg.validate();
    const auto modes = parse_modes(o.modes);
    const auto ds = deskworld::load_dataset(o.data);
    bench::EvalOptions eo;
    eo.rollouts_per_task = cfg.eval.rollouts_per_task;
    eo.max_steps = cfg.eval.max_steps;
    eo.seeds = {cfg.seed};
    const auto run = bench::ablate_layers(ds, cfg, modes, eo,
                                          [&](const std::string& mode, training::Phase ph, std::size_t s, double l) {
                                              print_progress(out, mode + " ", ph, s, l);
                                          });
    std::filesystem::create_directories(o.out_dir);
    const std::filesystem::path dir(o.out_dir);
    for (std::size_t i = 0; i < run.policies.size(); ++i) {
        const auto name = backbones::to_string(run.configs[i].policy.selection);
        training::save_checkpoint(run.policies[i], run.configs[i], run.configs[i].train.steps,
                                  (dir / (name + ".ckpt")).string());
    }
    bench::write_text((dir / "ablation.json").string(), to_json(run.report).dump(2) + "\n");
    const auto md = bench::to_markdown(run.report);
    bench::write_text((dir / "ablation.md").string(), md);
    out << md;
    return kOk;
}

// ---------------------------------------------------------------------------

inline int cmd_gradcheck(std::ostream& out, std::ostream& err, const std::vector<std::string>& faults = {},
                         double tol = 1e-4) {
    const auto cases = grad_cases(0x9c, faults);
    out << std::left << std::setw(24) << "component" << std::setw(12) << "kind" << std::setw(10) << "checked"
        << "max rel err\n";
    const auto res = run_grad_suite(cases, tol, [&](const GradCaseResult& r) {
        std::ostringstream e;
        e << std::scientific << std::setprecision(2) << r.max_rel_error;
        out << std::left << std::setw(24) << r.name << std::setw(12) << (r.composite ? "composite" : "primitive")
            << std::setw(10) << r.checked << e.str() << (r.pass ? "" : "  FAIL") << "\n";
        out.flush();
    });
    out << std::fixed << std::setprecision(1) << "elapsed " << res.seconds << " s\n";
    if (res.pass()) {
        out << "PASS: all " << res.cases.size() << " components within " << std::scientific << std::setprecision(0)
            << tol << "\n";
        return kOk;
    }
    std::string names;
    for (const auto& n : res.failing()) {
        names += (names.empty() ? "" : ", ") + n;
    }
    out << "FAIL: " << names << "\n";
    err << "error: gradient check failed for " << names << "\n";
    return kNumeric;
}

// ---------------------------------------------------------------------------

struct ReportOptions {
    std::string in;
    std::string format = "md";
    std::string out;
};

inline int cmd_report(const ReportOptions& o, std::ostream& out, std::ostream&) {
    const auto fmt = bench::parse_report_format(o.format);
    std::ifstream f(o.in, std::ios::binary);
    if (!f) {
        throw Error("cannot open report " + o.in);
    }
    std::stringstream ss;
    ss << f.rdbuf();
    const auto text = bench::render_report_json(bench::parse_report_json(ss.str()), fmt);
    if (o.out.empty()) {
        out << text;
    } else {
        bench::write_text(o.out, text);
    }
    return kOk;
}

} // namespace geoaware::cli

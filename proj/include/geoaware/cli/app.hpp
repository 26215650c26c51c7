#pragma once

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "geoaware/cli/commands.hpp"

namespace geoaware::cli {

namespace app_detail {

template <typename T>
CLI::Option* optional_flag(CLI::App& app, const std::string& name, std::optional<T>& target, const std::string& help,
                           const std::string& shown_default) {
    auto* opt = app.add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
    opt->default_str(shown_default);
    return opt;
}

} // namespace app_detail

/// Parses argv and dispatches to a subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using app_detail::optional_flag;
    const RunConfig defaults;
    std::string env;
    try {
        env = std::to_string(env_seed());
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    CLI::App app{"geoaware: synthetic desk-manipulation benchmark for viewpoint-robust imitation policies"};
    app.require_subcommand(1);
    app.get_formatter()->column_width(40);

    GenDataOptions gd;
    auto* gen = app.add_subcommand("gen-data", "Generate scripted-expert demonstrations (JSON lines)");
    gen->add_option("--config", gd.config, "Run config JSON")->default_str("none");
    gen->add_option("--out", gd.out, "Output dataset path")->capture_default_str();
    optional_flag(*gen, "--episodes-per-task", gd.episodes_per_task, "Demonstrations per task",
                  std::to_string(defaults.data.episodes_per_task));
    optional_flag(*gen, "--seed", gd.seed, "Seed; unset falls back to the config file, then GEOAWARE_SEED", env);

    TrainOptions tr;
    auto* train = app.add_subcommand("train", "Behavior-clone a policy and write a checkpoint");
    train->add_option("--config", tr.config, "Run config JSON")->default_str("none");
    train->add_option("--data", tr.data, "Dataset path")->capture_default_str();
    train->add_option("--out", tr.out, "Checkpoint path")->capture_default_str();
    optional_flag(*train, "--head", tr.head, "Action head", policy::to_string(defaults.policy.head))
        ->check(CLI::IsMember({"mlp", "vqbet"}));
    optional_flag(*train, "--backbone", tr.backbone, "Vision backbone", policy::to_string(defaults.policy.backbone))
        ->check(CLI::IsMember({"geo", "pixel"}));
    optional_flag(*train, "--steps", tr.steps, "Main-phase optimizer steps", std::to_string(defaults.train.steps));
    optional_flag(*train, "--seed", tr.seed, "Seed; unset falls back to the config file, then GEOAWARE_SEED", env);

    EvalCliOptions ev;
    auto* eval = app.add_subcommand("eval", "Roll out a checkpoint and write an evaluation report");
    eval->add_option("--ckpt", ev.ckpt, "Checkpoint path")->capture_default_str();
    eval->add_option("--views", ev.views, "Viewpoint category")
        ->capture_default_str()
        ->check(CLI::IsMember({"seen", "novel-small", "novel-medium", "novel-large"}));
    optional_flag(*eval, "--rollouts", ev.rollouts, "Rollouts per task",
                  std::to_string(defaults.eval.rollouts_per_task) + " (checkpoint config)");
    optional_flag(*eval, "--seed", ev.seed, "Evaluation seed; unset falls back to GEOAWARE_SEED", env);
    eval->add_option("--report", ev.report, "Report JSON path")->capture_default_str();

    AblateOptions ab;
    auto* ablate = app.add_subcommand("ablate", "Train and evaluate one geo policy per layer selection");
    ablate->add_option("--config", ab.config, "Run config JSON")->default_str("none");
    ablate->add_option("--data", ab.data, "Dataset path")->capture_default_str();
    ablate->add_option("--modes", ab.modes, "Comma-separated layer selections")->capture_default_str();
    ablate->add_option("--out-dir", ab.out_dir, "Directory for checkpoints and reports")->capture_default_str();

    auto* grad = app.add_subcommand("gradcheck", "Check every backward pass against central differences");

    ReportOptions rp;
    auto* report = app.add_subcommand("report", "Render a report JSON as markdown or CSV");
    report->add_option("--in", rp.in, "Report JSON path")->required();
    report->add_option("--format", rp.format, "Output format")
        ->capture_default_str()
        ->check(CLI::IsMember({"md", "csv"}));
    report->add_option("--out", rp.out, "Output path")->default_str("stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) {
            return cmd_gen_data(gd, out, err);
        }
        if (*train) {
            return cmd_train(tr, out, err);
        }
        if (*eval) {
            return cmd_eval(ev, out, err);
        }
        if (*ablate) {
            return cmd_ablate(ab, out, err);
        }
        if (*grad) {
            return cmd_gradcheck(out, err);
        }
        if (*report) {
            return cmd_report(rp, out, err);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kUsage;
}

} // namespace geoaware::cli

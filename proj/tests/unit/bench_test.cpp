#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "geoaware/bench/evaluate.hpp"

using namespace geoaware;
using namespace geoaware::bench;
using deskworld::ViewCategory;

namespace {

const std::vector<TaskSpec>& tasks() {
    static const auto t = deskworld::make_tasks();
    return t;
}

policy::PolicyConfig tiny_policy() {
    policy::PolicyConfig c;
    c.repr = 16;
    c.conv = 8;
    c.hidden = 16;
    c.lang_emb = 8;
    c.trunk_heads = 2;
    c.trunk_layers = 1;
    return c;
}

EvalReport sample_report() {
    EvalReport r;
    r.model = "geoaware-mlp";
    r.category = "novel-medium";
    r.tasks = {{0, 7, 10}, {1, 10, 10}, {2, 0, 10}, {3, 3, 10}};
    r.seeds = {0, 1, 2};
    r.mean_episode_length = 41.25;
    return r;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(Rollout, ExpertSucceedsInEveryCategory) {
    const deskworld::SimConfig sim;
    for (const auto c : {ViewCategory::seen, ViewCategory::novel_small, ViewCategory::novel_medium,
                         ViewCategory::novel_large}) {
        EvalOptions opt;
        opt.category = c;
        opt.rollouts_per_task = 5;
        opt.seeds = {0, 1};
        const auto rep = evaluate(expert_policy(sim), "expert", tasks(), opt, sim);
        EXPECT_EQ(rep.rollouts(), 40u);
        EXPECT_DOUBLE_EQ(rep.average_rate(), 100.0) << deskworld::to_string(c);
    }
}

TEST(Rollout, RandomParameterPolicyRarelySucceeds) {
    const auto pol = policy::make_policy<float>(tiny_policy(), {}, 99);
    EvalOptions opt;
    opt.rollouts_per_task = 10;
    const auto rep = evaluate(pol, "random", tasks(), opt);
    EXPECT_EQ(rep.rollouts(), 40u);
    EXPECT_LE(rep.average_rate(), 5.0);
}

TEST(Rollout, SameSeedSameTrajectory) {
    const auto pol = policy::make_policy<float>(tiny_policy(), {}, 3);
    const backbones::GeoBackbone geo(pol.geo);
    const auto bp = learned_policy(pol, geo);
    const auto cams = rollout_cameras(ViewCategory::novel_small, 12, {});
    const auto a = rollout(bp, tasks()[1], cams, 12, {}, 30);
    const auto b = rollout(bp, tasks()[1], cams, 12, {}, 30);
    ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
    for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
        EXPECT_EQ(a.trajectory[i], b.trajectory[i]) << i;
    }
    EXPECT_EQ(a.steps + 1, a.trajectory.size());
}

TEST(Rollout, NonFiniteOutputFailsWithDiagnostic) {
    const BatchPolicy bad = [](const std::vector<PolicyQuery>& qs, std::vector<std::string>& diag) {
        diag.assign(qs.size(), "");
        std::vector<std::optional<Action>> out;
        for (std::size_t i = 0; i < qs.size(); ++i) {
            const std::array<float, 7> nan_chunk{0, 0, 0, 0, 0, 0, std::nanf("")};
            out.push_back(decode_action(nan_chunk));
        }
        return out;
    };
    const auto r = rollout(bad, tasks()[0], deskworld::seen_cameras(), 4);
    EXPECT_FALSE(r.success);
    EXPECT_EQ(r.steps, 0u);
    EXPECT_NE(r.diagnostic.find("step 0"), std::string::npos);
}

TEST(Rollout, DecodeThresholdsGripperAtZero) {
    std::array<float, 7> c{20, -20, 2, 0, 0, 0, 0};
    auto a = decode_action(c);
    ASSERT_TRUE(a);
    EXPECT_DOUBLE_EQ(a->flatten()[0], 1.0);
    EXPECT_DOUBLE_EQ(a->flatten()[1], -1.0);
    EXPECT_DOUBLE_EQ(a->flatten()[2], 0.1);
    EXPECT_EQ(a->flatten()[6], 1.0);
    c[6] = -1e-6f;
    EXPECT_EQ(decode_action(c)->flatten()[6], -1.0);
}

TEST(Evaluate, SeenUsesTrainingCamerasNovelNeverDoes) {
    const deskworld::SimConfig sim;
    const auto seen = deskworld::seen_cameras(sim);
    EXPECT_EQ(rollout_cameras(ViewCategory::seen, 5, sim), seen);
    for (const auto c : {ViewCategory::novel_small, ViewCategory::novel_medium, ViewCategory::novel_large}) {
        const auto [lo, hi] = deskworld::category_band(c);
        for (std::uint64_t s = 0; s < 20; ++s) {
            const auto cams = rollout_cameras(c, rollout_seed(0, 1, s), sim);
            ASSERT_EQ(cams.size(), 2u);
            for (const auto& cam : cams) {
                EXPECT_NE(cam, seen[0]);
                EXPECT_NE(cam, seen[1]);
                const double off = deskworld::offset_from_seen_deg(cam, sim);
                EXPECT_GE(off, lo - 1e-9);
                EXPECT_LE(off, hi + 1e-9);
            }
        }
    }
    EXPECT_NE(rollout_cameras(ViewCategory::novel_medium, 1, sim), rollout_cameras(ViewCategory::novel_medium, 2, sim));
}

TEST(Evaluate, CountsAndDeterminism) {
    const auto pol = policy::make_policy<float>(tiny_policy(), {}, 4);
    EvalOptions opt;
    opt.category = ViewCategory::novel_medium;
    opt.rollouts_per_task = 2;
    opt.seeds = {0, 1};
    opt.max_steps = 10;
    const auto a = evaluate(pol, "m", tasks(), opt);
    const auto b = evaluate(pol, "m", tasks(), opt);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    ASSERT_EQ(a.tasks.size(), 4u);
    for (const auto& t : a.tasks) {
        EXPECT_EQ(t.rollouts, 4u);
        EXPECT_LE(t.successes, t.rollouts);
    }
    EXPECT_EQ(a.category, "novel-medium");
    EXPECT_GT(a.mean_episode_length, 0.0);
    opt.rollouts_per_task = 0;
    EXPECT_THROW(evaluate(pol, "m", tasks(), opt), ConfigError);
}

TEST(Compare, IdenticalCheckpointsGiveUnitRatio) {
    training::Checkpoint ck;
    ck.config.policy = tiny_policy();
    ck.policy = policy::make_policy<float>(ck.config.policy, ck.config.geo, 8);
    EvalOptions opt;
    opt.rollouts_per_task = 1;
    opt.max_steps = 8;
    const auto rep = compare(ck, ck, {ViewCategory::seen, ViewCategory::novel_small}, tasks(), opt);
    ASSERT_EQ(rep.rows.size(), 2u);
    for (const auto& r : rep.rows) {
        EXPECT_DOUBLE_EQ(r.ratio(), 1.0);
        EXPECT_DOUBLE_EQ(r.geo_rate, r.pixel_rate);
    }
    const auto md = to_markdown(rep);
    EXPECT_NE(md.find("Ratio"), std::string::npos) << md;
    auto other = ck;
    other.config.sim.episode_cap = 17;
    EXPECT_THROW(compare(ck, other, {ViewCategory::seen}, tasks(), opt), ConfigError);
    EXPECT_DOUBLE_EQ((ComparisonRow{"x", 40.0, 20.0}).ratio(), 2.0);
}

TEST(Ablate, RejectsPixelBackboneAndEmptyModes) {
    RunConfig cfg;
    cfg.policy.backbone = policy::BackboneKind::pixel;
    const deskworld::Dataset ds;
    EXPECT_THROW(ablate_layers(ds, cfg, {{backbones::SelectMode::all, 0}}, {}), ConfigError);
    cfg.policy.backbone = policy::BackboneKind::geo;
    EXPECT_THROW(ablate_layers(ds, cfg, {}, {}), ConfigError);
}

TEST(Report, RatesAndInvariants) {
    const auto r = sample_report();
    EXPECT_DOUBLE_EQ(r.tasks[0].rate(), 70.0);
    EXPECT_DOUBLE_EQ(r.average_rate(), 50.0);
    EXPECT_EQ(r.rollouts(), 40u);
}

TEST(Report, JsonRoundTripIsByteStable) {
    const auto r = sample_report();
    const auto text = to_json(r).dump(2);
    const auto back = eval_report_from_json(parse_report_json(text));
    EXPECT_EQ(back, r);
    EXPECT_EQ(to_json(back).dump(2), text);
    EXPECT_EQ(parse_report_json(text)["schema_version"], kReportSchemaVersion);
}

TEST(Report, MarkdownRowPerTaskPlusAverage) {
    const auto md = to_markdown(sample_report());
    std::istringstream lines(md);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        if (line.rfind("| ", 0) == 0) {
            ++rows;
        }
    }
    EXPECT_EQ(rows, 1u + 4u + 1u) << md; // header, tasks, average
    EXPECT_NE(md.find("70.0"), std::string::npos);
    EXPECT_NE(md.find("| Average"), std::string::npos);
    EXPECT_NE(md.find("50.0"), std::string::npos);
    EXPECT_EQ(fmt1(82.64), "82.6");
    EXPECT_EQ(fmt1(100.0), "100.0");
}

TEST(Report, CsvHeaderFixedAndRoundTrips) {
    const auto r = sample_report();
    const auto csv = to_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kEvalCsvHeader);
    const auto back = eval_report_from_csv(csv);
    EXPECT_EQ(back.tasks, r.tasks);
    EXPECT_EQ(back.model, r.model);
    EXPECT_EQ(back.category, r.category);
}

TEST(Report, SchemaErrors) {
    auto j = to_json(sample_report());
    j["schema_version"] = 2;
    EXPECT_THROW(eval_report_from_json(j), SchemaError);
    j.erase("schema_version");
    EXPECT_THROW(eval_report_from_json(j), SchemaError);
    EXPECT_THROW(parse_report_json("[1,"), SchemaError);
    j = to_json(sample_report());
    j["tasks"][0]["successes"] = 11;
    EXPECT_THROW(eval_report_from_json(j), SchemaError);
    EXPECT_THROW(parse_report_format("pdf"), ConfigError);
}

TEST(Report, AblationHasThreeLabelledRows) {
    AblationReport a;
    for (const auto* m : {"all", "even4", "last4"}) {
        AblationRow row;
        row.mode = m;
        row.is_default = std::string(m) == "even4";
        row.seen = sample_report();
        row.novel = sample_report();
        a.rows.push_back(row);
    }
    const auto md = to_markdown(a);
    EXPECT_NE(md.find("| All "), std::string::npos);
    EXPECT_NE(md.find("| Evenly-Spaced(default) "), std::string::npos);
    EXPECT_NE(md.find("| Last "), std::string::npos);
    const auto back = ablation_report_from_json(to_json(a));
    EXPECT_EQ(to_json(back).dump(), to_json(a).dump());
    auto j = to_json(a);
    j["rows"].erase(0);
    EXPECT_THROW(ablation_report_from_json(j), SchemaError);
}

TEST(Report, WriteTextFailsOnUnwritablePath) {
    const auto dir = std::filesystem::temp_directory_path() / "geoaware_bench_write";
    std::filesystem::create_directories(dir);
    write_text((dir / "r.md").string(), "hello\n");
    EXPECT_EQ(slurp(dir / "r.md"), "hello\n");
    EXPECT_THROW(write_text((dir / "no/such/dir/r.md").string(), "x"), Error);
}

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mint/experiment.hpp"

using namespace mint;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("mint_experiment_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t entries(const fs::path& dir) {
    if (!fs::exists(dir)) return 0;
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

// Two classes, 20 images each, one audited epoch and two MINT epochs.
nlohmann::json tiny(const fs::path& out) {
    return {{"corpus", {{"name", "synthetic"}, {"num_classes", 2}, {"per_class", 20}, {"seed", 1}}},
            {"split", {{"fraction", 0.5}, {"seed", 2}}},
            {"audited", {{"epochs", 1}, {"batch_size", 8}}},
            {"mint", {{"layer", 7}, {"epochs", 2}, {"batch_size", 8}}},
            {"output_dir", out.string()}};
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
    const auto c = ExperimentConfig::from_json(nlohmann::json::object());
    EXPECT_EQ(c.mint.layers, std::vector<int>{7});
    EXPECT_EQ(c.mint.options.epochs, 50);
    EXPECT_EQ(c.mint.options.batch_size, 32);
    EXPECT_EQ(c.baselines.size(), 3u);
    const auto d = ExperimentConfig::from_json(
        {{"mint", {{"layers", {1, "penultimate"}}}}, {"sweep", {{"axis", "epochs"}, {"values", {5, 50}}}}});
    EXPECT_EQ(d.mint.layers, (std::vector<int>{1, kPenultimateLayer}));
    EXPECT_EQ(d.sweep.axis, SweepAxis::epochs);
    EXPECT_EQ(d.sweep.values, (std::vector<int>{5, 50}));
    const auto back = ExperimentConfig::from_json(d.to_json());
    EXPECT_EQ(back.hash(), d.hash());
}

TEST(Config, InvalidValuesAreConfigurationErrors) {
    const std::vector<nlohmann::json> bad{
        {{"mint", {{"layer", 9}}}},
        {{"mint", {{"layer", "last"}}}},
        {{"split", {{"fraction", 1.0}}}},
        {{"audited", {{"epochs", 0}}}},
        {{"audited", {{"architecture", "vgg16"}}}},
        {{"mint", {{"eval_fraction", 0.0}}}},
        {{"sweep", {{"axis", "epochs"}, {"values", nlohmann::json::array()}}}},
        {{"sweep", {{"axis", "seeds"}}}},
        {{"baselines", {"shokri"}}},
        {{"corpus", {{"name", "mnist"}}}},
        {{"corpus", {{"per_class", "many"}}}},
        {{"extra", 1}},
        {{"mint", {{"dropout", 0.3}}}},
    };
    for (const auto& j : bad) EXPECT_THROW(ExperimentConfig::from_json(j), ConfigurationError) << j.dump();
}

TEST(Config, RealCorpusNeedsADataRoot) {
    const nlohmann::json j{{"corpus", {{"name", "cifar10"}}}};
    const char* saved = std::getenv(kDataRootEnv);
    const std::string keep = saved ? saved : "";
    ::unsetenv(kDataRootEnv);
    EXPECT_THROW(ExperimentConfig::from_json(j), ConfigurationError);
    ::setenv(kDataRootEnv, "/data/somewhere", 1);
    EXPECT_EQ(ExperimentConfig::from_json(j).data_root(), fs::path("/data/somewhere"));
    if (saved) {
        ::setenv(kDataRootEnv, keep.c_str(), 1);
    } else {
        ::unsetenv(kDataRootEnv);
    }
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigurationError);
}

TEST(Config, HashIgnoresOutputLocation) {
    auto a = ExperimentConfig::from_json(tiny("/tmp/a"));
    auto b = ExperimentConfig::from_json(tiny("/tmp/b"));
    EXPECT_EQ(a.hash(), b.hash());
    b.mint.options.seed = 3;
    EXPECT_NE(a.hash(), b.hash());
}

TEST(Pipeline, AuditIsReproducibleAndCached) {
    const auto out = scratch("audit");
    const auto config = ExperimentConfig::from_json(tiny(out));
    const auto first = run_audit(config);
    const std::string report = slurp(out / "audit" / "report.json");
    for (const char* f : {"report.json", "roc.csv", "roc_class_0.csv", "roc_class_1.csv", "scores.csv"}) {
        EXPECT_TRUE(fs::exists(out / "audit" / f)) << f;
    }
    EXPECT_EQ(first.report.layer_index, 7);
    EXPECT_EQ(first.report.config_hash, config.hash());
    EXPECT_EQ(first.report.per_class.size(), 2u);
    EXPECT_EQ(first.document.at("split_ref").get<std::string>().empty(), false);

    // Second run reuses every cached stage.
    std::vector<std::string> messages;
    run_audit(config, [&](const std::string& m) { messages.push_back(m); });
    EXPECT_EQ(slurp(out / "audit" / "report.json"), report);
    for (const auto& m : messages) {
        EXPECT_EQ(m.find(" loss "), std::string::npos) << m;
        EXPECT_EQ(m.find("training MINT"), std::string::npos) << m;
    }
    EXPECT_EQ(entries(out / "cache" / "audited"), 1u);

    // A fresh directory with the same config gives the same bytes.
    const auto again = scratch("audit_again");
    auto moved = config;
    moved.output_dir = again;
    run_audit(moved);
    EXPECT_EQ(slurp(again / "audit" / "report.json"), report);

    // Changing one audited field trains a new checkpoint.
    auto reseeded = config;
    reseeded.audited.seed = 9;
    run_audit(reseeded);
    EXPECT_EQ(entries(out / "cache" / "audited"), 2u);
    EXPECT_EQ(entries(out / "cache" / "split"), 1u);
    fs::remove_all(out);
    fs::remove_all(again);
}

TEST(Pipeline, LayerSweepWritesSummary) {
    const auto out = scratch("sweep");
    auto j = tiny(out);
    j["sweep"] = {{"axis", "layers"}, {"values", {1, 7}}};
    const auto result = run_sweep(ExperimentConfig::from_json(j));
    ASSERT_EQ(result.points.size(), 2u);
    std::ifstream summary(out / "sweep_layers" / "summary.csv");
    std::string line;
    std::getline(summary, line);
    EXPECT_EQ(line, "axis_value,pooled_auc,mean_class_auc,balanced_acc,status");
    int rows = 0;
    while (std::getline(summary, line)) {
        ++rows;
        EXPECT_NE(line.find(",ok"), std::string::npos) << line;
    }
    EXPECT_EQ(rows, 2);
    EXPECT_TRUE(fs::exists(out / "sweep_layers" / "layer_1" / "roc.csv"));
    EXPECT_EQ(result.points[0].report->layer_index, 1);
    fs::remove_all(out);
}

TEST(Pipeline, FailedSweepPointsAreRecorded) {
    // Three images per class at fraction 0.7 leave one external per class,
    // too few for a MINT train/eval split.
    const auto out = scratch("failed");
    auto j = tiny(out);
    j["corpus"]["per_class"] = 3;
    j["split"]["fraction"] = 0.7;
    j["sweep"] = {{"axis", "layers"}, {"values", {6, 7}}};
    const auto result = run_sweep(ExperimentConfig::from_json(j));
    ASSERT_EQ(result.points.size(), 2u);
    for (const auto& p : result.points) {
        EXPECT_FALSE(p.report.has_value());
        EXPECT_FALSE(p.error.empty());
    }
    const std::string summary = slurp(out / "sweep_layers" / "summary.csv");
    EXPECT_NE(summary.find("6,nan,nan,nan,failed: "), std::string::npos) << summary;
    EXPECT_THROW(run_audit(ExperimentConfig::from_json(j)), StageError);
    fs::remove_all(out);
}

TEST(Pipeline, EpochSweepSharesOneTrainingRun) {
    const auto out = scratch("epochs");
    auto j = tiny(out);
    j["sweep"] = {{"axis", "epochs"}, {"values", {1, 2}}};
    std::size_t trainings = 0;
    const auto result = run_sweep(ExperimentConfig::from_json(j), [&](const std::string& m) {
        if (m.rfind("paper_cnn epoch 1/", 0) == 0) ++trainings;
    });
    ASSERT_EQ(result.points.size(), 2u);
    EXPECT_TRUE(result.points[0].report && result.points[1].report);
    EXPECT_NE(result.points[0].report->checkpoint_id, result.points[1].report->checkpoint_id);
    EXPECT_EQ(trainings, 1u);
    EXPECT_EQ(entries(out / "cache" / "audited"), 2u);
    fs::remove_all(out);
}

TEST(Pipeline, BaselineComparisonUsesTheMintEvalSamples) {
    const auto out = scratch("baselines");
    const auto config = ExperimentConfig::from_json(tiny(out));
    const auto table = run_baseline_comparison(config);
    ASSERT_EQ(table.rows.size(), 4u);
    EXPECT_EQ(table.rows.back().method, "mint");
    EXPECT_EQ(table.n_members, table.n_externals);
    EXPECT_GT(table.n_members, 0u);
    for (const auto& r : table.rows) {
        EXPECT_GE(r.auc, 0.0);
        EXPECT_LE(r.auc, 1.0);
        EXPECT_GE(r.balanced_accuracy, 0.5);
    }
    EXPECT_NO_THROW((void)table.row("yeom_loss"));
    EXPECT_THROW((void)table.row("shokri"), ArgumentError);
    const auto audit = run_audit(config);
    EXPECT_DOUBLE_EQ(table.row("mint").auc, audit.report.aggregate.auc);
    EXPECT_TRUE(fs::exists(out / "baselines" / "comparison.csv"));
    EXPECT_TRUE(fs::exists(out / "baselines" / "comparison.json"));
    fs::remove_all(out);
}

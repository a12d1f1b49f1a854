#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "mint/mint.hpp"

using namespace mint;

namespace {

std::vector<EmbeddingRecord> make_records(int cls, int members, int externals, int len, std::uint32_t first_id = 0,
                                          const std::function<float(bool, std::mt19937_64&)>& value = {}) {
    std::vector<EmbeddingRecord> out;
    std::mt19937_64 rng(first_id + 1);
    std::uint32_t id = first_id;
    for (int side = 0; side < 2; ++side) {
        const bool member = side == 0;
        for (int i = 0; i < (member ? members : externals); ++i) {
            std::vector<float> v(static_cast<std::size_t>(len));
            for (auto& x : v) x = value ? value(member, rng) : 0.0f;
            out.push_back({SampleId{id++}, 7, std::move(v), member, cls});
        }
    }
    return out;
}

std::pair<std::size_t, std::size_t> count_sides(const std::vector<EmbeddingRecord>& r, const std::vector<std::size_t>& idx) {
    std::size_t m = 0, e = 0;
    for (auto i : idx) (r[i].membership ? m : e)++;
    return {m, e};
}

EmbeddingSet as_set(std::vector<EmbeddingRecord> records) { return {{"ckpt", 7, "split"}, std::move(records)}; }

}  // namespace

TEST(MintSets, UndersamplesMembersToExternalCount) {
    const auto records = make_records(0, 3840, 2160, 1);
    const auto sets = build_balanced_mint_sets(records, 0, 1);
    const auto [tm, te] = count_sides(records, sets.train);
    const auto [em, ee] = count_sides(records, sets.eval);
    EXPECT_EQ(tm + em, 2160u);
    EXPECT_EQ(te + ee, 2160u);
    EXPECT_EQ(tm, te);
    EXPECT_EQ(em, ee);
    EXPECT_EQ(em, 432u);
}

TEST(MintSets, AlreadyBalancedClassIsKeptWhole) {
    const auto records = make_records(2, 10, 10, 1);
    const auto sets = build_balanced_mint_sets(records, 2, 1);
    EXPECT_EQ(sets.train.size() + sets.eval.size(), 20u);
    EXPECT_EQ(count_sides(records, sets.eval), (std::pair<std::size_t, std::size_t>{2, 2}));
}

TEST(MintSets, DisjointAndDeterministic) {
    auto records = make_records(1, 50, 37, 1);
    const auto other = make_records(0, 20, 20, 1, 1000);
    records.insert(records.end(), other.begin(), other.end());
    const auto a = build_balanced_mint_sets(records, 1, 5);
    const auto b = build_balanced_mint_sets(records, 1, 5);
    const auto c = build_balanced_mint_sets(records, 1, 6);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.eval, b.eval);
    EXPECT_NE(a.train, c.train);
    std::set<std::uint32_t> train;
    for (auto i : a.train) {
        EXPECT_EQ(records[i].class_label, 1);
        train.insert(records[i].sample_id.value);
    }
    for (auto i : a.eval) EXPECT_EQ(train.count(records[i].sample_id.value), 0u);
}

TEST(MintSets, MissingSideNamesTheClass) {
    const auto records = make_records(4, 10, 0, 1);
    try {
        build_balanced_mint_sets(records, 4, 0);
        FAIL() << "expected ProtocolError";
    } catch (const ProtocolError& e) {
        EXPECT_NE(std::string(e.what()).find("class 4"), std::string::npos);
    }
    EXPECT_THROW(build_balanced_mint_sets(make_records(4, 0, 6, 1), 4, 0), ProtocolError);
}

TEST(MintModelSpec, FixedArchitectureConstants) {
    MintModelSpec spec{128};
    EXPECT_NO_THROW(spec.validate());
    EXPECT_EQ(spec.pooled_len(), 64);
    MintModelSpec bad = spec;
    bad.conv2_filters = 32;
    EXPECT_THROW(bad.validate(), ArgumentError);
    EXPECT_THROW((MintModel(MintModelSpec{0}, 1)), ArgumentError);
    // Inputs shorter than the kernel still work.
    MintModel tiny(MintModelSpec{1}, 1);
    EXPECT_EQ(tiny.predict(Tensor({2, 1}, 0.5f)).size(), 2u);
}

TEST(TrainMint, RejectsForeignClassAndImbalance) {
    auto records = make_records(0, 6, 6, 4);
    auto foreign = make_records(1, 1, 0, 4, 100);
    records.push_back(foreign[0]);
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);
    EXPECT_THROW(train_mint(records, idx, 0, {}), ProtocolError);
    idx.pop_back();
    idx.pop_back();
    EXPECT_THROW(train_mint(records, idx, 0, {}), ProtocolError);
}

TEST(TrainMint, SeparableConstantsGivePerfectAuc) {
    auto records = make_records(0, 60, 60, 16, 0, [](bool m, std::mt19937_64&) { return m ? 1.0f : 0.0f; });
    MintTrainOptions o;
    o.epochs = 20;
    auto trained = train_ensemble(as_set(records), o);
    const auto samples = score_eval_sets(trained, records);
    std::vector<double> s;
    std::vector<int> l;
    for (const auto& x : samples) {
        s.push_back(x.score);
        l.push_back(x.member ? 1 : 0);
    }
    EXPECT_NEAR(roc_auc(s, l).auc, 1.0, 1e-6);
}

TEST(TrainMint, MemorizesItsTrainingSet) {
    auto records = make_records(0, 40, 40, 24, 0, [](bool m, std::mt19937_64& rng) {
        return std::normal_distribution<float>(m ? 0.4f : 0.0f, 1.0f)(rng);
    });
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);
    MintTrainOptions o;
    o.epochs = 60;
    auto trained = train_mint(records, idx, 0, o);
    EXPECT_EQ(trained.loss_history.size(), 60u);
    EXPECT_LT(trained.loss_history.back(), trained.loss_history.front());
    const auto p = predict_records(trained.model, records, idx);
    double member = 0.0, external = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) (records[i].membership ? member : external) += p[i];
    EXPECT_GT(member / 40.0, external / 40.0);
}

TEST(Score, RangeThresholdAndRouting) {
    auto records = make_records(0, 20, 20, 8, 0, [](bool, std::mt19937_64& rng) {
        return std::normal_distribution<float>(0.0f, 1.0f)(rng);
    });
    auto more = make_records(1, 20, 20, 8, 500, [](bool, std::mt19937_64& rng) {
        return std::normal_distribution<float>(0.0f, 1.0f)(rng);
    });
    records.insert(records.end(), more.begin(), more.end());
    MintTrainOptions o;
    o.epochs = 2;
    auto trained = train_ensemble(as_set(records), o);
    ASSERT_EQ(trained.ensemble.per_class_models.size(), 2u);
    const auto scores = score(trained.ensemble, records, 0.5);
    ASSERT_EQ(scores.size(), records.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        EXPECT_GE(scores[i].score, 0.0);
        EXPECT_LE(scores[i].score, 1.0);
        EXPECT_EQ(scores[i].predicted_member, scores[i].score >= 0.5);
        EXPECT_EQ(scores[i].sample_id, records[i].sample_id);
        EXPECT_EQ(scores[i].class_index, records[i].class_label);
    }
    std::vector<int> routing(records.size(), 1);
    const auto rerouted = score(trained.ensemble, records, 0.5, std::span<const int>(routing));
    for (const auto& s : rerouted) EXPECT_EQ(s.class_index, 1);
    routing[0] = 7;
    EXPECT_THROW(score(trained.ensemble, records, 0.5, std::span<const int>(routing)), EnsembleIncompleteError);
}

TEST(Score, LayerMismatchFailsBeforeAnyOutput) {
    auto records = make_records(0, 10, 10, 4);
    MintTrainOptions o;
    o.epochs = 1;
    auto trained = train_ensemble(as_set(records), o);
    records.back().layer_index = 8;
    EXPECT_THROW(score(trained.ensemble, records), IntegrityError);
    auto missing = make_records(3, 1, 0, 4, 99);
    EXPECT_THROW(score(trained.ensemble, missing), EnsembleIncompleteError);
}

TEST(Ensemble, SaveLoadReproducesScores) {
    auto records = make_records(0, 12, 12, 6, 0, [](bool m, std::mt19937_64& rng) {
        return std::normal_distribution<float>(m ? 1.0f : 0.0f, 1.0f)(rng);
    });
    MintTrainOptions o;
    o.epochs = 3;
    o.seed = 4;
    auto trained = train_ensemble(as_set(records), o);
    const auto dir = std::filesystem::temp_directory_path() / "mint_ensemble_test";
    std::filesystem::remove_all(dir);
    save_ensemble(trained.ensemble, dir);
    auto loaded = load_ensemble(dir);
    EXPECT_EQ(loaded.layer_index, 7);
    EXPECT_EQ(loaded.checkpoint_id, "ckpt");
    const auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    for (const char* key : {"layer_index", "checkpoint_id", "classes", "seeds", "mint_hyperparams"}) {
        EXPECT_TRUE(manifest.contains(key)) << key;
    }
    const auto a = score(trained.ensemble, records);
    const auto b = score(loaded, records);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].score, b[i].score);
    std::filesystem::remove_all(dir);
}

TEST(Ensemble, TrainingIsDeterministic) {
    auto records = make_records(0, 16, 16, 5, 0, [](bool, std::mt19937_64& rng) {
        return std::normal_distribution<float>(0.0f, 1.0f)(rng);
    });
    MintTrainOptions o;
    o.epochs = 3;
    auto a = train_ensemble(as_set(records), o);
    auto b = train_ensemble(as_set(records), o);
    EXPECT_EQ(a.ensemble.per_class_models.at(0).export_state(), b.ensemble.per_class_models.at(0).export_state());
}

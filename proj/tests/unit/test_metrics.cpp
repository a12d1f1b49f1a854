#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mint/metrics.hpp"

using namespace mint;

namespace {

struct Instance {
    std::vector<double> scores;
    std::vector<int> labels;
};

// Random instance with both labels present; a coarse score grid forces ties.
Instance random_instance(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> size(2, 500);
    std::uniform_int_distribution<int> grid(2, 50);
    const int n = size(rng);
    const int levels = grid(rng);
    std::uniform_int_distribution<int> level(0, levels);
    std::bernoulli_distribution coin(0.5);
    Instance inst;
    for (int i = 0; i < n; ++i) {
        inst.scores.push_back(static_cast<double>(level(rng)) / levels);
        inst.labels.push_back(coin(rng) ? 1 : 0);
    }
    inst.labels[0] = 1;
    inst.labels[1] = 0;
    return inst;
}

}  // namespace

TEST(RocAuc, PerfectSeparation) {
    const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
    const std::vector<int> l{1, 1, 0, 0};
    EXPECT_DOUBLE_EQ(roc_auc(s, l).auc, 1.0);
    EXPECT_DOUBLE_EQ(auc_bruteforce_oracle(s, l), 1.0);
}

TEST(RocAuc, InterleavedScoresGiveHalf) {
    const std::vector<double> s{0.9, 0.3, 0.8, 0.2};
    const std::vector<int> l{1, 0, 0, 1};
    EXPECT_DOUBLE_EQ(auc_bruteforce_oracle(s, l), 0.5);
    EXPECT_DOUBLE_EQ(roc_auc(s, l).auc, 0.5);
}

TEST(RocAuc, AllTiedIsHalf) {
    const std::vector<double> s(6, 0.4);
    const std::vector<int> l{1, 0, 1, 0, 0, 1};
    EXPECT_DOUBLE_EQ(roc_auc(s, l).auc, 0.5);
    EXPECT_DOUBLE_EQ(auc_bruteforce_oracle(s, l), 0.5);
}

TEST(RocAuc, ReversedSeparationIsZero) {
    const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
    const std::vector<int> l{1, 1, 0, 0};
    EXPECT_DOUBLE_EQ(auc_bruteforce_oracle(s, l), 0.0);
    EXPECT_DOUBLE_EQ(roc_auc(s, l).auc, 0.0);
}

TEST(RocAuc, SingleClassIsUndefined) {
    const std::vector<double> s{0.1, 0.2};
    const std::vector<int> l{1, 1};
    EXPECT_THROW(roc_auc(s, l), UndefinedMetricError);
    EXPECT_THROW(auc_bruteforce_oracle(s, l), UndefinedMetricError);
    EXPECT_THROW(balanced_accuracy(s, l, 0.5), UndefinedMetricError);
}

TEST(RocAuc, RejectsNonFiniteScores) {
    const std::vector<double> s{0.1, std::nan("")};
    const std::vector<int> l{1, 0};
    EXPECT_THROW(roc_auc(s, l), ArgumentError);
}

TEST(RocAuc, CurveShape) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 50; ++t) {
        const auto inst = random_instance(rng);
        const auto roc = roc_auc(inst.scores, inst.labels);
        EXPECT_EQ(roc.tpr.front(), 0.0);
        EXPECT_EQ(roc.fpr.front(), 0.0);
        EXPECT_EQ(roc.tpr.back(), 1.0);
        EXPECT_EQ(roc.fpr.back(), 1.0);
        for (std::size_t i = 1; i < roc.tpr.size(); ++i) {
            EXPECT_GE(roc.tpr[i], roc.tpr[i - 1]);
            EXPECT_GE(roc.fpr[i], roc.fpr[i - 1]);
            EXPECT_LT(roc.thresholds[i], roc.thresholds[i - 1]);
        }
    }
}

TEST(RocAucProperty, TrapezoidMatchesPairwiseOracle) {
    std::mt19937_64 rng(20240601);
    for (int t = 0; t < 1200; ++t) {
        const auto inst = random_instance(rng);
        ASSERT_NEAR(roc_auc(inst.scores, inst.labels).auc, auc_bruteforce_oracle(inst.scores, inst.labels), 1e-9)
            << "trial " << t;
    }
}

TEST(RocAucProperty, InvariantUnderMonotoneMaps) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 200; ++t) {
        const auto inst = random_instance(rng);
        const double base = roc_auc(inst.scores, inst.labels).auc;
        std::vector<double> ex, affine;
        for (double s : inst.scores) {
            ex.push_back(std::exp(3.0 * s));
            affine.push_back(2.5 * s - 7.0);
        }
        EXPECT_NEAR(roc_auc(ex, inst.labels).auc, base, 1e-12);
        EXPECT_NEAR(roc_auc(affine, inst.labels).auc, base, 1e-12);
    }
}

TEST(RocAucProperty, RelabelSymmetry) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 200; ++t) {
        const auto inst = random_instance(rng);
        std::vector<double> neg;
        std::vector<int> flipped;
        for (std::size_t i = 0; i < inst.scores.size(); ++i) {
            neg.push_back(-inst.scores[i]);
            flipped.push_back(1 - inst.labels[i]);
        }
        EXPECT_NEAR(roc_auc(neg, flipped).auc, roc_auc(inst.scores, inst.labels).auc, 1e-12);
    }
}

TEST(BalancedAccuracy, PerfectScores) {
    const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
    const std::vector<int> l{1, 1, 0, 0};
    EXPECT_DOUBLE_EQ(balanced_accuracy(s, l, 0.5), 1.0);
    EXPECT_DOUBLE_EQ(accuracy(s, l, 0.5), 1.0);
}

TEST(BalancedAccuracy, CoinFlipIsHalf) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> s;
    std::vector<int> l;
    for (int i = 0; i < 10000; ++i) {
        s.push_back(u(rng));
        l.push_back(coin(rng) ? 1 : 0);
    }
    EXPECT_NEAR(balanced_accuracy(s, l, 0.5), 0.5, 0.02);
}

TEST(BalancedAccuracy, ImbalancedClassesWeighEqually) {
    const std::vector<double> s{0.9, 0.1, 0.1, 0.1, 0.1};
    const std::vector<int> l{1, 0, 0, 0, 1};
    // TPR 1/2, TNR 1.
    EXPECT_DOUBLE_EQ(balanced_accuracy(s, l, 0.5), 0.75);
}

TEST(BalancedAccuracyProperty, BestThresholdIsAtLeastHalf) {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 300; ++t) {
        const auto inst = random_instance(rng);
        const auto best = best_balanced_accuracy(inst.scores, inst.labels);
        EXPECT_GE(best.value, 0.5);
        EXPECT_GE(best.value + 1e-12, balanced_accuracy(inst.scores, inst.labels, 0.5));
        if (std::isfinite(best.threshold)) {
            EXPECT_NEAR(balanced_accuracy(inst.scores, inst.labels, best.threshold), best.value, 1e-12);
        }
    }
}

TEST(AuditReport, AggregateCountsSumPerClass) {
    std::vector<ScoredSample> samples;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < 10 + c; ++i) samples.push_back({c, u(rng), i % 2 == 0});
    }
    const auto report = build_report(samples);
    std::size_t members = 0, externals = 0;
    double auc_sum = 0.0;
    for (const auto& [c, m] : report.per_class) {
        members += m.n_members;
        externals += m.n_externals;
        auc_sum += m.auc;
    }
    EXPECT_EQ(report.per_class.size(), 4u);
    EXPECT_EQ(report.aggregate.n_members, members);
    EXPECT_EQ(report.aggregate.n_externals, externals);
    EXPECT_NEAR(report.mean_class_auc, auc_sum / 4.0, 1e-12);
    EXPECT_TRUE(report.to_json().contains("per_class"));
}

TEST(RocCsv, HasHeaderAndEndpoints) {
    const std::vector<double> s{0.9, 0.3, 0.8, 0.2};
    const std::vector<int> l{1, 0, 0, 1};
    const auto path = std::filesystem::temp_directory_path() / "mint_roc_test.csv";
    write_roc_csv(path, roc_auc(s, l));
    std::ifstream in(path);
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    EXPECT_EQ(header, "threshold,fpr,tpr");
    EXPECT_EQ(first, "inf,0,0");
    std::filesystem::remove(path);
}

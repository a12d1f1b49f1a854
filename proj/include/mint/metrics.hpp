#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mint/errors.hpp"

namespace mint {

/// ROC curve ordered by decreasing threshold. The first point is the
/// (+inf threshold, fpr 0, tpr 0) origin; the last is (1, 1).
struct RocCurve {
    std::vector<double> thresholds;
    std::vector<double> tpr;
    std::vector<double> fpr;
    double auc = 0.0;
};

namespace detail {

/// Returns (positives, negatives). Labels: 1 = member, 0 = external.
inline std::pair<std::size_t, std::size_t> check_scored(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ArgumentError("scores and labels differ in length");
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw ArgumentError("non-finite score at position " + std::to_string(i));
        if (labels[i] == 1) {
            ++pos;
        } else if (labels[i] == 0) {
            ++neg;
        } else {
            throw ArgumentError("labels must be 0 or 1");
        }
    }
    if (pos == 0 || neg == 0) throw UndefinedMetricError("metric undefined: labels contain a single class");
    return {pos, neg};
}

}  // namespace detail

/// ROC curve and its trapezoidal AUC. Equal scores form a single threshold
/// step, which gives tied member/external pairs half credit.
inline RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
    const auto [pos, neg] = detail::check_scored(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.thresholds.push_back(std::numeric_limits<double>::infinity());
    roc.tpr.push_back(0.0);
    roc.fpr.push_back(0.0);
    std::uint64_t tp = 0, fp = 0;
    // Twice the area, in units of (1/pos)(1/neg), accumulated exactly.
    long double area2 = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double thr = scores[order[i]];
        const std::uint64_t tp0 = tp, fp0 = fp;
        while (i < order.size() && scores[order[i]] == thr) {
            (labels[order[i]] == 1 ? tp : fp)++;
            ++i;
        }
        area2 += static_cast<long double>(fp - fp0) * static_cast<long double>(tp + tp0);
        roc.thresholds.push_back(thr);
        roc.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
        roc.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    }
    roc.auc = static_cast<double>(area2 / (2.0L * static_cast<long double>(pos) * static_cast<long double>(neg)));
    return roc;
}

/// Exact pairwise (Mann-Whitney) AUC in O(n_members * n_externals).
inline double auc_bruteforce_oracle(std::span<const double> scores, std::span<const int> labels) {
    const auto [pos, neg] = detail::check_scored(scores, labels);
    std::uint64_t wins2 = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) {
                wins2 += 2;
            } else if (scores[i] == scores[j]) {
                wins2 += 1;
            }
        }
    }
    return static_cast<double>(wins2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

/// Fraction correct when predicting member for score >= threshold.
inline double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
    detail::check_scored(scores, labels);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) correct += ((scores[i] >= threshold) == (labels[i] == 1)) ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(scores.size());
}

/// (TPR + TNR) / 2 when predicting member for score >= threshold.
inline double balanced_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
    const auto [pos, neg] = detail::check_scored(scores, labels);
    std::size_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1 && predicted) ++tp;
        if (labels[i] == 0 && !predicted) ++tn;
    }
    return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
}

struct ThresholdedScore {
    double value = 0.0;
    double threshold = 0.0;
};

/// Maximum balanced accuracy over every ROC threshold (never below 0.5).
inline ThresholdedScore best_balanced_accuracy(std::span<const double> scores, std::span<const int> labels) {
    const RocCurve roc = roc_auc(scores, labels);
    ThresholdedScore best{0.0, roc.thresholds.front()};
    for (std::size_t i = 0; i < roc.tpr.size(); ++i) {
        const double v = 0.5 * (roc.tpr[i] + 1.0 - roc.fpr[i]);
        if (v > best.value) best = {v, roc.thresholds[i]};
    }
    return best;
}

// ---------------------------------------------------------------------------
// Audit reports

struct ScoredSample {
    int class_index = 0;
    double score = 0.0;
    bool member = false;
};

struct ClassMetrics {
    double auc = 0.0;
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;       // at the fixed threshold
    double best_balanced_accuracy = 0.0;  // at the best threshold
    std::size_t n_members = 0;
    std::size_t n_externals = 0;

    nlohmann::json to_json() const {
        return {{"auc", auc},
                {"accuracy", accuracy},
                {"balanced_accuracy", balanced_accuracy},
                {"best_balanced_accuracy", best_balanced_accuracy},
                {"n_members", n_members},
                {"n_externals", n_externals}};
    }
};

inline ClassMetrics evaluate_scores(std::span<const double> scores, std::span<const int> labels, double threshold) {
    ClassMetrics m;
    m.auc = roc_auc(scores, labels).auc;
    m.accuracy = accuracy(scores, labels, threshold);
    m.balanced_accuracy = balanced_accuracy(scores, labels, threshold);
    m.best_balanced_accuracy = best_balanced_accuracy(scores, labels).value;
    m.n_members = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    m.n_externals = labels.size() - m.n_members;
    return m;
}

/// Per-class and pooled metrics of one (model, layer) audit.
struct MintAuditReport {
    std::map<int, ClassMetrics> per_class;
    ClassMetrics aggregate;  // all classes' scores pooled into one ROC
    double mean_class_auc = 0.0;
    int layer_index = 0;
    std::string checkpoint_id;
    std::string config_hash;
    double threshold = 0.5;

    nlohmann::json to_json() const {
        nlohmann::json classes = nlohmann::json::object();
        for (const auto& [c, m] : per_class) classes[std::to_string(c)] = m.to_json();
        return {{"per_class", classes},
                {"aggregate", aggregate.to_json()},
                {"mean_class_auc", mean_class_auc},
                {"layer_index", layer_index},
                {"checkpoint_id", checkpoint_id},
                {"config_hash", config_hash},
                {"threshold", threshold}};
    }
};

inline MintAuditReport build_report(std::span<const ScoredSample> samples, double threshold = 0.5) {
    MintAuditReport report;
    report.threshold = threshold;
    std::map<int, std::pair<std::vector<double>, std::vector<int>>> groups;
    std::vector<double> all_scores;
    std::vector<int> all_labels;
    for (const auto& s : samples) {
        auto& g = groups[s.class_index];
        g.first.push_back(s.score);
        g.second.push_back(s.member ? 1 : 0);
        all_scores.push_back(s.score);
        all_labels.push_back(s.member ? 1 : 0);
    }
    double auc_sum = 0.0;
    for (const auto& [c, g] : groups) {
        report.per_class[c] = evaluate_scores(g.first, g.second, threshold);
        auc_sum += report.per_class[c].auc;
    }
    report.aggregate = evaluate_scores(all_scores, all_labels, threshold);
    report.mean_class_auc = groups.empty() ? 0.0 : auc_sum / static_cast<double>(groups.size());
    return report;
}

inline RocCurve pooled_roc(std::span<const ScoredSample> samples) {
    std::vector<double> s;
    std::vector<int> l;
    for (const auto& x : samples) {
        s.push_back(x.score);
        l.push_back(x.member ? 1 : 0);
    }
    return roc_auc(s, l);
}

/// threshold,fpr,tpr rows; the origin's threshold is written as "inf".
inline void write_roc_csv(const std::filesystem::path& path, const RocCurve& roc) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path.string());
    out << "threshold,fpr,tpr\n" << std::setprecision(10);
    for (std::size_t i = 0; i < roc.tpr.size(); ++i) {
        if (std::isinf(roc.thresholds[i])) {
            out << "inf";
        } else {
            out << roc.thresholds[i];
        }
        out << ',' << roc.fpr[i] << ',' << roc.tpr[i] << '\n';
    }
}

/// Minimal static ROC plot, one polyline per curve.
inline void write_roc_svg(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, RocCurve>>& curves) {
    static constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                              "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    constexpr double kSize = 400.0, kPad = 40.0;
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 2 * kPad + 160 << "\" height=\""
        << kSize + 2 * kPad << "\">\n";
    out << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << kSize << "\" height=\"" << kSize
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << kPad << "\" y1=\"" << kPad + kSize << "\" x2=\"" << kPad + kSize << "\" y2=\"" << kPad
        << "\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>\n";
    out << std::fixed << std::setprecision(2);
    for (std::size_t k = 0; k < curves.size(); ++k) {
        const auto& [label, roc] = curves[k];
        const char* color = kColors[k % std::size(kColors)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
        for (std::size_t i = 0; i < roc.tpr.size(); ++i) {
            out << kPad + roc.fpr[i] * kSize << ',' << kPad + (1.0 - roc.tpr[i]) * kSize << ' ';
        }
        out << "\"/>\n";
        out << "<text x=\"" << kPad * 1.5 + kSize << "\" y=\"" << kPad + 16.0 * static_cast<double>(k + 1)
            << "\" fill=\"" << color << "\" font-size=\"12\">" << label << " (AUC " << std::setprecision(3) << roc.auc
            << ")</text>\n"
            << std::setprecision(2);
    }
    out << "<text x=\"" << kPad + kSize / 2 - 40 << "\" y=\"" << kSize + 1.8 * kPad
        << "\" font-size=\"12\">False positive rate</text>\n";
    out << "<text x=\"8\" y=\"" << kPad + kSize / 2 << "\" font-size=\"12\" transform=\"rotate(-90 8 "
        << kPad + kSize / 2 << ")\">True positive rate</text>\n</svg>\n";
}

}  // namespace mint

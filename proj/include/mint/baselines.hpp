#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mint/classifier.hpp"
#include "mint/corpus.hpp"
#include "mint/mint.hpp"

namespace mint {

/// Shadow-model-free membership inference attacks that only need the audited
/// model's output probabilities.
enum class BaselineMethod { yeom_loss, salem_confidence, song_mentropy };

inline std::string to_string(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::yeom_loss: return "yeom_loss";
        case BaselineMethod::salem_confidence: return "salem_confidence";
        case BaselineMethod::song_mentropy: return "song_mentropy";
    }
    return "unknown";
}

inline BaselineMethod parse_baseline(const std::string& text) {
    if (text == "yeom_loss" || text == "yeom") return BaselineMethod::yeom_loss;
    if (text == "salem_confidence" || text == "salem") return BaselineMethod::salem_confidence;
    if (text == "song_mentropy" || text == "song") return BaselineMethod::song_mentropy;
    throw ConfigurationError("unknown baseline '" + text + "' (expected yeom_loss, salem_confidence or song_mentropy)");
}

/// membership_score is oriented so that higher means "more likely a member".
struct BaselineScore {
    SampleId sample_id;
    BaselineMethod method = BaselineMethod::yeom_loss;
    double raw_statistic = 0.0;
    double membership_score = 0.0;
};

inline constexpr double kLogEpsilon = 1e-12;

inline double guarded_log(double p) { return std::log(std::max(p, kLogEpsilon)); }

/// Cross-entropy loss on the true class; score = -loss.
inline double yeom_statistic(std::span<const float> probs, int label) {
    return -guarded_log(probs[static_cast<std::size_t>(label)]);
}

/// Largest softmax entry; score = statistic.
inline double salem_statistic(std::span<const float> probs) { return *std::max_element(probs.begin(), probs.end()); }

/// Modified prediction entropy -(1-p_y) log p_y - sum_{c != y} p_c log(1 - p_c); score = -statistic.
inline double song_statistic(std::span<const float> probs, int label) {
    double h = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        const double p = probs[c];
        if (static_cast<int>(c) == label) {
            h -= (1.0 - p) * guarded_log(p);
        } else {
            h -= p * guarded_log(1.0 - p);
        }
    }
    return h;
}

namespace detail {

inline void check_probs(const Tensor& probs, std::size_t n) {
    if (probs.rank() != 2 || static_cast<std::size_t>(probs.dim(0)) != n) {
        throw ArgumentError("expected " + std::to_string(n) + " probability rows, got " + shape_string(probs.shape));
    }
}

}  // namespace detail

inline std::vector<BaselineScore> yeom_score(const Tensor& probs, std::span<const int> labels,
                                             std::span<const SampleId> ids) {
    detail::check_probs(probs, ids.size());
    if (labels.size() != ids.size()) throw ArgumentError("yeom_score needs one label per sample");
    std::vector<BaselineScore> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double loss = yeom_statistic(probs.row(static_cast<int>(i)), labels[i]);
        out.push_back({ids[i], BaselineMethod::yeom_loss, loss, -loss});
    }
    return out;
}

inline std::vector<BaselineScore> salem_score(const Tensor& probs, std::span<const SampleId> ids) {
    detail::check_probs(probs, ids.size());
    std::vector<BaselineScore> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double conf = salem_statistic(probs.row(static_cast<int>(i)));
        out.push_back({ids[i], BaselineMethod::salem_confidence, conf, conf});
    }
    return out;
}

inline std::vector<BaselineScore> song_score(const Tensor& probs, std::span<const int> labels,
                                             std::span<const SampleId> ids) {
    detail::check_probs(probs, ids.size());
    if (labels.size() != ids.size()) throw ArgumentError("song_score needs one label per sample");
    std::vector<BaselineScore> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double h = song_statistic(probs.row(static_cast<int>(i)), labels[i]);
        out.push_back({ids[i], BaselineMethod::song_mentropy, h, -h});
    }
    return out;
}

/// Class probabilities of the audited model for `ids`, batched.
inline Tensor predict_ids(AuditedModel& model, const Corpus& corpus, std::span<const SampleId> ids, int batch = 128) {
    Tensor out({static_cast<int>(ids.size()), model.spec().num_classes});
    for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(batch)) {
        const auto chunk = ids.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(batch), ids.size() - start));
        const Tensor p = model.predict(corpus.batch(chunk));
        std::copy(p.data.begin(), p.data.end(), out.ptr() + start * static_cast<std::size_t>(model.spec().num_classes));
    }
    return out;
}

inline std::vector<BaselineScore> baseline_score(BaselineMethod method, const Tensor& probs, std::span<const int> labels,
                                                 std::span<const SampleId> ids) {
    switch (method) {
        case BaselineMethod::yeom_loss: return yeom_score(probs, labels, ids);
        case BaselineMethod::salem_confidence: return salem_score(probs, ids);
        case BaselineMethod::song_mentropy: return song_score(probs, labels, ids);
    }
    throw ConfigurationError("unknown baseline method");
}

/// Appends rows `sample_id,class_index,method,score,predicted_member`; the
/// header is written when the file is new.
inline void append_scores_csv(const std::filesystem::path& path, std::span<const MembershipScore> scores,
                              const std::string& method) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw IngestionError("cannot append to " + path.string());
    if (fresh) out << "sample_id,class_index,method,score,predicted_member\n";
    out.precision(10);
    for (const auto& s : scores) {
        out << s.sample_id.value << ',' << s.class_index << ',' << method << ',' << s.score << ','
            << (s.predicted_member ? 1 : 0) << '\n';
    }
}

}  // namespace mint

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mint/embeddings.hpp"
#include "mint/metrics.hpp"
#include "mint/nn/layers.hpp"
#include "mint/nn/train_utils.hpp"

namespace mint {

/// Architecture of one per-class MINT model T(.|theta_i): a 1-D convolutional
/// binary classifier over a flat embedding.
struct MintModelSpec {
    int input_len = 0;
    int conv1_filters = 32;
    int conv2_filters = 64;
    int kernel_size = 3;
    float dropout = 0.5f;

    void validate() const {
        if (input_len < 1) throw ArgumentError("MINT input_len must be >= 1");
        if (conv1_filters < 1 || kernel_size < 1) throw ArgumentError("MINT conv1_filters and kernel_size must be >= 1");
        if (conv2_filters != 64) throw ArgumentError("MINT second convolution must have 64 filters");
        if (dropout != 0.5f) throw ArgumentError("MINT dropout rate must be 0.5");
    }

    /// Length after the ceil-mode pool of width 2.
    int pooled_len() const { return (input_len + 1) / 2; }

    nlohmann::json to_json() const {
        return {{"input_len", input_len},
                {"conv1_filters", conv1_filters},
                {"conv2_filters", conv2_filters},
                {"kernel_size", kernel_size},
                {"dropout", dropout}};
    }
};

/// conv1d(conv1_filters, k, same) -> ReLU -> maxpool(2, ceil) -> conv1d(64, k, same)
/// -> ReLU -> flatten -> dropout 0.5 -> dense 1 -> sigmoid.
class MintModel {
public:
    MintModel(MintModelSpec spec, std::uint64_t seed) : spec_(spec) {
        spec_.validate();
        nn::Rng rng(seed);
        const int k = spec_.kernel_size;
        net_.add<nn::Conv2d>(1, spec_.conv1_filters, 1, k, 1, 0, k / 2, rng);
        net_.add<nn::ReLU>();
        net_.add<nn::MaxPool2d>(1, 2, true);
        net_.add<nn::Conv2d>(spec_.conv1_filters, spec_.conv2_filters, 1, k, 1, 0, k / 2, rng);
        net_.add<nn::ReLU>();
        net_.add<nn::Flatten>();
        net_.add<nn::Dropout>(spec_.dropout, seed ^ 0xD1B54A32D192ED03ULL);
        const Shape conv_out = net_.output_shape({1, 1, spec_.input_len});
        net_.add<nn::Dense>(static_cast<int>(shape_size(conv_out)), 1, rng);
        net_.add<nn::Sigmoid>();
    }

    const MintModelSpec& spec() const noexcept { return spec_; }

    /// Membership probabilities for an N x input_len matrix.
    std::vector<double> predict(const Tensor& embeddings) {
        const Tensor p = net_.forward(as_input(embeddings), nn::Mode::infer);
        return {p.data.begin(), p.data.end()};
    }

    Tensor train_logits(const Tensor& embeddings) {
        return net_.forward_range(as_input(embeddings), 0, net_.size() - 1, nn::Mode::train);
    }
    void backward_logits(const Tensor& grad) { net_.backward_range(grad, 0, net_.size() - 1); }

    std::vector<nn::Param*> params() { return net_.params(); }
    std::vector<float> export_state() { return nn::export_state(net_); }
    void import_state(std::span<const float> s) { nn::import_state(net_, s); }

    /// Rows per forward pass that keep the im2col buffer around 64 MB.
    int inference_batch() const {
        const double per_row = static_cast<double>(spec_.conv1_filters) * spec_.kernel_size * spec_.pooled_len();
        return static_cast<int>(std::clamp(16.0e6 / per_row, 1.0, 256.0));
    }

private:
    Tensor as_input(const Tensor& x) const {
        if (x.rank() != 2 || x.dim(1) != spec_.input_len) {
            throw ArgumentError("MINT model expects N x " + std::to_string(spec_.input_len) + " input, got " +
                                shape_string(x.shape));
        }
        return x.reshaped({x.dim(0), 1, 1, spec_.input_len});
    }

    MintModelSpec spec_;
    nn::Sequential net_;
};

struct MintTrainOptions {
    int epochs = 50;
    int batch_size = 32;
    float learning_rate = 1e-3f;
    std::uint64_t seed = 0;
    double eval_fraction = 0.2;
    int conv1_filters = 32;
    int kernel_size = 3;

    nlohmann::json to_json() const {
        return {{"epochs", epochs},         {"batch_size", batch_size},       {"learning_rate", learning_rate},
                {"seed", seed},             {"eval_fraction", eval_fraction}, {"conv1_filters", conv1_filters},
                {"kernel_size", kernel_size}};
    }
};

/// Indices into an embedding record list.
struct MintSets {
    std::vector<std::size_t> train;
    std::vector<std::size_t> eval;
};

inline std::uint64_t class_seed(std::uint64_t seed, int class_index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(class_index), 0x4D494E54u};
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// Balanced member/external pool for one class, split into MINT-train and
/// MINT-eval with equal member and external counts in both parts.
///
/// The larger side is undersampled by a seeded draw to the size of the smaller one.
inline MintSets build_balanced_mint_sets(std::span<const EmbeddingRecord> records, int class_index,
                                         std::uint64_t seed, double eval_fraction = 0.2) {
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ArgumentError("eval_fraction must lie in (0, 1)");
    std::vector<std::size_t> members, externals;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].class_label != class_index) continue;
        (records[i].membership ? members : externals).push_back(i);
    }
    if (members.empty() || externals.empty()) {
        throw ProtocolError("class " + std::to_string(class_index) + " has " + std::to_string(members.size()) +
                            " members and " + std::to_string(externals.size()) +
                            " externals; MINT needs both");
    }
    const std::size_t n = std::min(members.size(), externals.size());
    if (n < 2) {
        throw ProtocolError("class " + std::to_string(class_index) +
                            " needs at least 2 members and 2 externals for a MINT train/eval split");
    }
    std::mt19937_64 rng(class_seed(seed, class_index));
    std::shuffle(members.begin(), members.end(), rng);
    std::shuffle(externals.begin(), externals.end(), rng);
    members.resize(n);
    externals.resize(n);

    const std::size_t n_eval =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(n))), 1, n - 1);
    MintSets sets;
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = i < n_eval ? sets.eval : sets.train;
        dst.push_back(members[i]);
        dst.push_back(externals[i]);
    }
    std::sort(sets.train.begin(), sets.train.end());
    std::sort(sets.eval.begin(), sets.eval.end());
    return sets;
}

struct TrainedMint {
    MintModel model;
    std::vector<double> loss_history;
};

namespace detail {

inline Tensor gather_rows(std::span<const EmbeddingRecord> records, std::span<const std::size_t> idx) {
    const int len = static_cast<int>(records[idx.front()].vector.size());
    Tensor t({static_cast<int>(idx.size()), len});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& v = records[idx[i]].vector;
        std::copy(v.begin(), v.end(), t.ptr() + i * static_cast<std::size_t>(len));
    }
    return t;
}

}  // namespace detail

/// Trains T(.|theta_i) with Adam and binary cross-entropy. Each batch holds
/// equal numbers of members and externals. Every record in `train` must
/// belong to `class_index`.
inline TrainedMint train_mint(std::span<const EmbeddingRecord> records, std::span<const std::size_t> train,
                              int class_index, const MintTrainOptions& options) {
    if (train.empty()) throw ProtocolError("empty MINT training set for class " + std::to_string(class_index));
    std::vector<std::size_t> members, externals;
    for (auto i : train) {
        if (records[i].class_label != class_index) {
            throw ProtocolError("record of class " + std::to_string(records[i].class_label) +
                                " passed to the MINT model of class " + std::to_string(class_index));
        }
        (records[i].membership ? members : externals).push_back(i);
    }
    if (members.size() != externals.size()) {
        throw ProtocolError("MINT training set for class " + std::to_string(class_index) + " is not balanced");
    }

    MintModelSpec spec{static_cast<int>(records[train.front()].vector.size()), options.conv1_filters, 64,
                       options.kernel_size, 0.5f};
    const std::uint64_t seed = class_seed(options.seed, class_index);
    TrainedMint out{MintModel(spec, seed), {}};
    nn::Adam adam(out.model.params(), {.learning_rate = options.learning_rate});
    std::mt19937_64 rng(seed + 1);
    const std::size_t half = std::max<std::size_t>(1, static_cast<std::size_t>(options.batch_size) / 2);

    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        std::shuffle(members.begin(), members.end(), rng);
        std::shuffle(externals.begin(), externals.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < members.size(); start += half) {
            const std::size_t take = std::min(half, members.size() - start);
            std::vector<std::size_t> batch;
            std::vector<float> targets;
            for (std::size_t i = 0; i < take; ++i) {
                batch.push_back(members[start + i]);
                targets.push_back(1.0f);
                batch.push_back(externals[start + i]);
                targets.push_back(0.0f);
            }
            adam.zero_grad();
            const Tensor logits = out.model.train_logits(detail::gather_rows(records, batch));
            auto [loss, grad] = nn::binary_cross_entropy_with_logits(logits, targets);
            if (!std::isfinite(loss)) {
                throw DivergenceError("non-finite MINT loss for class " + std::to_string(class_index) + " at epoch " +
                                          std::to_string(epoch),
                                      epoch);
            }
            out.model.backward_logits(grad);
            adam.step();
            loss_sum += loss * static_cast<double>(batch.size());
        }
        out.loss_history.push_back(loss_sum / static_cast<double>(train.size()));
    }
    return out;
}

inline std::vector<double> predict_records(MintModel& model, std::span<const EmbeddingRecord> records,
                                           std::span<const std::size_t> idx) {
    std::vector<double> out;
    out.reserve(idx.size());
    const auto step = static_cast<std::size_t>(model.inference_batch());
    for (std::size_t start = 0; start < idx.size(); start += step) {
        const auto chunk = idx.subspan(start, std::min(step, idx.size() - start));
        const auto p = model.predict(detail::gather_rows(records, chunk));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

/// One MINT model per class of the audited corpus.
struct MintEnsemble {
    int layer_index = 0;
    std::string checkpoint_id;
    std::string split_ref;
    MintTrainOptions options;
    std::map<int, MintModel> per_class_models;

    nlohmann::json manifest() const {
        nlohmann::json classes = nlohmann::json::array(), seeds = nlohmann::json::object();
        for (const auto& [c, m] : per_class_models) {
            classes.push_back(c);
            seeds[std::to_string(c)] = class_seed(options.seed, c);
        }
        const int input_len = per_class_models.empty() ? 0 : per_class_models.begin()->second.spec().input_len;
        auto hyper = options.to_json();
        hyper["input_len"] = input_len;
        hyper["conv2_filters"] = 64;
        hyper["dropout"] = 0.5;
        return {{"layer_index", layer_index},
                {"checkpoint_id", checkpoint_id},
                {"split_ref", split_ref},
                {"classes", classes},
                {"seeds", seeds},
                {"mint_hyperparams", hyper}};
    }
};

struct EnsembleTraining {
    MintEnsemble ensemble;
    std::map<int, MintSets> sets;
};

/// Builds balanced sets and trains a MINT model for every class present in `set`.
inline EnsembleTraining train_ensemble(const EmbeddingSet& set, const MintTrainOptions& options) {
    EnsembleTraining out;
    out.ensemble.layer_index = set.provenance.layer_index;
    out.ensemble.checkpoint_id = set.provenance.checkpoint_id;
    out.ensemble.split_ref = set.provenance.split_ref;
    out.ensemble.options = options;
    std::set<int> classes;
    for (const auto& r : set.records) classes.insert(r.class_label);
    for (int c : classes) {
        auto sets = build_balanced_mint_sets(set.records, c, options.seed, options.eval_fraction);
        auto trained = train_mint(set.records, sets.train, c, options);
        out.ensemble.per_class_models.emplace(c, std::move(trained.model));
        out.sets.emplace(c, std::move(sets));
    }
    return out;
}

struct MembershipScore {
    SampleId sample_id;
    int class_index = 0;
    double score = 0.0;
    bool predicted_member = false;
};

/// Scores each record with the model of its routing class (ground-truth label
/// unless `routing` supplies one label per record). Validates everything before
/// producing any output.
inline std::vector<MembershipScore> score(MintEnsemble& ensemble, std::span<const EmbeddingRecord> records,
                                          double threshold = 0.5,
                                          std::optional<std::span<const int>> routing = std::nullopt) {
    if (routing && routing->size() != records.size()) throw ArgumentError("routing labels must match records");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].layer_index != ensemble.layer_index) {
            throw IntegrityError("record from layer " + std::to_string(records[i].layer_index) +
                                 " cannot be scored by an ensemble trained on layer " +
                                 std::to_string(ensemble.layer_index));
        }
        const int c = routing ? (*routing)[i] : records[i].class_label;
        if (!ensemble.per_class_models.count(c)) {
            throw EnsembleIncompleteError("no MINT model for class " + std::to_string(c));
        }
        by_class[c].push_back(i);
    }
    std::vector<MembershipScore> out(records.size());
    for (auto& [c, idx] : by_class) {
        const auto p = predict_records(ensemble.per_class_models.at(c), records, idx);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out[idx[k]] = {records[idx[k]].sample_id, c, p[k], p[k] >= threshold};
        }
    }
    return out;
}

inline void save_ensemble(MintEnsemble& ensemble, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (auto& [c, model] : ensemble.per_class_models) {
        nn::write_blob(dir / ("class_" + std::to_string(c) + ".bin"), model.export_state());
    }
    std::ofstream(dir / "manifest.json") << ensemble.manifest().dump(2) << '\n';
}

inline MintEnsemble load_ensemble(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IngestionError("missing ensemble manifest " + (dir / "manifest.json").string());
    MintEnsemble e;
    try {
        const auto j = nlohmann::json::parse(in);
        e.layer_index = j.at("layer_index").get<int>();
        e.checkpoint_id = j.at("checkpoint_id").get<std::string>();
        e.split_ref = j.value("split_ref", std::string{});
        const auto& h = j.at("mint_hyperparams");
        e.options.epochs = h.at("epochs").get<int>();
        e.options.batch_size = h.at("batch_size").get<int>();
        e.options.learning_rate = h.at("learning_rate").get<float>();
        e.options.seed = h.at("seed").get<std::uint64_t>();
        e.options.eval_fraction = h.at("eval_fraction").get<double>();
        e.options.conv1_filters = h.at("conv1_filters").get<int>();
        e.options.kernel_size = h.at("kernel_size").get<int>();
        const MintModelSpec spec{h.at("input_len").get<int>(), e.options.conv1_filters, 64, e.options.kernel_size, 0.5f};
        for (const auto& c : j.at("classes")) {
            const int cls = c.get<int>();
            MintModel m(spec, class_seed(e.options.seed, cls));
            m.import_state(nn::read_blob(dir / ("class_" + std::to_string(cls) + ".bin")));
            e.per_class_models.emplace(cls, std::move(m));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw IntegrityError("malformed ensemble manifest in " + dir.string() + ": " + ex.what());
    }
    return e;
}

/// Scores the MINT-eval part of every class and summarizes it.
inline std::vector<ScoredSample> score_eval_sets(EnsembleTraining& trained, std::span<const EmbeddingRecord> records) {
    std::vector<ScoredSample> out;
    for (auto& [c, sets] : trained.sets) {
        const auto p = predict_records(trained.ensemble.per_class_models.at(c), records, sets.eval);
        for (std::size_t k = 0; k < sets.eval.size(); ++k) out.push_back({c, p[k], records[sets.eval[k]].membership});
    }
    return out;
}

}  // namespace mint

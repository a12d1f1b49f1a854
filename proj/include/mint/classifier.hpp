#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mint/architectures.hpp"
#include "mint/corpus.hpp"
#include "mint/hash.hpp"
#include "mint/nn/train_utils.hpp"
#include "mint/split.hpp"

namespace mint {

struct AuditedModelSpec {
    Architecture architecture = Architecture::paper_cnn;
    int num_classes = 0;
    std::vector<LayerInfo> layer_catalog;

    int layer_count() const { return static_cast<int>(layer_catalog.size()); }

    const LayerInfo& layer(int index) const {
        if (index < 1 || index > layer_count()) {
            std::string valid;
            for (const auto& l : layer_catalog) valid += (valid.empty() ? "" : ", ") + std::to_string(l.index) + "=" + l.name;
            throw CatalogError("layer index " + std::to_string(index) + " out of range for " + to_string(architecture) +
                               "; valid layers: " + valid);
        }
        return layer_catalog[static_cast<std::size_t>(index - 1)];
    }

    /// Last layer before the output layer.
    int penultimate_layer() const { return layer_count() - 1; }

    nlohmann::json to_json() const {
        nlohmann::json cat = nlohmann::json::array();
        for (const auto& l : layer_catalog) {
            cat.push_back({{"index", l.index}, {"name", l.name}, {"output_shape", l.output_shape}});
        }
        return {{"architecture", to_string(architecture)}, {"num_classes", num_classes}, {"layer_catalog", cat}};
    }
};

/// The audited classifier M: a network with a tappable layer catalog.
class AuditedModel {
public:
    AuditedModel(Architecture arch, int num_classes, std::uint64_t init_seed)
        : init_seed_(init_seed), tapped_(build_network(arch, num_classes, init_seed)) {
        spec_.architecture = arch;
        spec_.num_classes = num_classes;
        spec_.layer_catalog = tapped_.catalog;
    }

    const AuditedModelSpec& spec() const noexcept { return spec_; }
    std::uint64_t init_seed() const noexcept { return init_seed_; }
    nn::Sequential& network() noexcept { return tapped_.net; }

    /// Class probabilities (inference mode).
    Tensor predict(const Tensor& images) {
        check_input(images);
        return tapped_.net.forward(images, nn::Mode::infer);
    }

    /// Activations of catalog layer `layer_index`, flattened to N x len (channel-major).
    Tensor activations(const Tensor& images, int layer_index) {
        check_input(images);
        const auto& info = spec_.layer(layer_index);
        Tensor h = tapped_.net.forward_range(images, 0, tapped_.taps[static_cast<std::size_t>(layer_index - 1)],
                                             nn::Mode::infer);
        return std::move(h).reshaped({images.batch(), static_cast<int>(info.flat_size())});
    }

    /// Training-mode logits (everything except the final softmax).
    Tensor train_logits(const Tensor& images) {
        return tapped_.net.forward_range(images, 0, tapped_.net.size() - 1, nn::Mode::train);
    }
    void backward_logits(const Tensor& grad) { tapped_.net.backward_range(grad, 0, tapped_.net.size() - 1); }

    std::vector<nn::Param*> params() { return tapped_.net.params(); }
    std::vector<float> export_state() { return nn::export_state(tapped_.net); }
    void import_state(std::span<const float> state) { nn::import_state(tapped_.net, state); }

private:
    void check_input(const Tensor& images) const {
        if (images.rank() != 4 || images.dim(1) != kImageChannels || images.dim(2) != kImageSide ||
            images.dim(3) != kImageSide) {
            throw ArgumentError("expected N x 3 x 32 x 32 images, got " + shape_string(images.shape));
        }
    }

    std::uint64_t init_seed_;
    TappedNetwork tapped_;
    AuditedModelSpec spec_;
};

inline AuditedModelSpec make_model_spec(Architecture arch, int num_classes) {
    return AuditedModel(arch, num_classes, 0).spec();
}

struct AuditedModelCheckpoint {
    AuditedModelSpec spec;
    std::vector<float> parameters;
    int epochs_trained = 0;
    int batch_size = 32;
    std::uint64_t train_seed = 0;
    std::uint64_t init_seed = 0;
    std::string split_ref;

    nlohmann::json metadata() const {
        return {{"spec", spec.to_json()},
                {"epochs_trained", epochs_trained},
                {"batch_size", batch_size},
                {"train_seed", train_seed},
                {"init_seed", init_seed},
                {"split_ref", split_ref}};
    }

    std::string id() const {
        Sha256 h;
        h.update(metadata().dump());
        h.update(std::as_bytes(std::span(parameters)));
        return h.hex().substr(0, 16);
    }

    AuditedModel materialize() const {
        AuditedModel m(spec.architecture, spec.num_classes, init_seed);
        m.import_state(parameters);
        return m;
    }
};

struct TrainReport {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::vector<double> per_epoch_loss;

    nlohmann::json to_json() const {
        return {{"train_accuracy", train_accuracy}, {"test_accuracy", test_accuracy}, {"per_epoch_loss", per_epoch_loss}};
    }
};

struct TrainedSnapshot {
    AuditedModelCheckpoint checkpoint;
    TrainReport report;
};

struct TrainOptions {
    int epochs = 1;
    int batch_size = 32;
    std::uint64_t train_seed = 0;
    float learning_rate = 1e-3f;
    /// Extra epochs (< epochs) at which to emit a snapshot; the final epoch is always emitted.
    std::vector<int> snapshot_epochs;
    /// Called with the sample ids of every training batch.
    std::function<void(std::span<const SampleId>)> on_batch;
    std::function<void(int epoch, double loss)> on_epoch;
};

/// Fraction of `ids` whose argmax prediction equals the label.
inline double accuracy_on(AuditedModel& model, const Corpus& corpus, std::span<const SampleId> ids,
                          int batch = 128) {
    if (ids.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(batch)) {
        const auto chunk = ids.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(batch), ids.size() - start));
        const Tensor probs = model.predict(corpus.batch(chunk));
        const int k = probs.dim(1);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const float* p = probs.ptr() + i * static_cast<std::size_t>(k);
            if (std::max_element(p, p + k) - p == corpus.label_of(chunk[i])) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ids.size());
}

/// Trains `model` on the members of `split` only (Adam, categorical cross-entropy).
/// The first k epochs of a run do not depend on the total epoch count, so
/// snapshots equal separately trained k-epoch models.
inline std::vector<TrainedSnapshot> train_with_snapshots(AuditedModel& model, const Corpus& corpus,
                                                         const DatasetSplit& split, const TrainOptions& options) {
    if (options.epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (options.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (split.members.empty()) throw ProtocolError("cannot train the audited model on an empty member set");
    if (model.spec().num_classes != corpus.num_classes()) {
        throw ArgumentError("model has " + std::to_string(model.spec().num_classes) + " classes, corpus has " +
                            std::to_string(corpus.num_classes()));
    }

    nn::Adam adam(model.params(), {.learning_rate = options.learning_rate});
    std::vector<SampleId> order = split.members;
    std::vector<double> losses;
    std::vector<TrainedSnapshot> snapshots;
    const std::string split_ref = split.id();

    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        std::seed_seq seq{static_cast<std::uint32_t>(options.train_seed), static_cast<std::uint32_t>(options.train_seed >> 32),
                          static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(seq);
        order = split.members;
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
            const std::span<const SampleId> batch(
                order.data() + start, std::min<std::size_t>(static_cast<std::size_t>(options.batch_size), order.size() - start));
            if (options.on_batch) options.on_batch(batch);
            std::vector<int> labels(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = corpus.label_of(batch[i]);

            adam.zero_grad();
            const Tensor logits = model.train_logits(corpus.batch(batch));
            auto [loss, grad] = nn::softmax_cross_entropy(logits, labels);
            if (!std::isfinite(loss)) {
                throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch), epoch);
            }
            model.backward_logits(grad);
            adam.step();
            loss_sum += loss * static_cast<double>(batch.size());
            seen += batch.size();
        }
        losses.push_back(loss_sum / static_cast<double>(seen));
        if (options.on_epoch) options.on_epoch(epoch, losses.back());

        const bool wanted = epoch == options.epochs ||
                            std::find(options.snapshot_epochs.begin(), options.snapshot_epochs.end(), epoch) !=
                                options.snapshot_epochs.end();
        if (wanted) {
            TrainedSnapshot snap;
            snap.checkpoint = {model.spec(), model.export_state(), epoch,       options.batch_size,
                               options.train_seed, model.init_seed(), split_ref};
            snap.report.per_epoch_loss = losses;
            snap.report.train_accuracy = accuracy_on(model, corpus, split.members);
            snap.report.test_accuracy = accuracy_on(model, corpus, split.externals);
            snapshots.push_back(std::move(snap));
        }
    }
    return snapshots;
}

inline TrainedSnapshot train(AuditedModel& model, const Corpus& corpus, const DatasetSplit& split, int epochs,
                             int batch_size = 32, std::uint64_t train_seed = 0) {
    TrainOptions o;
    o.epochs = epochs;
    o.batch_size = batch_size;
    o.train_seed = train_seed;
    return std::move(train_with_snapshots(model, corpus, split, o).back());
}

/// Class-probability vectors (N x K) for a batch of images.
inline Tensor predict(const AuditedModelCheckpoint& checkpoint, const Tensor& images) {
    auto model = checkpoint.materialize();
    return model.predict(images);
}

// ---------------------------------------------------------------------------
// Checkpoint directory: weights.bin, metadata.json, split.json

inline void save_checkpoint(const AuditedModelCheckpoint& ckpt, const DatasetSplit& split,
                            const std::filesystem::path& dir) {
    if (split.id() != ckpt.split_ref) throw IntegrityError("checkpoint split_ref does not match the supplied split");
    std::filesystem::create_directories(dir);
    nn::write_blob(dir / "weights.bin", ckpt.parameters);
    save_split(split, dir / "split.json");
    auto meta = ckpt.metadata();
    meta["checkpoint_id"] = ckpt.id();
    std::ofstream(dir / "metadata.json") << meta.dump(2) << '\n';
}

inline AuditedModelCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "metadata.json");
    if (!in) throw IngestionError("missing checkpoint metadata: " + (dir / "metadata.json").string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw IntegrityError("corrupt checkpoint metadata " + (dir / "metadata.json").string() + ": " + e.what());
    }
    AuditedModelCheckpoint ckpt;
    try {
        ckpt.spec = make_model_spec(parse_architecture(meta.at("spec").at("architecture").get<std::string>()),
                                    meta.at("spec").at("num_classes").get<int>());
        ckpt.epochs_trained = meta.at("epochs_trained").get<int>();
        ckpt.batch_size = meta.at("batch_size").get<int>();
        ckpt.train_seed = meta.at("train_seed").get<std::uint64_t>();
        ckpt.init_seed = meta.at("init_seed").get<std::uint64_t>();
        ckpt.split_ref = meta.at("split_ref").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("incomplete checkpoint metadata in " + dir.string() + ": " + e.what());
    }
    if (ckpt.epochs_trained < 1) throw IntegrityError("checkpoint records epochs_trained < 1");
    if (load_split(dir / "split.json").id() != ckpt.split_ref) {
        throw IntegrityError("checkpoint split_ref does not resolve to its split manifest in " + dir.string());
    }
    ckpt.parameters = nn::read_blob(dir / "weights.bin");
    if (meta.contains("checkpoint_id") && meta["checkpoint_id"].get<std::string>() != ckpt.id()) {
        throw IntegrityError("checkpoint id mismatch in " + dir.string());
    }
    ckpt.materialize();  // validates parameter count against the architecture
    return ckpt;
}

/// Appends one row to a runs CSV (header written when the file is new).
inline void append_runs_csv(const std::filesystem::path& path, const AuditedModelCheckpoint& ckpt,
                            const TrainReport& report) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw IngestionError("cannot append to " + path.string());
    if (fresh) out << "checkpoint_id,architecture,num_classes,epochs,batch_size,train_seed,split_ref,train_accuracy,test_accuracy,final_loss\n";
    out << ckpt.id() << ',' << to_string(ckpt.spec.architecture) << ',' << ckpt.spec.num_classes << ','
        << ckpt.epochs_trained << ',' << ckpt.batch_size << ',' << ckpt.train_seed << ',' << ckpt.split_ref << ','
        << report.train_accuracy << ',' << report.test_accuracy << ','
        << (report.per_epoch_loss.empty() ? 0.0 : report.per_epoch_loss.back()) << '\n';
}

}  // namespace mint

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mint/baselines.hpp"
#include "mint/mint.hpp"

namespace mint {

namespace fs = std::filesystem;

/// Layer selector value meaning "the penultimate layer of whatever architecture is audited".
inline constexpr int kPenultimateLayer = -1;

inline constexpr const char* kDataRootEnv = "MINT_DATA_ROOT";

struct CorpusConfig {
    std::string name = "synthetic";
    std::string root;  // empty: taken from MINT_DATA_ROOT
    int num_classes = 10;
    int per_class = 100;
    std::uint64_t seed = 0;
    SyntheticParams synthetic;
    std::size_t subset_per_class = 0;  // 0 keeps every image

    nlohmann::json to_json() const {
        nlohmann::json j{{"name", name}, {"subset_per_class", subset_per_class}};
        if (name == "synthetic") {
            j["num_classes"] = num_classes;
            j["per_class"] = per_class;
            j["seed"] = seed;
            j["synthetic"] = {{"signal", synthetic.signal},
                              {"latent_noise", synthetic.latent_noise},
                              {"noise", synthetic.noise},
                              {"brightness_jitter", synthetic.brightness_jitter},
                              {"latent_dims", synthetic.latent_dims}};
        }
        return j;
    }
};

struct SplitConfig {
    double fraction = 0.5;
    std::uint64_t seed = 0;
};

struct AuditedConfig {
    std::string architecture = "paper_cnn";
    int epochs = 50;
    int batch_size = 32;
    std::uint64_t seed = 0;
    float learning_rate = 1e-3f;
};

struct MintConfig {
    std::vector<int> layers{7};
    MintTrainOptions options;
    double threshold = 0.5;
};

enum class SweepAxis { none, epochs, layers, classes, architectures };

inline std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::none: return "none";
        case SweepAxis::epochs: return "epochs";
        case SweepAxis::layers: return "layers";
        case SweepAxis::classes: return "classes";
        case SweepAxis::architectures: return "architectures";
    }
    return "none";
}

inline SweepAxis parse_sweep_axis(const std::string& text) {
    for (auto a : {SweepAxis::none, SweepAxis::epochs, SweepAxis::layers, SweepAxis::classes, SweepAxis::architectures}) {
        if (to_string(a) == text) return a;
    }
    throw ConfigurationError("unknown sweep axis '" + text + "'");
}

struct SweepConfig {
    SweepAxis axis = SweepAxis::none;
    std::vector<int> values;                  // epochs or layers
    std::vector<std::string> architectures;  // architectures axis
};

struct ExperimentConfig {
    CorpusConfig corpus;
    SplitConfig split;
    AuditedConfig audited;
    MintConfig mint;
    SweepConfig sweep;
    std::vector<BaselineMethod> baselines{BaselineMethod::yeom_loss, BaselineMethod::salem_confidence,
                                          BaselineMethod::song_mentropy};
    fs::path output_dir = "mint-out";
    bool plots = false;

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    /// Digest of every field that affects results (output_dir and plots excluded).
    std::string hash() const {
        auto j = to_json();
        j.erase("output_dir");
        j.erase("plots");
        return sha256_hex(j.dump()).substr(0, 16);
    }

    fs::path data_root() const {
        if (!corpus.root.empty()) return corpus.root;
        if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
        return {};
    }

    int num_classes() const {
        switch (parse_corpus_name(corpus.name)) {
            case CorpusName::synthetic: return corpus.num_classes;
            case CorpusName::cifar10: return 10;
            case CorpusName::cifar100: return 100;
            case CorpusName::gtsrb: return 43;
        }
        return corpus.num_classes;
    }

    void validate() const;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ConfigurationError(where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw ConfigurationError("unknown key '" + key + "' in " + where);
        }
    }
}

inline int parse_layer(const nlohmann::json& v) {
    if (v.is_string()) {
        if (v.get<std::string>() == "penultimate") return kPenultimateLayer;
        throw ConfigurationError("layer must be an integer or \"penultimate\"");
    }
    return v.get<int>();
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        detail::reject_unknown(j, {"corpus", "split", "audited", "mint", "sweep", "baselines", "output_dir", "plots"},
                               "config");
        if (j.contains("corpus")) {
            const auto& k = j["corpus"];
            detail::reject_unknown(
                k, {"name", "root", "num_classes", "per_class", "seed", "synthetic", "subset_per_class"}, "corpus");
            c.corpus.name = k.value("name", c.corpus.name);
            c.corpus.root = k.value("root", c.corpus.root);
            c.corpus.num_classes = k.value("num_classes", c.corpus.num_classes);
            c.corpus.per_class = k.value("per_class", c.corpus.per_class);
            c.corpus.seed = k.value("seed", c.corpus.seed);
            c.corpus.subset_per_class = k.value("subset_per_class", c.corpus.subset_per_class);
            if (k.contains("synthetic")) {
                const auto& s = k["synthetic"];
                detail::reject_unknown(s, {"signal", "latent_noise", "noise", "brightness_jitter", "latent_dims"},
                                       "corpus.synthetic");
                auto& p = c.corpus.synthetic;
                p.signal = s.value("signal", p.signal);
                p.latent_noise = s.value("latent_noise", p.latent_noise);
                p.noise = s.value("noise", p.noise);
                p.brightness_jitter = s.value("brightness_jitter", p.brightness_jitter);
                p.latent_dims = s.value("latent_dims", p.latent_dims);
            }
        }
        if (j.contains("split")) {
            detail::reject_unknown(j["split"], {"fraction", "seed"}, "split");
            c.split.fraction = j["split"].value("fraction", c.split.fraction);
            c.split.seed = j["split"].value("seed", c.split.seed);
        }
        if (j.contains("audited")) {
            const auto& a = j["audited"];
            detail::reject_unknown(a, {"architecture", "epochs", "batch_size", "seed", "learning_rate"}, "audited");
            c.audited.architecture = a.value("architecture", c.audited.architecture);
            c.audited.epochs = a.value("epochs", c.audited.epochs);
            c.audited.batch_size = a.value("batch_size", c.audited.batch_size);
            c.audited.seed = a.value("seed", c.audited.seed);
            c.audited.learning_rate = a.value("learning_rate", c.audited.learning_rate);
        }
        if (j.contains("mint")) {
            const auto& m = j["mint"];
            detail::reject_unknown(m,
                                   {"layer", "layer_index", "layers", "epochs", "batch_size", "seed", "learning_rate",
                                    "eval_fraction", "conv1_filters", "kernel_size", "threshold"},
                                   "mint");
            if (m.contains("layers")) {
                c.mint.layers.clear();
                for (const auto& v : m["layers"]) c.mint.layers.push_back(detail::parse_layer(v));
            } else if (m.contains("layer") || m.contains("layer_index")) {
                c.mint.layers = {detail::parse_layer(m.contains("layer") ? m["layer"] : m["layer_index"])};
            }
            auto& o = c.mint.options;
            o.epochs = m.value("epochs", o.epochs);
            o.batch_size = m.value("batch_size", o.batch_size);
            o.seed = m.value("seed", o.seed);
            o.learning_rate = m.value("learning_rate", o.learning_rate);
            o.eval_fraction = m.value("eval_fraction", o.eval_fraction);
            o.conv1_filters = m.value("conv1_filters", o.conv1_filters);
            o.kernel_size = m.value("kernel_size", o.kernel_size);
            c.mint.threshold = m.value("threshold", c.mint.threshold);
        }
        if (j.contains("sweep")) {
            const auto& s = j["sweep"];
            detail::reject_unknown(s, {"axis", "values"}, "sweep");
            c.sweep.axis = parse_sweep_axis(s.value("axis", std::string("none")));
            if (s.contains("values")) {
                for (const auto& v : s["values"]) {
                    if (c.sweep.axis == SweepAxis::architectures) {
                        c.sweep.architectures.push_back(v.get<std::string>());
                    } else {
                        c.sweep.values.push_back(v.get<int>());
                    }
                }
            }
        }
        if (j.contains("baselines")) {
            c.baselines.clear();
            for (const auto& b : j["baselines"]) c.baselines.push_back(parse_baseline(b.get<std::string>()));
        }
        c.output_dir = j.value("output_dir", c.output_dir.string());
        c.plots = j.value("plots", c.plots);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError(std::string("invalid config: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (int l : mint.layers) layers.push_back(l == kPenultimateLayer ? nlohmann::json("penultimate") : nlohmann::json(l));
    nlohmann::json values = nlohmann::json::array();
    if (sweep.axis == SweepAxis::architectures) {
        for (const auto& a : sweep.architectures) values.push_back(a);
    } else {
        for (int v : sweep.values) values.push_back(v);
    }
    nlohmann::json methods = nlohmann::json::array();
    for (auto b : baselines) methods.push_back(to_string(b));
    auto mint_json = mint.options.to_json();
    mint_json["layers"] = layers;
    mint_json["threshold"] = mint.threshold;
    return {{"corpus", corpus.to_json()},
            {"split", {{"fraction", split.fraction}, {"seed", split.seed}}},
            {"audited",
             {{"architecture", audited.architecture},
              {"epochs", audited.epochs},
              {"batch_size", audited.batch_size},
              {"seed", audited.seed},
              {"learning_rate", audited.learning_rate}}},
            {"mint", mint_json},
            {"sweep", {{"axis", to_string(sweep.axis)}, {"values", values}}},
            {"baselines", methods},
            {"output_dir", output_dir.string()},
            {"plots", plots}};
}

inline void ExperimentConfig::validate() const {
    const CorpusName name = parse_corpus_name(corpus.name);
    if (name == CorpusName::synthetic) {
        if (corpus.num_classes < 2) throw ConfigurationError("corpus.num_classes must be >= 2");
        if (corpus.per_class < 2) throw ConfigurationError("corpus.per_class must be >= 2");
        if (corpus.synthetic.latent_dims < 1) throw ConfigurationError("corpus.synthetic.latent_dims must be >= 1");
    } else if (data_root().empty()) {
        throw ConfigurationError("corpus '" + corpus.name + "' needs corpus.root or " + kDataRootEnv);
    }
    if (!(split.fraction > 0.0 && split.fraction < 1.0)) throw ConfigurationError("split.fraction must lie in (0, 1)");
    if (audited.epochs < 1 || audited.batch_size < 1) {
        throw ConfigurationError("audited.epochs and audited.batch_size must be >= 1");
    }
    if (!(audited.learning_rate > 0.0f)) throw ConfigurationError("audited.learning_rate must be positive");
    const auto& o = mint.options;
    if (o.epochs < 1 || o.batch_size < 2) throw ConfigurationError("mint.epochs must be >= 1 and mint.batch_size >= 2");
    if (!(o.eval_fraction > 0.0 && o.eval_fraction < 1.0)) throw ConfigurationError("mint.eval_fraction must lie in (0, 1)");
    if (o.conv1_filters < 1 || o.kernel_size < 1) throw ConfigurationError("mint.conv1_filters and kernel_size must be >= 1");
    if (mint.layers.empty()) throw ConfigurationError("mint.layers must not be empty");

    std::vector<std::string> archs{audited.architecture};
    if (sweep.axis == SweepAxis::architectures) archs = sweep.architectures;
    for (const auto& a : archs) {
        Architecture arch;
        try {
            arch = parse_architecture(a);
        } catch (const Error& e) {
            throw ConfigurationError(e.what());
        }
        const auto spec = make_model_spec(arch, num_classes());
        std::vector<int> layers = mint.layers;
        if (sweep.axis == SweepAxis::layers) layers.insert(layers.end(), sweep.values.begin(), sweep.values.end());
        for (int l : layers) {
            if (l == kPenultimateLayer) continue;
            try {
                (void)spec.layer(l);
            } catch (const CatalogError& e) {
                throw ConfigurationError(e.what());
            }
        }
    }
    switch (sweep.axis) {
        case SweepAxis::epochs:
            if (sweep.values.empty()) throw ConfigurationError("epoch sweep needs a nonempty value list");
            for (int e : sweep.values) {
                if (e < 1) throw ConfigurationError("sweep epochs must be >= 1");
            }
            break;
        case SweepAxis::layers:
            if (sweep.values.empty()) throw ConfigurationError("layer sweep needs a nonempty value list");
            break;
        case SweepAxis::architectures:
            if (sweep.architectures.empty()) throw ConfigurationError("architecture sweep needs a nonempty value list");
            break;
        case SweepAxis::none:
        case SweepAxis::classes: break;
    }
}

inline ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigurationError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigurationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Stage pipeline

/// Outcome of one MINT ensemble over one embedding set.
struct MintRun {
    EnsembleTraining training;
    std::vector<ScoredSample> eval_samples;
    std::vector<MembershipScore> eval_scores;  // same order as eval_samples
    MintAuditReport report;
};

using Logger = std::function<void(const std::string&)>;

namespace detail {

template <class F>
auto run_stage(const std::string& stage, const fs::path& artifact, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const ConfigurationError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, artifact.string(), e.what());
    }
}

/// Runs `write(tmp)` into a scratch directory and renames it to `dir`, so an
/// interrupted stage never leaves a directory that looks complete.
inline void publish_dir(const fs::path& dir, const std::function<void(const fs::path&)>& write) {
    const fs::path tmp = dir.string() + ".partial";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    write(tmp);
    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

inline std::string key_of(const nlohmann::json& j) { return sha256_hex(j.dump()).substr(0, 16); }

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw IntegrityError(path.string() + " is not valid JSON: " + e.what());
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace detail

/// Executes corpus -> split -> audited training -> extraction -> MINT training
/// for one config. Every stage is cached under output_dir/cache by a digest of
/// its inputs, so repeated or overlapping runs reuse finished work.
class Pipeline {
public:
    explicit Pipeline(ExperimentConfig config, Logger log = {}) : config_(std::move(config)), log_(std::move(log)) {
        config_.validate();
    }

    const ExperimentConfig& config() const noexcept { return config_; }
    fs::path cache_dir() const { return config_.output_dir / "cache"; }

    const Corpus& corpus() {
        if (!corpus_) {
            const auto& c = config_.corpus;
            corpus_ = detail::run_stage("ingest", config_.data_root(), [&] {
                const CorpusName name = parse_corpus_name(c.name);
                Corpus loaded = name == CorpusName::synthetic
                                    ? make_synthetic_corpus(c.num_classes, c.per_class, c.seed, c.synthetic)
                                    : load_corpus(name, config_.data_root());
                if (c.subset_per_class > 0) loaded = loaded.subset_per_class(c.subset_per_class);
                return loaded;
            });
            note("corpus " + config_.corpus.name + ": " + std::to_string(corpus_->size()) + " images, " +
                 std::to_string(corpus_->num_classes()) + " classes");
        }
        return *corpus_;
    }

    const DatasetSplit& split() {
        if (split_) return *split_;
        const std::string key =
            detail::key_of({{"corpus", config_.corpus.to_json()},
                            {"fraction", config_.split.fraction},
                            {"seed", config_.split.seed}});
        const fs::path path = cache_dir() / "split" / (key + ".json");
        split_ = detail::run_stage("split", path, [&] {
            if (fs::exists(path)) return load_split(path);
            DatasetSplit s = make_split(corpus(), config_.split.fraction, config_.split.seed);
            fs::create_directories(path.parent_path());
            save_split(s, path);
            return s;
        });
        note("split " + split_->id() + ": " + std::to_string(split_->members.size()) + " members, " +
             std::to_string(split_->externals.size()) + " externals");
        return *split_;
    }

    fs::path checkpoint_dir(Architecture arch, int epochs) {
        const auto& a = config_.audited;
        return cache_dir() / "audited" /
               detail::key_of({{"split", split().id()},
                               {"architecture", to_string(arch)},
                               {"epochs", epochs},
                               {"batch_size", a.batch_size},
                               {"seed", a.seed},
                               {"learning_rate", a.learning_rate}});
    }

    /// Makes sure a checkpoint exists for every epoch count in `epochs`. Missing
    /// ones come from a single training run with snapshots.
    void ensure_checkpoints(Architecture arch, std::vector<int> epochs) {
        std::sort(epochs.begin(), epochs.end());
        epochs.erase(std::unique(epochs.begin(), epochs.end()), epochs.end());
        std::vector<int> missing;
        for (int e : epochs) {
            if (!fs::exists(checkpoint_dir(arch, e) / "metadata.json")) missing.push_back(e);
        }
        if (missing.empty()) return;
        const fs::path target = checkpoint_dir(arch, missing.back());
        detail::run_stage("train-audited", target, [&] {
            const auto& a = config_.audited;
            const auto& sp = split();
            AuditedModel model(arch, corpus().num_classes(), a.seed);
            TrainOptions o;
            o.epochs = missing.back();
            o.batch_size = a.batch_size;
            o.train_seed = a.seed;
            o.learning_rate = a.learning_rate;
            o.snapshot_epochs.assign(missing.begin(), missing.end() - 1);
            o.on_batch = [&](std::span<const SampleId> batch) {
                for (auto id : batch) {
                    if (!sp.is_member(id)) {
                        throw ProtocolError("audited training touched non-member sample " + std::to_string(id.value));
                    }
                }
            };
            o.on_epoch = [&](int epoch, double loss) {
                if (epoch == 1 || epoch % 10 == 0 || epoch == o.epochs) {
                    std::ostringstream msg;
                    msg << to_string(arch) << " epoch " << epoch << '/' << o.epochs << " loss " << loss;
                    note(msg.str());
                }
            };
            for (auto& snap : train_with_snapshots(model, corpus(), sp, o)) {
                const int e = snap.checkpoint.epochs_trained;
                detail::publish_dir(checkpoint_dir(arch, e), [&](const fs::path& dir) {
                    save_checkpoint(snap.checkpoint, sp, dir);
                    detail::write_json(dir / "train_report.json", snap.report.to_json());
                });
                note("checkpoint " + snap.checkpoint.id() + " at epoch " + std::to_string(e) + ": train acc " +
                     std::to_string(snap.report.train_accuracy) + ", test acc " +
                     std::to_string(snap.report.test_accuracy));
            }
            return 0;
        });
    }

    AuditedModelCheckpoint checkpoint(Architecture arch, int epochs) {
        ensure_checkpoints(arch, {epochs});
        const fs::path dir = checkpoint_dir(arch, epochs);
        return detail::run_stage("train-audited", dir, [&] { return load_checkpoint(dir); });
    }

    AuditedModelCheckpoint checkpoint() { return checkpoint(audited_architecture(), config_.audited.epochs); }

    TrainReport train_report(Architecture arch, int epochs) {
        ensure_checkpoints(arch, {epochs});
        const auto j = detail::read_json(checkpoint_dir(arch, epochs) / "train_report.json");
        TrainReport r;
        r.train_accuracy = j.at("train_accuracy").get<double>();
        r.test_accuracy = j.at("test_accuracy").get<double>();
        r.per_epoch_loss = j.at("per_epoch_loss").get<std::vector<double>>();
        return r;
    }

    Architecture audited_architecture() const { return parse_architecture(config_.audited.architecture); }

    int resolve_layer(const AuditedModelCheckpoint& ckpt, int layer) const {
        return layer == kPenultimateLayer ? ckpt.spec.penultimate_layer() : layer;
    }

    fs::path embeddings_dir(const AuditedModelCheckpoint& ckpt, int layer) {
        return cache_dir() / "embeddings" /
               detail::key_of({{"checkpoint", ckpt.id()}, {"layer", resolve_layer(ckpt, layer)}});
    }

    EmbeddingSet embeddings(const AuditedModelCheckpoint& ckpt, int layer) {
        layer = resolve_layer(ckpt, layer);
        const fs::path dir = embeddings_dir(ckpt, layer);
        return detail::run_stage("extract", dir, [&] {
            const ExpectedProvenance expect{layer, ckpt.id(), split().id()};
            if (fs::exists(dir / "embeddings.json")) return load_embeddings(dir, expect);
            auto model = ckpt.materialize();
            EmbeddingSet set = extract_split(model, ckpt, corpus(), split(), layer);
            detail::publish_dir(dir, [&](const fs::path& tmp) { persist_embeddings(set, tmp); });
            note("extracted layer " + std::to_string(layer) + " (" + std::to_string(set.records.front().vector.size()) +
                 " values) from checkpoint " + ckpt.id());
            return set;
        });
    }

    fs::path mint_dir(const EmbeddingSet& set) {
        return cache_dir() / "mint" /
               detail::key_of({{"checkpoint", set.provenance.checkpoint_id},
                               {"layer", set.provenance.layer_index},
                               {"split", set.provenance.split_ref},
                               {"options", config_.mint.options.to_json()}});
    }

    MintRun mint(const EmbeddingSet& set) {
        const fs::path dir = mint_dir(set);
        return detail::run_stage("train-mint", dir, [&] {
            MintRun run;
            if (fs::exists(dir / "manifest.json")) {
                run.training.ensemble = load_ensemble(dir);
                if (run.training.ensemble.layer_index != set.provenance.layer_index ||
                    run.training.ensemble.checkpoint_id != set.provenance.checkpoint_id) {
                    throw IntegrityError("cached MINT ensemble does not match its embeddings");
                }
                const auto sets = detail::read_json(dir / "sets.json");
                for (const auto& [c, s] : sets.items()) {
                    run.training.sets[std::stoi(c)] = {s.at("train").get<std::vector<std::size_t>>(),
                                                       s.at("eval").get<std::vector<std::size_t>>()};
                }
            } else {
                note("training MINT ensemble on layer " + std::to_string(set.provenance.layer_index));
                run.training = train_ensemble(set, config_.mint.options);
                detail::publish_dir(dir, [&](const fs::path& tmp) {
                    save_ensemble(run.training.ensemble, tmp);
                    nlohmann::json sets = nlohmann::json::object();
                    for (const auto& [c, s] : run.training.sets) {
                        sets[std::to_string(c)] = {{"train", s.train}, {"eval", s.eval}};
                    }
                    detail::write_json(tmp / "sets.json", sets);
                });
            }
            check_disjoint(run.training, set.records);
            evaluate(run, set);
            return run;
        });
    }

    /// Full audit of one (architecture, epochs, layer) point.
    MintRun audit_point(Architecture arch, int epochs, int layer) {
        const auto ckpt = checkpoint(arch, epochs);
        const auto set = embeddings(ckpt, layer);
        return mint(set);
    }

private:
    static void check_disjoint(const EnsembleTraining& t, std::span<const EmbeddingRecord> records) {
        for (const auto& [c, s] : t.sets) {
            std::set<std::uint32_t> train;
            for (auto i : s.train) train.insert(records[i].sample_id.value);
            for (auto i : s.eval) {
                if (train.count(records[i].sample_id.value)) {
                    throw ProtocolError("sample " + std::to_string(records[i].sample_id.value) +
                                        " is in both MINT-train and MINT-eval of class " + std::to_string(c));
                }
            }
        }
    }

    void evaluate(MintRun& run, const EmbeddingSet& set) {
        auto& ens = run.training.ensemble;
        for (const auto& [c, s] : run.training.sets) {
            std::vector<EmbeddingRecord> eval;
            for (auto i : s.eval) eval.push_back(set.records[i]);
            const auto scores = score(ens, eval, config_.mint.threshold);
            for (std::size_t k = 0; k < scores.size(); ++k) {
                run.eval_scores.push_back(scores[k]);
                run.eval_samples.push_back({c, scores[k].score, eval[k].membership});
            }
        }
        run.report = build_report(run.eval_samples, config_.mint.threshold);
        run.report.layer_index = set.provenance.layer_index;
        run.report.checkpoint_id = set.provenance.checkpoint_id;
        run.report.config_hash = config_.hash();
    }

    void note(const std::string& msg) const {
        if (log_) log_(msg);
    }

    ExperimentConfig config_;
    Logger log_;
    std::optional<Corpus> corpus_;
    std::optional<DatasetSplit> split_;
};

// ---------------------------------------------------------------------------
// Experiments

struct AuditResult {
    MintAuditReport report;
    nlohmann::json document;  // what report.json holds
    fs::path dir;
};

namespace detail {

inline std::string format_number(double v) {
    if (!std::isfinite(v)) return "nan";
    std::ostringstream out;
    out << std::setprecision(10) << v;
    return out.str();
}

/// Writes report.json, roc.csv, per-class roc CSVs and scores.csv for one audit point.
inline nlohmann::json write_audit_outputs(Pipeline& p, const MintRun& run, Architecture arch, int epochs,
                                          const fs::path& dir) {
    fs::create_directories(dir);
    const auto train = p.train_report(arch, epochs);
    nlohmann::json doc = run.report.to_json();
    doc["audited"] = {{"architecture", to_string(arch)},
                      {"epochs", epochs},
                      {"train_accuracy", train.train_accuracy},
                      {"test_accuracy", train.test_accuracy}};
    doc["split_ref"] = p.split().id();
    write_json(dir / "report.json", doc);

    const RocCurve pooled = pooled_roc(run.eval_samples);
    write_roc_csv(dir / "roc.csv", pooled);
    std::vector<std::pair<std::string, RocCurve>> curves{{"pooled", pooled}};
    std::map<int, std::vector<ScoredSample>> by_class;
    for (const auto& s : run.eval_samples) by_class[s.class_index].push_back(s);
    for (const auto& [c, samples] : by_class) {
        const RocCurve roc = pooled_roc(samples);
        write_roc_csv(dir / ("roc_class_" + std::to_string(c) + ".csv"), roc);
        if (by_class.size() <= 10) curves.emplace_back("class " + std::to_string(c), roc);
    }
    fs::remove(dir / "scores.csv");
    append_scores_csv(dir / "scores.csv", run.eval_scores, "mint");
    if (p.config().plots) write_roc_svg(dir / "roc.svg", curves);
    return doc;
}

}  // namespace detail

/// corpus -> split -> train/load -> extract -> MINT -> evaluate for the
/// configured architecture, epoch count and first configured layer. Outputs go
/// to output_dir/audit.
inline AuditResult run_audit(const ExperimentConfig& config, const Logger& log = {}) {
    Pipeline p(config, log);
    const Architecture arch = p.audited_architecture();
    const MintRun run = p.audit_point(arch, config.audited.epochs, config.mint.layers.front());
    AuditResult result{run.report, {}, config.output_dir / "audit"};
    result.document = detail::run_stage("report", result.dir, [&] {
        return detail::write_audit_outputs(p, run, arch, config.audited.epochs, result.dir);
    });
    return result;
}

struct SweepPoint {
    std::string axis_value;
    std::optional<MintAuditReport> report;
    std::string error;  // set when the point failed
};

struct SweepResult {
    SweepAxis axis = SweepAxis::none;
    std::vector<SweepPoint> points;
    fs::path dir;
};

/// One audit per axis value. Writes summary.csv
/// (axis_value,pooled_auc,mean_class_auc,balanced_acc,status) plus a report
/// and ROC CSVs per point under output_dir/sweep_<axis>. A failing point is
/// recorded in the summary and the sweep moves on.
inline SweepResult run_sweep(const ExperimentConfig& config, const Logger& log = {}) {
    if (config.sweep.axis == SweepAxis::none) throw ConfigurationError("sweep.axis is not set");
    Pipeline p(config, log);
    SweepResult result{config.sweep.axis, {}, config.output_dir / ("sweep_" + to_string(config.sweep.axis))};
    fs::create_directories(result.dir);
    const Architecture arch = p.audited_architecture();
    const int layer = config.mint.layers.front();

    auto attempt = [&](const std::string& value, const std::function<MintAuditReport()>& body) {
        SweepPoint point{value, std::nullopt, {}};
        try {
            point.report = body();
        } catch (const ConfigurationError&) {
            throw;
        } catch (const std::exception& e) {
            point.error = e.what();
            if (log) log("sweep point " + value + " failed: " + point.error);
        }
        result.points.push_back(std::move(point));
    };
    auto audit_into = [&](Architecture a, int epochs, int l, const fs::path& dir) {
        const MintRun run = p.audit_point(a, epochs, l);
        detail::run_stage("report", dir, [&] { return detail::write_audit_outputs(p, run, a, epochs, dir); });
        return run.report;
    };

    switch (config.sweep.axis) {
        case SweepAxis::epochs: {
            try {
                p.ensure_checkpoints(arch, config.sweep.values);
            } catch (const StageError& e) {
                // Points whose checkpoint did get written still run below.
                if (log) log(std::string("epoch sweep training stopped early: ") + e.what());
            }
            for (int e : config.sweep.values) {
                attempt(std::to_string(e),
                        [&] { return audit_into(arch, e, layer, result.dir / ("epochs_" + std::to_string(e))); });
            }
            break;
        }
        case SweepAxis::layers:
            for (int l : config.sweep.values) {
                attempt(std::to_string(l), [&] {
                    return audit_into(arch, config.audited.epochs, l, result.dir / ("layer_" + std::to_string(l)));
                });
            }
            break;
        case SweepAxis::architectures:
            for (const auto& name : config.sweep.architectures) {
                attempt(name, [&] {
                    return audit_into(parse_architecture(name), config.audited.epochs, kPenultimateLayer,
                                      result.dir / name);
                });
            }
            break;
        case SweepAxis::classes: {
            MintAuditReport full;
            const fs::path dir = result.dir / "all";
            try {
                full = audit_into(arch, config.audited.epochs, layer, dir);
            } catch (const ConfigurationError&) {
                throw;
            } catch (const std::exception& e) {
                result.points.push_back({"all", std::nullopt, e.what()});
                break;
            }
            for (const auto& [c, m] : full.per_class) {
                MintAuditReport one = full;
                one.per_class = {{c, m}};
                one.aggregate = m;
                one.mean_class_auc = m.auc;
                fs::copy_file(dir / ("roc_class_" + std::to_string(c) + ".csv"),
                              result.dir / ("roc_class_" + std::to_string(c) + ".csv"),
                              fs::copy_options::overwrite_existing);
                result.points.push_back({std::to_string(c), one, {}});
            }
            break;
        }
        case SweepAxis::none: break;
    }

    std::ofstream out(result.dir / "summary.csv");
    if (!out) throw StageError("report", (result.dir / "summary.csv").string(), "cannot write summary");
    out << "axis_value,pooled_auc,mean_class_auc,balanced_acc,status\n";
    for (const auto& pt : result.points) {
        if (pt.report) {
            out << pt.axis_value << ',' << detail::format_number(pt.report->aggregate.auc) << ','
                << detail::format_number(pt.report->mean_class_auc) << ','
                << detail::format_number(pt.report->aggregate.balanced_accuracy) << ",ok\n";
        } else {
            std::string reason = pt.error;
            std::replace(reason.begin(), reason.end(), ',', ';');
            std::replace(reason.begin(), reason.end(), '\n', ' ');
            out << pt.axis_value << ",nan,nan,nan,failed: " << reason << '\n';
        }
    }
    return result;
}

struct ComparisonRow {
    std::string method;
    double auc = 0.0;
    double balanced_accuracy = 0.0;  // at the best threshold
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
    std::size_t n_members = 0;
    std::size_t n_externals = 0;

    nlohmann::json to_json() const {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& row : rows) {
            r.push_back({{"method", row.method}, {"auc", row.auc}, {"balanced_accuracy", row.balanced_accuracy}});
        }
        return {{"rows", r}, {"n_members", n_members}, {"n_externals", n_externals}};
    }

    const ComparisonRow& row(const std::string& method) const {
        for (const auto& r : rows) {
            if (r.method == method) return r;
        }
        throw ArgumentError("no comparison row for " + method);
    }
};

/// Scores the MINT-eval samples of the configured checkpoint and layer with
/// every configured baseline and with MINT, on the identical samples.
/// Balanced accuracy is taken at each method's best threshold, since the
/// baseline statistics have no natural decision threshold. Writes
/// output_dir/baselines/{comparison.csv,comparison.json,scores.csv}.
inline ComparisonTable run_baseline_comparison(const ExperimentConfig& config, const Logger& log = {}) {
    Pipeline p(config, log);
    const Architecture arch = p.audited_architecture();
    const auto ckpt = p.checkpoint(arch, config.audited.epochs);
    const auto set = p.embeddings(ckpt, config.mint.layers.front());
    const MintRun run = p.mint(set);
    const fs::path dir = config.output_dir / "baselines";

    return detail::run_stage("baselines", dir, [&] {
        std::vector<SampleId> ids;
        std::vector<int> labels, members;
        for (const auto& s : run.eval_scores) ids.push_back(s.sample_id);
        for (auto id : ids) {
            labels.push_back(p.corpus().label_of(id));
            members.push_back(p.split().is_member(id) ? 1 : 0);
        }
        auto model = ckpt.materialize();
        const Tensor probs = predict_ids(model, p.corpus(), ids);

        ComparisonTable table;
        table.n_members = static_cast<std::size_t>(std::count(members.begin(), members.end(), 1));
        table.n_externals = members.size() - table.n_members;
        fs::create_directories(dir);
        fs::remove(dir / "scores.csv");
        for (auto method : config.baselines) {
            const auto scored = baseline_score(method, probs, labels, ids);
            std::vector<double> values;
            std::vector<MembershipScore> rows;
            for (std::size_t i = 0; i < scored.size(); ++i) {
                values.push_back(scored[i].membership_score);
                rows.push_back({ids[i], labels[i], scored[i].membership_score, false});
            }
            const auto best = best_balanced_accuracy(values, members);
            for (auto& r : rows) r.predicted_member = r.score >= best.threshold;
            append_scores_csv(dir / "scores.csv", rows, to_string(method));
            table.rows.push_back({to_string(method), roc_auc(values, members).auc, best.value});
        }
        std::vector<double> mint_values;
        for (const auto& s : run.eval_scores) mint_values.push_back(s.score);
        append_scores_csv(dir / "scores.csv", run.eval_scores, "mint");
        table.rows.push_back(
            {"mint", roc_auc(mint_values, members).auc, best_balanced_accuracy(mint_values, members).value});

        std::ofstream csv(dir / "comparison.csv");
        csv << "method,auc,balanced_accuracy\n";
        for (const auto& r : table.rows) {
            csv << r.method << ',' << detail::format_number(r.auc) << ',' << detail::format_number(r.balanced_accuracy)
                << '\n';
        }
        auto doc = table.to_json();
        doc["checkpoint_id"] = ckpt.id();
        doc["layer_index"] = set.provenance.layer_index;
        doc["config_hash"] = config.hash();
        detail::write_json(dir / "comparison.json", doc);
        return table;
    });
}

}  // namespace mint

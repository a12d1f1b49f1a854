#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mint/classifier.hpp"
#include "mint/corpus.hpp"
#include "mint/hash.hpp"
#include "mint/split.hpp"

namespace mint {

/// Model Outcome y of one sample: the flattened activations of one layer.
struct EmbeddingRecord {
    SampleId sample_id;
    int layer_index = 0;
    std::vector<float> vector;
    bool membership = false;
    int class_label = 0;
};

struct EmbeddingProvenance {
    std::string checkpoint_id;
    int layer_index = 0;
    std::string split_ref;
};

struct EmbeddingSet {
    EmbeddingProvenance provenance;
    std::vector<EmbeddingRecord> records;
};

/// Runs `ids` through the model in inference mode and taps `layer_index`.
/// Convolutional maps are flattened channel-major (C, then H, then W).
inline std::vector<EmbeddingRecord> extract(AuditedModel& model, const Corpus& corpus, std::span<const SampleId> ids,
                                            int layer_index, const DatasetSplit& split, int batch = 64) {
    const std::size_t len = model.spec().layer(layer_index).flat_size();
    std::vector<EmbeddingRecord> out;
    out.reserve(ids.size());
    for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(batch)) {
        const auto chunk = ids.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(batch), ids.size() - start));
        const Tensor acts = model.activations(corpus.batch(chunk), layer_index);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const bool member = split.is_member(chunk[i]);
            if (!member && !split.is_external(chunk[i])) {
                throw ProtocolError("sample " + std::to_string(chunk[i].value) + " is in neither D nor E of split " +
                                    split.id());
            }
            const auto row = acts.row(static_cast<int>(i));
            EmbeddingRecord rec{chunk[i], layer_index, {row.begin(), row.end()}, member, corpus.label_of(chunk[i])};
            if (rec.vector.size() != len) throw ConsistencyError("activation length differs from the layer catalog");
            for (float v : rec.vector) {
                if (!std::isfinite(v)) {
                    throw ConsistencyError("non-finite activation for sample " + std::to_string(chunk[i].value));
                }
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

/// Extracts every sample of the split (members then externals, each sorted).
inline EmbeddingSet extract_split(AuditedModel& model, const AuditedModelCheckpoint& ckpt, const Corpus& corpus,
                                  const DatasetSplit& split, int layer_index) {
    std::vector<SampleId> ids = split.members;
    ids.insert(ids.end(), split.externals.begin(), split.externals.end());
    return {{ckpt.id(), layer_index, split.id()}, extract(model, corpus, ids, layer_index, split)};
}

namespace detail {

inline std::size_t check_homogeneous(const EmbeddingSet& set) {
    if (set.records.empty()) return 0;
    const std::size_t len = set.records.front().vector.size();
    for (const auto& r : set.records) {
        if (r.layer_index != set.provenance.layer_index) {
            throw ConsistencyError("embedding archive mixes layer " + std::to_string(r.layer_index) + " with layer " +
                                   std::to_string(set.provenance.layer_index));
        }
        if (r.vector.size() != len) throw ConsistencyError("embedding archive mixes vector lengths");
    }
    return len;
}

}  // namespace detail

/// Writes `dir/embeddings.f32` (row-major float32, count x vector_len) and the
/// JSON sidecar `dir/embeddings.json`.
inline void persist_embeddings(const EmbeddingSet& set, const std::filesystem::path& dir) {
    const std::size_t len = detail::check_homogeneous(set);
    std::filesystem::create_directories(dir);
    std::vector<float> payload;
    payload.reserve(len * set.records.size());
    nlohmann::json ids = nlohmann::json::array(), classes = nlohmann::json::array(), members = nlohmann::json::array();
    for (const auto& r : set.records) {
        payload.insert(payload.end(), r.vector.begin(), r.vector.end());
        ids.push_back(r.sample_id.value);
        classes.push_back(r.class_label);
        members.push_back(r.membership);
    }
    {
        std::ofstream out(dir / "embeddings.f32", std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
        if (!out) throw IngestionError("short write to " + (dir / "embeddings.f32").string());
    }
    const nlohmann::json sidecar{{"checkpoint_id", set.provenance.checkpoint_id},
                                 {"layer_index", set.provenance.layer_index},
                                 {"vector_len", len},
                                 {"count", set.records.size()},
                                 {"split_ref", set.provenance.split_ref},
                                 {"sha256", sha256_hex(std::span<const float>(payload))},
                                 {"sample_ids", ids},
                                 {"class_labels", classes},
                                 {"membership", members}};
    std::ofstream(dir / "embeddings.json") << sidecar.dump() << '\n';
}

/// Fields an audit expects the archive to carry; unset fields are not checked.
struct ExpectedProvenance {
    std::optional<int> layer_index;
    std::optional<std::string> checkpoint_id;
    std::optional<std::string> split_ref;
};

inline EmbeddingSet load_embeddings(const std::filesystem::path& dir, const ExpectedProvenance& expect = {}) {
    std::ifstream side(dir / "embeddings.json");
    if (!side) throw IngestionError("missing embedding sidecar " + (dir / "embeddings.json").string());
    EmbeddingSet set;
    std::size_t len = 0, count = 0;
    std::string digest;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(side);
        set.provenance = {j.at("checkpoint_id").get<std::string>(), j.at("layer_index").get<int>(),
                          j.at("split_ref").get<std::string>()};
        len = j.at("vector_len").get<std::size_t>();
        count = j.at("count").get<std::size_t>();
        digest = j.at("sha256").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("malformed embedding sidecar in " + dir.string() + ": " + e.what());
    }
    if (expect.layer_index && *expect.layer_index != set.provenance.layer_index) {
        throw IntegrityError("embedding archive holds layer " + std::to_string(set.provenance.layer_index) +
                             " but layer " + std::to_string(*expect.layer_index) + " was requested");
    }
    if (expect.checkpoint_id && *expect.checkpoint_id != set.provenance.checkpoint_id) {
        throw IntegrityError("embedding archive was extracted from checkpoint " + set.provenance.checkpoint_id +
                             ", expected " + *expect.checkpoint_id);
    }
    if (expect.split_ref && *expect.split_ref != set.provenance.split_ref) {
        throw IntegrityError("embedding archive split_ref " + set.provenance.split_ref + " does not match " +
                             *expect.split_ref);
    }

    std::vector<float> payload(len * count);
    std::ifstream in(dir / "embeddings.f32", std::ios::binary);
    if (!in) throw IngestionError("missing embedding payload " + (dir / "embeddings.f32").string());
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(payload.size() * sizeof(float)) || in.peek() != EOF) {
        throw IntegrityError("embedding payload size disagrees with sidecar in " + dir.string());
    }
    if (sha256_hex(std::span<const float>(payload)) != digest) {
        throw IntegrityError("embedding payload checksum mismatch in " + dir.string());
    }
    const auto& ids = j.at("sample_ids");
    const auto& classes = j.at("class_labels");
    const auto& members = j.at("membership");
    if (ids.size() != count || classes.size() != count || members.size() != count) {
        throw IntegrityError("embedding sidecar row metadata length mismatch in " + dir.string());
    }
    set.records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        set.records.push_back({SampleId{ids[i].get<std::uint32_t>()}, set.provenance.layer_index,
                               std::vector<float>(payload.begin() + static_cast<std::ptrdiff_t>(i * len),
                                                  payload.begin() + static_cast<std::ptrdiff_t>((i + 1) * len)),
                               members[i].get<bool>(), classes[i].get<int>()});
    }
    return set;
}

}  // namespace mint

#include <gtest/gtest.h>

#include "mint/embeddings.hpp"

using namespace mint;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    Corpus corpus = make_synthetic_corpus(3, 12, 0);
    DatasetSplit split = make_split(corpus, 0.5, 1);
    AuditedModel model{Architecture::paper_cnn, 3, 2};
    AuditedModelCheckpoint ckpt{model.spec(), model.export_state(), 1, 32, 0, 2, split.id()};
};

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("mint_embeddings_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(Extract, VectorLengthsFollowTheCatalog) {
    Fixture f;
    for (int layer : {1, 4, 7, 8}) {
        const auto set = extract_split(f.model, f.ckpt, f.corpus, f.split, layer);
        ASSERT_EQ(set.records.size(), f.corpus.size());
        for (const auto& r : set.records) {
            EXPECT_EQ(r.vector.size(), f.model.spec().layer(layer).flat_size());
            EXPECT_EQ(r.layer_index, layer);
        }
    }
    EXPECT_EQ(extract_split(f.model, f.ckpt, f.corpus, f.split, 7).records[0].vector.size(), 128u);
    EXPECT_EQ(extract_split(f.model, f.ckpt, f.corpus, f.split, 8).records[0].vector.size(), 3u);
}

TEST(Extract, MembershipAndLabelsFollowTheManifest) {
    Fixture f;
    const auto set = extract_split(f.model, f.ckpt, f.corpus, f.split, 7);
    for (const auto& r : set.records) {
        EXPECT_EQ(r.membership, f.split.is_member(r.sample_id));
        EXPECT_EQ(r.class_label, f.corpus.label_of(r.sample_id));
    }
    EXPECT_EQ(set.provenance.split_ref, f.split.id());
    EXPECT_EQ(set.provenance.checkpoint_id, f.ckpt.id());
}

TEST(Extract, DeterministicAndReadOnly) {
    Fixture f;
    const Tensor probe = f.corpus.batch(std::span(f.corpus.ids()).first(5));
    const Tensor before = f.model.predict(probe);
    const auto params = f.model.export_state();
    const auto a = extract_split(f.model, f.ckpt, f.corpus, f.split, 3);
    const auto b = extract_split(f.model, f.ckpt, f.corpus, f.split, 3);
    for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].vector, b.records[i].vector);
    EXPECT_EQ(f.model.export_state(), params);
    EXPECT_EQ(f.model.predict(probe).data, before.data);
}

TEST(Extract, ConvMapsFlattenChannelMajor) {
    Fixture f;
    const std::vector<SampleId> ids{f.corpus.ids()[0]};
    const auto info = f.model.spec().layer(2);
    const auto rec = extract(f.model, f.corpus, ids, 2, f.split);
    const Tensor flat = f.model.activations(f.corpus.batch(ids), 2);
    ASSERT_EQ(info.output_shape.size(), 3u);
    // Entry (c, y, x) sits at c*H*W + y*W + x.
    const int h = info.output_shape[1], w = info.output_shape[2];
    EXPECT_EQ(rec[0].vector.size(), static_cast<std::size_t>(info.output_shape[0] * h * w));
    EXPECT_EQ(rec[0].vector[static_cast<std::size_t>(1 * h * w + 2 * w + 3)],
              flat.data[static_cast<std::size_t>(1 * h * w + 2 * w + 3)]);
}

TEST(Extract, OutOfRangeLayerAndForeignSamples) {
    Fixture f;
    EXPECT_THROW(extract_split(f.model, f.ckpt, f.corpus, f.split, 9), CatalogError);
    DatasetSplit partial = f.split;
    partial.externals.pop_back();
    const std::vector<SampleId> ids{f.split.externals.back()};
    EXPECT_THROW(extract(f.model, f.corpus, ids, 7, partial), ProtocolError);
}

TEST(Archive, LosslessRoundTripWithProvenance) {
    Fixture f;
    const auto set = extract_split(f.model, f.ckpt, f.corpus, f.split, 7);
    const auto dir = scratch("roundtrip");
    persist_embeddings(set, dir);
    const auto back = load_embeddings(dir, {7, f.ckpt.id(), f.split.id()});
    ASSERT_EQ(back.records.size(), set.records.size());
    for (std::size_t i = 0; i < set.records.size(); ++i) {
        EXPECT_EQ(back.records[i].sample_id, set.records[i].sample_id);
        EXPECT_EQ(back.records[i].vector, set.records[i].vector);
        EXPECT_EQ(back.records[i].membership, set.records[i].membership);
        EXPECT_EQ(back.records[i].class_label, set.records[i].class_label);
    }
    const auto side = nlohmann::json::parse(std::ifstream(dir / "embeddings.json"));
    for (const char* key : {"checkpoint_id", "layer_index", "vector_len", "count", "split_ref", "sha256"}) {
        EXPECT_TRUE(side.contains(key)) << key;
    }
    fs::remove_all(dir);
}

TEST(Archive, ThousandRecordPayloadHashMatches) {
    EmbeddingSet set{{"ckpt", 7, "split"}, {}};
    for (std::uint32_t i = 0; i < 1000; ++i) {
        std::vector<float> v(128);
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(i) * 0.001f + static_cast<float>(k);
        set.records.push_back({SampleId{i}, 7, v, i % 2 == 0, static_cast<int>(i % 10)});
    }
    const auto dir = scratch("hash");
    persist_embeddings(set, dir);
    std::vector<float> payload;
    for (const auto& r : set.records) payload.insert(payload.end(), r.vector.begin(), r.vector.end());
    const auto side = nlohmann::json::parse(std::ifstream(dir / "embeddings.json"));
    EXPECT_EQ(side["sha256"].get<std::string>(), sha256_hex(std::span<const float>(payload)));
    EXPECT_EQ(sha256_file(dir / "embeddings.f32"), side["sha256"].get<std::string>());
    EXPECT_EQ(load_embeddings(dir).records.size(), 1000u);
    fs::remove_all(dir);
}

TEST(Archive, ProvenanceMismatchesAreIntegrityErrors) {
    EmbeddingSet set{{"ckpt", 7, "split"}, {{SampleId{1}, 7, {1.0f, 2.0f}, true, 0}, {SampleId{2}, 7, {3.0f, 4.0f}, false, 0}}};
    const auto dir = scratch("provenance");
    persist_embeddings(set, dir);
    EXPECT_THROW(load_embeddings(dir, {8, std::nullopt, std::nullopt}), IntegrityError);
    EXPECT_THROW(load_embeddings(dir, {std::nullopt, "other", std::nullopt}), IntegrityError);
    EXPECT_THROW(load_embeddings(dir, {std::nullopt, std::nullopt, "other"}), IntegrityError);
    {
        std::fstream payload(dir / "embeddings.f32", std::ios::in | std::ios::out | std::ios::binary);
        payload.seekp(0);
        payload.put('\x7f');
    }
    EXPECT_THROW(load_embeddings(dir), IntegrityError);
    fs::remove_all(dir);
}

TEST(Archive, MixedLayersAreRejected) {
    EmbeddingSet set{{"ckpt", 7, "split"}, {{SampleId{1}, 7, {1.0f}, true, 0}, {SampleId{2}, 8, {3.0f}, false, 0}}};
    EXPECT_THROW(persist_embeddings(set, scratch("mixed")), ConsistencyError);
    fs::remove_all(scratch("mixed"));
}

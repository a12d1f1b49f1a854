#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mint/corpus.hpp"
#include "mint/hash.hpp"

namespace mint {

/// Member set D (trains the audited model) and external set E (never seen by it).
struct DatasetSplit {
    std::string corpus;
    std::uint64_t split_seed = 0;
    double member_fraction = 0.0;
    std::vector<SampleId> members;    // sorted
    std::vector<SampleId> externals;  // sorted

    bool is_member(SampleId id) const { return std::binary_search(members.begin(), members.end(), id); }
    bool is_external(SampleId id) const { return std::binary_search(externals.begin(), externals.end(), id); }
    std::size_t size() const noexcept { return members.size() + externals.size(); }

    nlohmann::json to_json() const {
        auto ids = [](const std::vector<SampleId>& v) {
            nlohmann::json a = nlohmann::json::array();
            for (auto id : v) a.push_back(id.value);
            return a;
        };
        return {{"corpus", corpus},
                {"seed", split_seed},
                {"member_fraction", member_fraction},
                {"members", ids(members)},
                {"externals", ids(externals)}};
    }

    static DatasetSplit from_json(const nlohmann::json& j) {
        DatasetSplit s;
        try {
            s.corpus = j.at("corpus").get<std::string>();
            s.split_seed = j.at("seed").get<std::uint64_t>();
            s.member_fraction = j.at("member_fraction").get<double>();
            for (auto v : j.at("members")) s.members.push_back(SampleId{v.get<std::uint32_t>()});
            for (auto v : j.at("externals")) s.externals.push_back(SampleId{v.get<std::uint32_t>()});
        } catch (const nlohmann::json::exception& e) {
            throw IntegrityError(std::string("malformed split manifest: ") + e.what());
        }
        std::sort(s.members.begin(), s.members.end());
        std::sort(s.externals.begin(), s.externals.end());
        return s;
    }

    /// Content identifier of the manifest (used as split_ref).
    std::string id() const { return sha256_hex(to_json().dump()).substr(0, 16); }
};

inline void save_split(const DatasetSplit& split, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write split manifest " + path.string());
    out << split.to_json().dump() << '\n';
}

inline DatasetSplit load_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open split manifest " + path.string());
    try {
        return DatasetSplit::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw IntegrityError("split manifest " + path.string() + " is not valid JSON: " + e.what());
    }
}

/// Class-balanced member/external split by seeded per-class shuffle.
///
/// The member budget round(f * |corpus|) is spread evenly over classes (sizes
/// differ by at most one). A class that cannot supply its share while keeping
/// at least half of its proportional external share is capped and the excess
/// goes to the other classes, so imbalanced corpora still hit the fraction.
inline DatasetSplit make_split(const Corpus& corpus, double member_fraction, std::uint64_t seed) {
    if (!(member_fraction > 0.0 && member_fraction < 1.0)) {
        throw ArgumentError("member_fraction must lie strictly between 0 and 1, got " + std::to_string(member_fraction));
    }
    const std::size_t k = static_cast<std::size_t>(corpus.num_classes());
    std::vector<std::vector<SampleId>> by_class(k);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto img = corpus.at(i);
        by_class[static_cast<std::size_t>(img.class_label)].push_back(img.id);
    }

    std::vector<std::size_t> cap(k), quota(k, 0);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t n = by_class[c].size();
        const auto keep_out = static_cast<std::size_t>(std::ceil((1.0 - member_fraction) * static_cast<double>(n) / 2.0));
        cap[c] = n >= 2 ? std::clamp<std::size_t>(n - keep_out, 1, n - 1) : 0;
    }

    std::size_t remaining = static_cast<std::size_t>(std::llround(member_fraction * static_cast<double>(corpus.size())));
    std::vector<std::size_t> active;
    for (std::size_t c = 0; c < k; ++c) {
        if (cap[c] > 0) active.push_back(c);
    }
    while (!active.empty() && remaining > 0) {
        const std::size_t share = remaining / active.size();
        const std::size_t extra = remaining % active.size();
        std::vector<std::size_t> still;
        bool capped = false;
        for (std::size_t idx = 0; idx < active.size(); ++idx) {
            const std::size_t c = active[idx];
            const std::size_t want = share + (idx < extra ? 1 : 0);
            if (cap[c] < want) {
                quota[c] = cap[c];
                remaining -= cap[c];
                capped = true;
            } else {
                still.push_back(c);
            }
        }
        if (!capped) {
            for (std::size_t idx = 0; idx < active.size(); ++idx) quota[active[idx]] = share + (idx < extra ? 1 : 0);
            remaining = 0;
        }
        active = std::move(still);
    }

    DatasetSplit split;
    split.corpus = to_string(corpus.descriptor().name);
    split.split_seed = seed;
    split.member_fraction = member_fraction;
    for (std::size_t c = 0; c < k; ++c) {
        auto ids = by_class[c];
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(c)};
        std::mt19937_64 rng(seq);
        std::shuffle(ids.begin(), ids.end(), rng);
        split.members.insert(split.members.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(quota[c]));
        split.externals.insert(split.externals.end(), ids.begin() + static_cast<std::ptrdiff_t>(quota[c]), ids.end());
    }
    std::sort(split.members.begin(), split.members.end());
    std::sort(split.externals.begin(), split.externals.end());
    return split;
}

}  // namespace mint

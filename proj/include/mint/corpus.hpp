#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <compare>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mint/errors.hpp"
#include "mint/hash.hpp"
#include "mint/tensor.hpp"

namespace mint {

inline constexpr int kImageSide = 32;
inline constexpr int kImageChannels = 3;
inline constexpr int kImageValues = kImageSide * kImageSide * kImageChannels;

/// Stable identifier of a sample: its position in the corpus' canonical pooled order.
struct SampleId {
    std::uint32_t value = 0;
    auto operator<=>(const SampleId&) const = default;
};

enum class CorpusName { cifar10, cifar100, gtsrb, synthetic };

inline std::string to_string(CorpusName name) {
    switch (name) {
        case CorpusName::cifar10: return "cifar10";
        case CorpusName::cifar100: return "cifar100";
        case CorpusName::gtsrb: return "gtsrb";
        case CorpusName::synthetic: return "synthetic";
    }
    return "unknown";
}

inline CorpusName parse_corpus_name(const std::string& text) {
    if (text == "cifar10") return CorpusName::cifar10;
    if (text == "cifar100") return CorpusName::cifar100;
    if (text == "gtsrb") return CorpusName::gtsrb;
    if (text == "synthetic") return CorpusName::synthetic;
    throw ConfigurationError("unknown corpus '" + text + "' (expected cifar10, cifar100, gtsrb or synthetic)");
}

struct CorpusDescriptor {
    CorpusName name = CorpusName::synthetic;
    int num_classes = 0;
    std::size_t image_count = 0;

    void validate() const {
        const bool ok = [&] {
            switch (name) {
                case CorpusName::cifar10: return num_classes == 10;
                case CorpusName::cifar100: return num_classes == 100;
                case CorpusName::gtsrb: return num_classes == 43;
                case CorpusName::synthetic: return num_classes >= 2;
            }
            return false;
        }();
        if (!ok) {
            throw ArgumentError("corpus " + to_string(name) + " cannot have " + std::to_string(num_classes) + " classes");
        }
    }
};

/// One 3 x 32 x 32 image (channel-major, values in [0, 1]) with its label.
struct LabeledImage {
    SampleId id;
    int class_label = 0;
    std::span<const float> pixels;
};

/// Fully materialized corpus. Read-only after construction.
class Corpus {
public:
    Corpus(CorpusDescriptor descriptor, std::vector<float> pixels, std::vector<int> labels,
           std::vector<SampleId> ids = {})
        : desc_(descriptor), pixels_(std::move(pixels)), labels_(std::move(labels)), ids_(std::move(ids)) {
        if (pixels_.size() != labels_.size() * kImageValues) throw ArgumentError("corpus pixel buffer size mismatch");
        if (ids_.empty()) {
            ids_.resize(labels_.size());
            for (std::size_t i = 0; i < ids_.size(); ++i) ids_[i] = SampleId{static_cast<std::uint32_t>(i)};
        }
        if (ids_.size() != labels_.size()) throw ArgumentError("corpus id list size mismatch");
        desc_.image_count = labels_.size();
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            if (!index_.emplace(ids_[i].value, i).second) throw ArgumentError("duplicate sample id in corpus");
            if (labels_[i] < 0 || labels_[i] >= desc_.num_classes) throw ArgumentError("class label out of range");
        }
    }

    const CorpusDescriptor& descriptor() const noexcept { return desc_; }
    std::size_t size() const noexcept { return labels_.size(); }
    int num_classes() const noexcept { return desc_.num_classes; }

    LabeledImage at(std::size_t index) const {
        return {ids_[index], labels_[index], std::span(pixels_).subspan(index * kImageValues, kImageValues)};
    }

    LabeledImage operator[](SampleId id) const { return at(index_of(id)); }

    std::size_t index_of(SampleId id) const {
        const auto it = index_.find(id.value);
        if (it == index_.end()) throw ArgumentError("sample id " + std::to_string(id.value) + " not in corpus");
        return it->second;
    }

    bool contains(SampleId id) const { return index_.count(id.value) != 0; }

    const std::vector<SampleId>& ids() const noexcept { return ids_; }
    const std::vector<int>& labels() const noexcept { return labels_; }
    int label_of(SampleId id) const { return labels_[index_of(id)]; }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(static_cast<std::size_t>(desc_.num_classes), 0);
        for (int l : labels_) ++counts[static_cast<std::size_t>(l)];
        return counts;
    }

    /// Stacks the requested images into an N x 3 x 32 x 32 tensor.
    Tensor batch(std::span<const SampleId> ids) const {
        Tensor t({static_cast<int>(ids.size()), kImageChannels, kImageSide, kImageSide});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto px = (*this)[ids[i]].pixels;
            std::copy(px.begin(), px.end(), t.ptr() + i * kImageValues);
        }
        return t;
    }

    /// Keeps the first `per_class` images of every class in canonical order; ids are preserved.
    Corpus subset_per_class(std::size_t per_class) const {
        std::vector<std::size_t> taken(static_cast<std::size_t>(desc_.num_classes), 0);
        std::vector<float> px;
        std::vector<int> labels;
        std::vector<SampleId> ids;
        for (std::size_t i = 0; i < size(); ++i) {
            auto& t = taken[static_cast<std::size_t>(labels_[i])];
            if (t >= per_class) continue;
            ++t;
            const auto img = at(i);
            px.insert(px.end(), img.pixels.begin(), img.pixels.end());
            labels.push_back(img.class_label);
            ids.push_back(img.id);
        }
        return Corpus(desc_, std::move(px), std::move(labels), std::move(ids));
    }

private:
    CorpusDescriptor desc_;
    std::vector<float> pixels_;
    std::vector<int> labels_;
    std::vector<SampleId> ids_;
    std::unordered_map<std::uint32_t, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Knobs of the synthetic generator.
///
/// Images live on a low-dimensional latent space: latent coordinate j scales a
/// fixed coloured Gaussian blob pattern. Each class is a Gaussian blob in that
/// space (mean drawn with scale `signal`, spread `latent_noise`); i.i.d. pixel
/// noise and a brightness offset are added before clipping to [0, 1]. With
/// latent_noise = 0 the classes are trivially separable; raising it makes
/// classes overlap so a classifier has to memorize to fit its training set.
struct SyntheticParams {
    float signal = 1.0f;
    float latent_noise = 0.0f;
    float noise = 0.25f;
    float brightness_jitter = 0.05f;
    int latent_dims = 6;
};

inline Corpus make_synthetic_corpus(int num_classes, int per_class, std::uint64_t seed,
                                    const SyntheticParams& params = {}) {
    if (num_classes < 2) throw ArgumentError("synthetic corpus needs at least 2 classes");
    if (per_class < 2) throw ArgumentError("synthetic corpus needs at least 2 images per class");
    if (params.latent_dims < 1) throw ArgumentError("synthetic corpus needs at least 1 latent dimension");

    constexpr float kPatternScale = 0.15f;
    constexpr int kPlane = kImageSide * kImageSide;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    const auto dims = static_cast<std::size_t>(params.latent_dims);
    std::vector<std::vector<float>> basis(dims, std::vector<float>(kImageValues, 0.0f));
    for (auto& pattern : basis) {
        const float cy = unit(rng) * kImageSide, cx = unit(rng) * kImageSide;
        const float sigma = 3.0f + 5.0f * unit(rng);
        std::array<float, kImageChannels> amp{};
        for (auto& a : amp) a = 2.0f * unit(rng) - 1.0f;
        const float peak = std::max({std::abs(amp[0]), std::abs(amp[1]), std::abs(amp[2]), 1e-3f});
        for (int y = 0; y < kImageSide; ++y) {
            for (int x = 0; x < kImageSide; ++x) {
                const float d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                const float g = std::exp(-d2 / (2.0f * sigma * sigma));
                for (int c = 0; c < kImageChannels; ++c) pattern[c * kPlane + y * kImageSide + x] = amp[c] / peak * g;
            }
        }
    }
    std::vector<std::vector<float>> class_means(static_cast<std::size_t>(num_classes), std::vector<float>(dims));
    for (auto& m : class_means) {
        for (auto& v : m) v = params.signal * gauss(rng);
    }

    const std::size_t total = static_cast<std::size_t>(num_classes) * per_class;
    std::vector<float> pixels(total * kImageValues);
    std::vector<int> labels(total);
    std::vector<float> z(dims), img(kImageValues);
    for (std::size_t i = 0; i < total; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
        labels[i] = label;
        for (std::size_t j = 0; j < dims; ++j) z[j] = class_means[static_cast<std::size_t>(label)][j] + params.latent_noise * gauss(rng);
        const float shift = params.brightness_jitter * gauss(rng);
        std::fill(img.begin(), img.end(), 0.5f + shift);
        for (std::size_t j = 0; j < dims; ++j) {
            for (int k = 0; k < kImageValues; ++k) img[k] += kPatternScale * z[j] * basis[j][k];
        }
        float* dst = pixels.data() + i * kImageValues;
        for (int k = 0; k < kImageValues; ++k) dst[k] = std::clamp(img[k] + params.noise * gauss(rng), 0.0f, 1.0f);
    }
    return Corpus({CorpusName::synthetic, num_classes, total}, std::move(pixels), std::move(labels));
}

// ---------------------------------------------------------------------------
// Published corpora

namespace detail {

inline std::optional<std::filesystem::path> find_first(const std::vector<std::filesystem::path>& candidates) {
    for (const auto& c : candidates) {
        if (std::filesystem::exists(c)) return c;
    }
    return std::nullopt;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Verifies `<root>/SHA256SUMS` (sha256sum format, paths relative to root) when present.
inline void verify_checksums(const std::filesystem::path& root) {
    const auto manifest = root / "SHA256SUMS";
    if (!std::filesystem::exists(manifest)) return;
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string digest, rel;
        fields >> digest >> rel;
        if (!rel.empty() && rel[0] == '*') rel.erase(0, 1);
        const auto file = root / rel;
        if (!std::filesystem::exists(file)) throw IngestionError("checksummed file missing: " + file.string());
        if (sha256_file(file) != digest) throw IntegrityError("checksum mismatch: " + file.string());
    }
}

/// CIFAR binary records: [coarse label] label, then 1024 R, 1024 G, 1024 B bytes.
inline void read_cifar_file(const std::filesystem::path& path, int label_bytes, int label_offset,
                            std::vector<float>& pixels, std::vector<int>& labels) {
    const auto bytes = read_bytes(path);
    const std::size_t record = static_cast<std::size_t>(label_bytes) + kImageValues;
    if (bytes.empty() || bytes.size() % record != 0) {
        throw IngestionError("corrupt CIFAR batch (size " + std::to_string(bytes.size()) + " is not a multiple of " +
                             std::to_string(record) + "): " + path.string());
    }
    const std::size_t n = bytes.size() / record;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* r = bytes.data() + i * record;
        labels.push_back(r[label_offset]);
        for (int k = 0; k < kImageValues; ++k) pixels.push_back(static_cast<float>(r[label_bytes + k]) / 255.0f);
    }
}

struct RgbImage {
    int width = 0, height = 0;
    std::vector<unsigned char> rgb;  // interleaved
};

inline RgbImage read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open image " + path.string());
    auto token = [&]() {
        std::string t;
        char ch;
        while (in.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(ch);
        }
        return t;
    };
    if (token() != "P6") throw IngestionError("not a binary PPM (P6) image: " + path.string());
    RgbImage img;
    int maxval = 0;
    try {
        img.width = std::stoi(token());
        img.height = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw IngestionError("malformed PPM header: " + path.string());
    }
    if (img.width <= 0 || img.height <= 0 || maxval != 255) throw IngestionError("unsupported PPM: " + path.string());
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw IngestionError("truncated PPM: " + path.string());
    return img;
}

/// Bilinear resize (half-pixel centres, edge clamp) to 3 x 32 x 32 in [0, 1].
inline void resize_bilinear(const RgbImage& img, float* out) {
    const float sy = static_cast<float>(img.height) / kImageSide;
    const float sx = static_cast<float>(img.width) / kImageSide;
    for (int y = 0; y < kImageSide; ++y) {
        const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(img.height - 1));
        const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height - 1);
        const float wy = fy - static_cast<float>(y0);
        for (int x = 0; x < kImageSide; ++x) {
            const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(img.width - 1));
            const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width - 1);
            const float wx = fx - static_cast<float>(x0);
            for (int c = 0; c < kImageChannels; ++c) {
                auto px = [&](int yy, int xx) {
                    return static_cast<float>(img.rgb[(static_cast<std::size_t>(yy) * img.width + xx) * 3 + c]);
                };
                const float top = px(y0, x0) * (1 - wx) + px(y0, x1) * wx;
                const float bottom = px(y1, x0) * (1 - wx) + px(y1, x1) * wx;
                out[c * kImageSide * kImageSide + y * kImageSide + x] = (top * (1 - wy) + bottom * wy) / 255.0f;
            }
        }
    }
}

/// Reads a GTSRB annotation CSV (';'-separated with a header naming Filename and ClassId).
inline std::vector<std::pair<std::string, int>> read_gtsrb_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open annotation file " + path.string());
    auto split = [](const std::string& line) {
        std::vector<std::string> out;
        std::string field;
        std::istringstream s(line);
        while (std::getline(s, field, ';')) {
            while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
            out.push_back(field);
        }
        return out;
    };
    std::string line;
    if (!std::getline(in, line)) throw IngestionError("empty annotation file " + path.string());
    const auto header = split(line);
    const auto file_col = std::find(header.begin(), header.end(), "Filename") - header.begin();
    const auto class_col = std::find(header.begin(), header.end(), "ClassId") - header.begin();
    if (file_col >= static_cast<long>(header.size()) || class_col >= static_cast<long>(header.size())) {
        throw IngestionError("annotation file lacks Filename/ClassId columns: " + path.string());
    }
    std::vector<std::pair<std::string, int>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto f = split(line);
        if (static_cast<long>(f.size()) <= std::max(file_col, class_col)) {
            throw IngestionError("malformed row in " + path.string() + ": " + line);
        }
        try {
            rows.emplace_back(f[static_cast<std::size_t>(file_col)], std::stoi(f[static_cast<std::size_t>(class_col)]));
        } catch (const std::exception&) {
            throw IngestionError("malformed ClassId in " + path.string() + ": " + line);
        }
    }
    return rows;
}

}  // namespace detail

using ImageSink = std::function<void(const LabeledImage&)>;

/// Streams every image of a published corpus exactly once, in canonical order
/// (all published training files, then test files). Returns the descriptor.
inline CorpusDescriptor stream_corpus(CorpusName name, const std::filesystem::path& root, const ImageSink& sink) {
    namespace fs = std::filesystem;
    if (!fs::exists(root)) throw IngestionError("corpus root does not exist: " + root.string());
    detail::verify_checksums(root);

    std::uint32_t next_id = 0;
    CorpusDescriptor desc{name, 0, 0};
    std::vector<float> px;
    std::vector<int> labels;
    auto flush = [&] {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            sink(LabeledImage{SampleId{next_id++}, labels[i], std::span(px).subspan(i * kImageValues, kImageValues)});
        }
        desc.image_count += labels.size();
        px.clear();
        labels.clear();
    };

    auto locate = [&](const std::vector<fs::path>& subdirs, const std::string& file) {
        std::vector<fs::path> candidates;
        for (const auto& d : subdirs) candidates.push_back(root / d / file);
        if (auto p = detail::find_first(candidates)) return *p;
        throw IngestionError("missing corpus file: " + (root / subdirs.back() / file).string());
    };

    switch (name) {
        case CorpusName::cifar10: {
            desc.num_classes = 10;
            const std::vector<fs::path> dirs{"", "cifar-10-batches-bin"};
            for (const char* f : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                                  "data_batch_5.bin", "test_batch.bin"}) {
                detail::read_cifar_file(locate(dirs, f), 1, 0, px, labels);
                flush();
            }
            break;
        }
        case CorpusName::cifar100: {
            desc.num_classes = 100;
            const std::vector<fs::path> dirs{"", "cifar-100-binary"};
            for (const char* f : {"train.bin", "test.bin"}) {
                detail::read_cifar_file(locate(dirs, f), 2, 1, px, labels);
                flush();
            }
            break;
        }
        case CorpusName::gtsrb: {
            desc.num_classes = 43;
            const auto train_dir = detail::find_first({root / "GTSRB" / "Final_Training" / "Images",
                                                       root / "Final_Training" / "Images"});
            if (!train_dir) throw IngestionError("missing GTSRB training directory under " + root.string());
            std::vector<float> buf(kImageValues);
            for (int c = 0; c < 43; ++c) {
                char cls[8];
                std::snprintf(cls, sizeof(cls), "%05d", c);
                const fs::path dir = *train_dir / cls;
                for (const auto& [file, label] : detail::read_gtsrb_csv(dir / ("GT-" + std::string(cls) + ".csv"))) {
                    detail::resize_bilinear(detail::read_ppm(dir / file), buf.data());
                    px.insert(px.end(), buf.begin(), buf.end());
                    labels.push_back(label);
                }
                flush();
            }
            const auto test_dir =
                detail::find_first({root / "GTSRB" / "Final_Test" / "Images", root / "Final_Test" / "Images"});
            if (!test_dir) throw IngestionError("missing GTSRB test directory under " + root.string());
            const auto gt = detail::find_first({root / "GT-final_test.csv", *test_dir / "GT-final_test.csv"});
            if (!gt) throw IngestionError("missing GTSRB test annotations: " + (root / "GT-final_test.csv").string());
            for (const auto& [file, label] : detail::read_gtsrb_csv(*gt)) {
                detail::resize_bilinear(detail::read_ppm(*test_dir / file), buf.data());
                px.insert(px.end(), buf.begin(), buf.end());
                labels.push_back(label);
            }
            flush();
            break;
        }
        case CorpusName::synthetic:
            throw ArgumentError("the synthetic corpus is generated, not streamed; use make_synthetic_corpus");
    }
    return desc;
}

inline Corpus load_corpus(CorpusName name, const std::filesystem::path& root) {
    std::vector<float> px;
    std::vector<int> labels;
    const auto desc = stream_corpus(name, root, [&](const LabeledImage& img) {
        px.insert(px.end(), img.pixels.begin(), img.pixels.end());
        if (img.class_label >= (name == CorpusName::cifar100 ? 100 : name == CorpusName::gtsrb ? 43 : 10)) {
            throw IngestionError("class label " + std::to_string(img.class_label) + " out of range for " + to_string(name));
        }
        labels.push_back(img.class_label);
    });
    desc.validate();
    return Corpus(desc, std::move(px), std::move(labels));
}

}  // namespace mint

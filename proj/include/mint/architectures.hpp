#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mint/corpus.hpp"
#include "mint/errors.hpp"
#include "mint/nn/blocks.hpp"

namespace mint {

enum class Architecture { paper_cnn, resnet50, resnet100, efficientnet_b0 };

inline std::string to_string(Architecture a) {
    switch (a) {
        case Architecture::paper_cnn: return "paper_cnn";
        case Architecture::resnet50: return "resnet50";
        case Architecture::resnet100: return "resnet100";
        case Architecture::efficientnet_b0: return "efficientnet_b0";
    }
    return "unknown";
}

inline Architecture parse_architecture(const std::string& text) {
    if (text == "paper_cnn") return Architecture::paper_cnn;
    if (text == "resnet50") return Architecture::resnet50;
    if (text == "resnet100") return Architecture::resnet100;
    if (text == "efficientnet_b0") return Architecture::efficientnet_b0;
    throw ConfigurationError("unknown architecture '" + text +
                             "' (expected paper_cnn, resnet50, resnet100 or efficientnet_b0)");
}

/// One tappable layer of an audited model. Indices are 1-based.
struct LayerInfo {
    int index = 0;
    std::string name;
    Shape output_shape;
    int filters = 0;  // conv layers only
    int kernel = 0;   // conv layers only

    std::size_t flat_size() const { return shape_size(output_shape); }
};

/// A network plus the positions (in layers) whose outputs are tappable.
struct TappedNetwork {
    nn::Sequential net;
    std::vector<std::size_t> taps;  // taps[i]: layers run to produce catalog entry i + 1
    std::vector<LayerInfo> catalog;

    void tap(std::string name, int filters = 0, int kernel = 0) {
        taps.push_back(net.size());
        const Shape s = net.output_shape_until({kImageChannels, kImageSide, kImageSide}, net.size());
        catalog.push_back({static_cast<int>(catalog.size()) + 1, std::move(name), s, filters, kernel});
    }
};

namespace detail {

/// Seeds for dropout layers, derived from the init seed and a running counter.
struct SeedCounter {
    std::uint64_t base;
    std::uint64_t next = 0;
    std::uint64_t operator()() { return base * 0x9E3779B97F4A7C15ULL + (++next) * 0xBF58476D1CE4E5B9ULL; }
};

inline void conv_bn_act(nn::Sequential& s, int in, int out, int kernel, int stride, nn::Rng& rng, bool silu = false) {
    s.add<nn::Conv2d>(nn::Conv2d::same(in, out, kernel, stride, rng, false));
    s.add<nn::BatchNorm>(out);
    if (silu) {
        s.add<nn::SiLU>();
    } else {
        s.add<nn::ReLU>();
    }
}

}  // namespace detail

/// Six 3x3 convolutions (conv -> BN -> ReLU) in three blocks of 32, 64, 128
/// filters; max-pool + dropout 0.25 after each block; dense 128 + ReLU;
/// dropout 0.5; dense N + softmax.
///
/// Taps 1..6 are the post-ReLU conv outputs (taken after pooling for the second
/// conv of each block), 7 is dense-128 post-ReLU, 8 the softmax output.
inline TappedNetwork build_paper_cnn(int num_classes, std::uint64_t seed) {
    nn::Rng rng(seed);
    detail::SeedCounter dropout_seed{seed};
    TappedNetwork m;
    auto& s = m.net;
    int in = kImageChannels;
    int conv_index = 0;
    for (int filters : {32, 64, 128}) {
        for (int rep = 0; rep < 2; ++rep) {
            s.add<nn::Conv2d>(nn::Conv2d::same(in, filters, 3, 1, rng));
            s.add<nn::BatchNorm>(filters);
            s.add<nn::ReLU>();
            in = filters;
            ++conv_index;
            if (rep == 1) s.add<nn::MaxPool2d>(2, 2);
            m.tap("conv" + std::to_string(conv_index), filters, 3);
        }
        s.add<nn::Dropout>(0.25f, dropout_seed());
    }
    s.add<nn::Flatten>();
    s.add<nn::Dense>(128 * 4 * 4, 128, rng);
    s.add<nn::ReLU>();
    m.tap("dense128");
    s.add<nn::Dropout>(0.5f, dropout_seed());
    s.add<nn::Dense>(128, num_classes, rng);
    s.add<nn::Softmax>();
    m.tap("softmax");
    return m;
}

/// Bottleneck ResNet with a CIFAR stem (3x3 stride-1 conv, no max-pool).
/// resnet50 uses stages {3,4,6,3}; resnet100 the 101-layer layout {3,4,23,3}.
inline TappedNetwork build_resnet(const std::vector<int>& stages, int num_classes, std::uint64_t seed) {
    nn::Rng rng(seed);
    TappedNetwork m;
    detail::conv_bn_act(m.net, kImageChannels, 64, 3, 1, rng);
    m.tap("stem", 64, 3);
    int in = 64;
    for (std::size_t stage = 0; stage < stages.size(); ++stage) {
        const int mid = 64 << stage;
        const int out = mid * 4;
        for (int block = 0; block < stages[stage]; ++block) {
            const int stride = (block == 0 && stage > 0) ? 2 : 1;
            nn::Sequential main;
            detail::conv_bn_act(main, in, mid, 1, 1, rng);
            detail::conv_bn_act(main, mid, mid, 3, stride, rng);
            main.add<nn::Conv2d>(nn::Conv2d::same(mid, out, 1, 1, rng, false));
            main.add<nn::BatchNorm>(out);
            nn::Sequential shortcut;
            if (stride != 1 || in != out) {
                shortcut.add<nn::Conv2d>(in, out, 1, 1, stride, 0, 0, rng, false);
                shortcut.add<nn::BatchNorm>(out);
            }
            m.net.add<nn::Residual>("bottleneck", std::move(main), std::move(shortcut), true);
            in = out;
        }
        m.tap("stage" + std::to_string(stage + 1), out, 3);
    }
    m.net.add<nn::GlobalAvgPool>();
    m.tap("avgpool");
    m.net.add<nn::Dense>(in, num_classes, rng);
    m.net.add<nn::Softmax>();
    m.tap("softmax");
    return m;
}

/// EfficientNet-B0 (MBConv with squeeze-excitation, SiLU) with a stride-1 stem.
inline TappedNetwork build_efficientnet_b0(int num_classes, std::uint64_t seed) {
    struct StageDef {
        int expand, kernel, stride, out, repeats;
    };
    static constexpr StageDef kStages[] = {{1, 3, 1, 16, 1},  {6, 3, 2, 24, 2},  {6, 5, 2, 40, 2}, {6, 3, 2, 80, 3},
                                           {6, 5, 1, 112, 3}, {6, 5, 2, 192, 4}, {6, 3, 1, 320, 1}};
    nn::Rng rng(seed);
    detail::SeedCounter dropout_seed{seed};
    TappedNetwork m;
    detail::conv_bn_act(m.net, kImageChannels, 32, 3, 1, rng, true);
    m.tap("stem", 32, 3);
    int in = 32;
    int stage_no = 0;
    for (const auto& st : kStages) {
        for (int r = 0; r < st.repeats; ++r) {
            const int stride = r == 0 ? st.stride : 1;
            const int hidden = in * st.expand;
            nn::Sequential main;
            if (st.expand != 1) detail::conv_bn_act(main, in, hidden, 1, 1, rng, true);
            main.add<nn::DepthwiseConv2d>(hidden, st.kernel, stride, rng);
            main.add<nn::BatchNorm>(hidden);
            main.add<nn::SiLU>();
            main.add<nn::SqueezeExcite>(hidden, std::max(1, in / 4), rng);
            main.add<nn::Conv2d>(nn::Conv2d::same(hidden, st.out, 1, 1, rng, false));
            main.add<nn::BatchNorm>(st.out);
            if (stride == 1 && in == st.out) {
                m.net.add<nn::Residual>("mbconv", std::move(main), nn::Sequential{}, false);
            } else {
                m.net.push(std::make_unique<nn::Sequential>(std::move(main)));
            }
            in = st.out;
        }
        m.tap("stage" + std::to_string(++stage_no), st.out, st.kernel);
    }
    detail::conv_bn_act(m.net, in, 1280, 1, 1, rng, true);
    m.tap("head", 1280, 1);
    m.net.add<nn::GlobalAvgPool>();
    m.tap("avgpool");
    m.net.add<nn::Dropout>(0.2f, dropout_seed());
    m.net.add<nn::Dense>(1280, num_classes, rng);
    m.net.add<nn::Softmax>();
    m.tap("softmax");
    return m;
}

inline TappedNetwork build_network(Architecture arch, int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigurationError("an audited classifier needs at least 2 classes");
    switch (arch) {
        case Architecture::paper_cnn: return build_paper_cnn(num_classes, seed);
        case Architecture::resnet50: return build_resnet({3, 4, 6, 3}, num_classes, seed);
        case Architecture::resnet100: return build_resnet({3, 4, 23, 3}, num_classes, seed);
        case Architecture::efficientnet_b0: return build_efficientnet_b0(num_classes, seed);
    }
    throw ConfigurationError("unknown architecture enum value");
}

}  // namespace mint

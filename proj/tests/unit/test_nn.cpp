#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "mint/nn/blocks.hpp"
#include "mint/nn/layers.hpp"
#include "mint/nn/train_utils.hpp"

using namespace mint;
using namespace mint::nn;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, float scale = 1.0f) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.0f, scale);
    for (auto& v : t.data) v = d(rng);
    return t;
}

double projected(Layer& layer, const Tensor& x, const Tensor& r) {
    const Tensor y = layer.forward(x, Mode::train);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y.data[i]) * r.data[i];
    return s;
}

// Central differences of <r, layer(x)> against the analytic input and parameter gradients.
void check_gradients(Layer& layer, Tensor x, double tol = 2e-2) {
    const Tensor y0 = layer.forward(x, Mode::train);
    const Tensor r = random_tensor(y0.shape, 99);
    zero_grad(layer.params());
    layer.forward(x, Mode::train);
    const Tensor dx = layer.backward(r);
    ASSERT_EQ(dx.shape, x.shape);

    const float eps = 1e-2f;
    auto compare = [&](float& slot, double analytic, const std::string& what) {
        const float saved = slot;
        slot = saved + eps;
        const double up = projected(layer, x, r);
        slot = saved - eps;
        const double down = projected(layer, x, r);
        slot = saved;
        const double numeric = (up - down) / (2.0 * eps);
        EXPECT_NEAR(analytic, numeric, tol * std::max(1.0, std::abs(numeric))) << what;
    };
    for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 23)) {
        compare(x.data[i], dx.data[i], layer.name() + " input " + std::to_string(i));
    }
    for (Param* p : layer.params()) {
        const Tensor grad = p->grad;
        for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 17)) {
            compare(p->value.data[i], grad.data[i], layer.name() + " " + p->name + " " + std::to_string(i));
        }
    }
}

}  // namespace

TEST(NnGradients, Conv2dSamePadding) {
    Rng rng(1);
    auto conv = Conv2d::same(3, 4, 3, 1, rng);
    check_gradients(conv, random_tensor({2, 3, 5, 6}, 2));
}

TEST(NnGradients, Conv2dStridedWithoutBias) {
    Rng rng(1);
    Conv2d conv(2, 3, 3, 3, 2, 1, 1, rng, false);
    check_gradients(conv, random_tensor({2, 2, 7, 7}, 3));
}

TEST(NnGradients, Conv1dAsRowKernel) {
    Rng rng(4);
    Conv2d conv(1, 5, 1, 3, 1, 0, 1, rng);
    check_gradients(conv, random_tensor({3, 1, 1, 9}, 5));
}

TEST(NnGradients, Dense) {
    Rng rng(2);
    Dense dense(7, 4, rng);
    check_gradients(dense, random_tensor({3, 7}, 6));
}

TEST(NnGradients, BatchNormTrainMode) {
    BatchNorm bn(3);
    check_gradients(bn, random_tensor({4, 3, 2, 2}, 7), 5e-2);
}

TEST(NnGradients, Activations) {
    SiLU silu;
    check_gradients(silu, random_tensor({2, 11}, 8));
    Sigmoid sig;
    check_gradients(sig, random_tensor({2, 11}, 9));
    Softmax soft;
    check_gradients(soft, random_tensor({3, 5}, 10));
}

TEST(NnGradients, PoolingAndFlatten) {
    MaxPool2d pool(2, 2);
    check_gradients(pool, random_tensor({2, 2, 4, 6}, 11));
    MaxPool2d ceil_pool(1, 2, true);
    check_gradients(ceil_pool, random_tensor({2, 3, 1, 7}, 12));
    GlobalAvgPool gap;
    check_gradients(gap, random_tensor({2, 3, 4, 4}, 13));
}

TEST(NnGradients, DepthwiseAndSqueezeExcite) {
    Rng rng(3);
    DepthwiseConv2d dw(3, 3, 1, rng);
    check_gradients(dw, random_tensor({2, 3, 5, 5}, 14));
    SqueezeExcite se(4, 2, rng);
    check_gradients(se, random_tensor({2, 4, 3, 3}, 15));
}

TEST(NnGradients, ResidualBlock) {
    Rng rng(5);
    Sequential main;
    main.push(std::make_unique<Conv2d>(Conv2d::same(2, 2, 3, 1, rng)));
    main.add<SiLU>();
    Residual block("res", std::move(main), Sequential{}, false);
    check_gradients(block, random_tensor({2, 2, 4, 4}, 16));
}

TEST(NnLayers, MaxPoolCeilModeKeepsTail) {
    MaxPool2d pool(1, 2, true);
    EXPECT_EQ(pool.output_shape({4, 1, 7}), (Shape{4, 1, 4}));
    MaxPool2d floor_pool(1, 2, false);
    EXPECT_EQ(floor_pool.output_shape({4, 1, 7}), (Shape{4, 1, 3}));
}

TEST(NnLayers, SoftmaxRowsSumToOne) {
    Softmax soft;
    const Tensor y = soft.forward(random_tensor({6, 10}, 17, 30.0f), Mode::infer);
    for (int n = 0; n < 6; ++n) {
        double s = 0.0;
        for (float v : y.row(n)) {
            EXPECT_TRUE(std::isfinite(v));
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(NnLayers, DropoutIsIdentityAtInference) {
    Dropout drop(0.5f, 1);
    const Tensor x = random_tensor({4, 20}, 18);
    EXPECT_EQ(drop.forward(x, Mode::infer).data, x.data);
    const Tensor y = drop.forward(x, Mode::train);
    int zeros = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y.data[i] == 0.0f) {
            ++zeros;
        } else {
            EXPECT_FLOAT_EQ(y.data[i], 2.0f * x.data[i]);
        }
    }
    EXPECT_GT(zeros, 10);
    EXPECT_LT(zeros, 70);
}

TEST(NnLayers, BatchNormInferenceUsesRunningStats) {
    BatchNorm bn(2);
    const Tensor x = random_tensor({8, 2, 2, 2}, 19, 3.0f);
    for (int i = 0; i < 200; ++i) bn.forward(x, Mode::train);
    const Tensor a = bn.forward(x, Mode::train);
    const Tensor b = bn.forward(x, Mode::infer);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 0.05);
}

TEST(NnLosses, SoftmaxCrossEntropyClosedForm) {
    Tensor logits({1, 2}, std::vector<float>{0.0f, 0.0f});
    const std::vector<int> labels{1};
    const auto [loss, grad] = softmax_cross_entropy(logits, labels);
    EXPECT_NEAR(loss, std::log(2.0), 1e-6);
    EXPECT_NEAR(grad.data[0], 0.5, 1e-6);
    EXPECT_NEAR(grad.data[1], -0.5, 1e-6);
}

TEST(NnLosses, BinaryCrossEntropyIsStableForLargeLogits) {
    Tensor logits({2, 1}, std::vector<float>{80.0f, -80.0f});
    const std::vector<float> targets{0.0f, 1.0f};
    const auto [loss, grad] = binary_cross_entropy_with_logits(logits, targets);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_NEAR(loss, 80.0, 1e-3);
    EXPECT_NEAR(grad.data[0], 0.5, 1e-6);
    EXPECT_NEAR(grad.data[1], -0.5, 1e-6);
}

TEST(NnOptim, AdamMinimizesQuadratic) {
    Param p("w", {3});
    p.value.data = {3.0f, -2.0f, 1.0f};
    Adam adam({&p}, {.learning_rate = 0.05f});
    for (int i = 0; i < 600; ++i) {
        adam.zero_grad();
        for (std::size_t k = 0; k < 3; ++k) p.grad.data[k] = 2.0f * p.value.data[k];
        adam.step();
    }
    for (float v : p.value.data) EXPECT_NEAR(v, 0.0f, 1e-2);
}

TEST(NnState, BlobRoundTripAndSizeCheck) {
    const auto path = std::filesystem::temp_directory_path() / "mint_blob_test.bin";
    const std::vector<float> values{1.0f, -2.5f, 3.25f};
    write_blob(path, values);
    EXPECT_EQ(read_blob(path), values);
    Rng rng(1);
    Dense dense(2, 2, rng);
    EXPECT_THROW(import_state(dense, values), IntegrityError);
    std::filesystem::remove(path);
}

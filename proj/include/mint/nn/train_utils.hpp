#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "mint/nn/layer.hpp"

namespace mint::nn {

struct AdamOptions {
    float learning_rate = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-7f;
};

class Adam {
public:
    Adam(std::vector<Param*> params, AdamOptions options = {}) : params_(std::move(params)), opt_(options) {
        for (auto* p : params_) {
            m_.emplace_back(p->value.size(), 0.0f);
            v_.emplace_back(p->value.size(), 0.0f);
        }
    }

    void step() {
        ++t_;
        const float c1 = 1.0f - static_cast<float>(std::pow(opt_.beta1, t_));
        const float c2 = 1.0f - static_cast<float>(std::pow(opt_.beta2, t_));
        const float lr = opt_.learning_rate * std::sqrt(c2) / c1;
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& value = params_[k]->value.data;
            const auto& grad = params_[k]->grad.data;
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < value.size(); ++i) {
                m[i] = opt_.beta1 * m[i] + (1.0f - opt_.beta1) * grad[i];
                v[i] = opt_.beta2 * v[i] + (1.0f - opt_.beta2) * grad[i] * grad[i];
                value[i] -= lr * m[i] / (std::sqrt(v[i]) + opt_.epsilon);
            }
        }
    }

    void zero_grad() { nn::zero_grad(params_); }
    long steps() const noexcept { return t_; }

private:
    std::vector<Param*> params_;
    AdamOptions opt_;
    std::vector<std::vector<float>> m_, v_;
    long t_ = 0;
};

struct LossAndGrad {
    double loss = 0.0;
    Tensor grad;
};

/// Mean categorical cross-entropy over a batch of logits, with the gradient
/// of the fused softmax + cross-entropy with respect to the logits.
inline LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    const int n = logits.dim(0), k = logits.dim(1);
    LossAndGrad out{0.0, Tensor(logits.shape)};
    for (int b = 0; b < n; ++b) {
        const float* z = logits.ptr() + static_cast<std::size_t>(b) * k;
        float* g = out.grad.ptr() + static_cast<std::size_t>(b) * k;
        const float mx = *std::max_element(z, z + k);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j] - mx));
        const double lse = std::log(sum) + mx;
        const int y = labels[static_cast<std::size_t>(b)];
        out.loss += lse - z[y];
        for (int j = 0; j < k; ++j) {
            const double p = std::exp(static_cast<double>(z[j]) - lse);
            g[j] = static_cast<float>((p - (j == y ? 1.0 : 0.0)) / n);
        }
    }
    out.loss /= n;
    return out;
}

/// Mean binary cross-entropy on logits (N x 1) against 0/1 targets.
inline LossAndGrad binary_cross_entropy_with_logits(const Tensor& logits, std::span<const float> targets) {
    const int n = logits.dim(0);
    LossAndGrad out{0.0, Tensor(logits.shape)};
    for (int b = 0; b < n; ++b) {
        const double z = logits.data[b];
        const double y = targets[static_cast<std::size_t>(b)];
        out.loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        out.grad.data[b] = static_cast<float>((p - y) / n);
    }
    out.loss /= n;
    return out;
}

/// Parameters then buffers, in traversal order.
inline std::vector<float> export_state(Layer& model) {
    std::vector<float> out;
    for (auto* p : model.params()) out.insert(out.end(), p->value.data.begin(), p->value.data.end());
    for (auto* b : model.buffers()) out.insert(out.end(), b->data.begin(), b->data.end());
    return out;
}

inline void import_state(Layer& model, std::span<const float> state) {
    std::size_t need = 0;
    for (auto* p : model.params()) need += p->value.size();
    for (auto* b : model.buffers()) need += b->size();
    if (need != state.size()) {
        throw IntegrityError("weight blob holds " + std::to_string(state.size()) + " values, model expects " +
                             std::to_string(need));
    }
    std::size_t off = 0;
    for (auto* p : model.params()) {
        std::copy_n(state.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.data.begin());
        off += p->value.size();
    }
    for (auto* b : model.buffers()) {
        std::copy_n(state.begin() + static_cast<std::ptrdiff_t>(off), b->size(), b->data.begin());
        off += b->size();
    }
}

inline constexpr char kBlobMagic[8] = {'M', 'I', 'N', 'T', 'W', 'T', 'S', '1'};

/// Weight blob: 8-byte magic, uint64 count, count little-endian float32 values.
inline void write_blob(const std::filesystem::path& path, std::span<const float> values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot open " + path.string() + " for writing");
    const std::uint64_t count = values.size();
    out.write(kBlobMagic, sizeof(kBlobMagic));
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (!out) throw IngestionError("short write to " + path.string());
}

inline std::vector<float> read_blob(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open weight blob " + path.string());
    char magic[8];
    std::uint64_t count = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in || std::memcmp(magic, kBlobMagic, sizeof(magic)) != 0) {
        throw IntegrityError("not a weight blob: " + path.string());
    }
    const auto expected = sizeof(magic) + sizeof(count) + count * sizeof(float);
    if (std::filesystem::file_size(path) != expected) {
        throw IntegrityError("weight blob size mismatch: " + path.string());
    }
    std::vector<float> values(count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    return values;
}

}  // namespace mint::nn

#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mint/tensor.hpp"

namespace mint::nn {

using Rng = std::mt19937_64;

enum class Mode { train, infer };

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
};

/// A differentiable stage. forward() caches whatever backward() needs; backward()
/// accumulates into Param::grad and returns the gradient with respect to the input.
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string name() const = 0;
    /// Per-sample output shape (batch dimension excluded).
    virtual Shape output_shape(const Shape& in) const = 0;
    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;

    virtual std::vector<Param*> params() { return {}; }
    /// Non-trainable persistent state (running statistics).
    virtual std::vector<Tensor*> buffers() { return {}; }
};

using LayerPtr = std::unique_ptr<Layer>;

class Sequential : public Layer {
public:
    Sequential() = default;
    explicit Sequential(std::string label) : label_(std::move(label)) {}

    template <typename L, typename... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    void push(LayerPtr layer) { layers_.push_back(std::move(layer)); }

    std::string name() const override { return label_.empty() ? "sequential" : label_; }
    std::size_t size() const noexcept { return layers_.size(); }
    bool empty() const noexcept { return layers_.empty(); }
    Layer& at(std::size_t i) { return *layers_.at(i); }
    const Layer& at(std::size_t i) const { return *layers_.at(i); }

    Shape output_shape(const Shape& in) const override { return output_shape_until(in, layers_.size()); }

    /// Shape after the first `count` layers.
    Shape output_shape_until(const Shape& in, std::size_t count) const {
        Shape s = in;
        for (std::size_t i = 0; i < count; ++i) s = layers_[i]->output_shape(s);
        return s;
    }

    Tensor forward(const Tensor& x, Mode mode) override { return forward_range(x, 0, layers_.size(), mode); }

    /// Runs layers [begin, end).
    Tensor forward_range(const Tensor& x, std::size_t begin, std::size_t end, Mode mode) {
        if (begin >= end) return x;
        Tensor h = layers_[begin]->forward(x, mode);
        for (std::size_t i = begin + 1; i < end; ++i) h = layers_[i]->forward(h, mode);
        return h;
    }

    Tensor backward(const Tensor& grad_out) override { return backward_range(grad_out, 0, layers_.size()); }

    /// Back-propagates through layers [begin, end) in reverse order.
    Tensor backward_range(const Tensor& grad_out, std::size_t begin, std::size_t end) {
        if (begin >= end) return grad_out;
        Tensor g = layers_[end - 1]->backward(grad_out);
        for (std::size_t i = end - 1; i-- > begin;) g = layers_[i]->backward(g);
        return g;
    }

    std::vector<Param*> params() override {
        std::vector<Param*> out;
        for (auto& l : layers_) {
            auto p = l->params();
            out.insert(out.end(), p.begin(), p.end());
        }
        return out;
    }

    std::vector<Tensor*> buffers() override {
        std::vector<Tensor*> out;
        for (auto& l : layers_) {
            auto b = l->buffers();
            out.insert(out.end(), b.begin(), b.end());
        }
        return out;
    }

private:
    std::string label_;
    std::vector<LayerPtr> layers_;
};

inline void zero_grad(const std::vector<Param*>& params) {
    for (auto* p : params) p->grad.fill(0.0f);
}

inline std::size_t parameter_count(const std::vector<Param*>& params) {
    std::size_t n = 0;
    for (const auto* p : params) n += p->value.size();
    return n;
}

inline void glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    std::uniform_real_distribution<float> dist(-limit, limit);
    for (auto& v : t.data) v = dist(rng);
}

inline void he_normal(Tensor& t, int fan_in, Rng& rng) {
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    for (auto& v : t.data) v = dist(rng);
}

}  // namespace mint::nn

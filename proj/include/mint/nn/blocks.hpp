#pragma once

#include <string>
#include <utility>

#include "mint/nn/layers.hpp"

namespace mint::nn {

/// Per-channel k x k convolution (groups == channels), no bias.
class DepthwiseConv2d : public Layer {
public:
    DepthwiseConv2d(int channels, int kernel, int stride, Rng& rng)
        : c_(channels), k_(kernel), stride_(stride), pad_(kernel / 2), weight_("weight", {channels, 1, kernel, kernel}) {
        he_normal(weight_.value, k_ * k_, rng);
    }

    std::string name() const override { return "dwconv" + std::to_string(k_) + "x" + std::to_string(k_); }

    Shape output_shape(const Shape& in) const override {
        return {c_, (in.at(1) + 2 * pad_ - k_) / stride_ + 1, (in.at(2) + 2 * pad_ - k_) / stride_ + 1};
    }

    Tensor forward(const Tensor& x, Mode mode) override {
        detail::require_rank(x, 4, "dwconv");
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const Shape o = output_shape({c_, h, w});
        Tensor y({n, c_, o[1], o[2]});
        for (int b = 0; b < n; ++b) {
            for (int c = 0; c < c_; ++c) {
                const float* src = x.ptr() + (static_cast<std::size_t>(b) * c_ + c) * h * w;
                float* dst = y.ptr() + (static_cast<std::size_t>(b) * c_ + c) * o[1] * o[2];
                const float* ker = weight_.value.ptr() + static_cast<std::size_t>(c) * k_ * k_;
                for (int yo = 0; yo < o[1]; ++yo) {
                    for (int xo = 0; xo < o[2]; ++xo) {
                        float acc = 0.0f;
                        for (int i = 0; i < k_; ++i) {
                            const int iy = yo * stride_ - pad_ + i;
                            if (iy < 0 || iy >= h) continue;
                            for (int j = 0; j < k_; ++j) {
                                const int ix = xo * stride_ - pad_ + j;
                                if (ix >= 0 && ix < w) acc += ker[i * k_ + j] * src[iy * w + ix];
                            }
                        }
                        dst[yo * o[2] + xo] = acc;
                    }
                }
            }
        }
        if (mode == Mode::train) input_ = x;
        return y;
    }

    Tensor backward(const Tensor& grad_out) override {
        const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
        const int oh = grad_out.dim(2), ow = grad_out.dim(3);
        Tensor dx(input_.shape);
        for (int b = 0; b < n; ++b) {
            for (int c = 0; c < c_; ++c) {
                const std::size_t in_off = (static_cast<std::size_t>(b) * c_ + c) * h * w;
                const float* src = input_.ptr() + in_off;
                float* dsrc = dx.ptr() + in_off;
                const float* g = grad_out.ptr() + (static_cast<std::size_t>(b) * c_ + c) * oh * ow;
                const float* ker = weight_.value.ptr() + static_cast<std::size_t>(c) * k_ * k_;
                float* dker = weight_.grad.ptr() + static_cast<std::size_t>(c) * k_ * k_;
                for (int yo = 0; yo < oh; ++yo) {
                    for (int xo = 0; xo < ow; ++xo) {
                        const float gv = g[yo * ow + xo];
                        for (int i = 0; i < k_; ++i) {
                            const int iy = yo * stride_ - pad_ + i;
                            if (iy < 0 || iy >= h) continue;
                            for (int j = 0; j < k_; ++j) {
                                const int ix = xo * stride_ - pad_ + j;
                                if (ix < 0 || ix >= w) continue;
                                dker[i * k_ + j] += gv * src[iy * w + ix];
                                dsrc[iy * w + ix] += gv * ker[i * k_ + j];
                            }
                        }
                    }
                }
            }
        }
        return dx;
    }

    std::vector<Param*> params() override { return {&weight_}; }

private:
    int c_, k_, stride_, pad_;
    Param weight_;
    Tensor input_;
};

/// y = main(x) + shortcut(x), optionally followed by ReLU. An empty shortcut is the identity.
class Residual : public Layer {
public:
    Residual(std::string label, Sequential main, Sequential shortcut, bool relu_after)
        : label_(std::move(label)), main_(std::move(main)), shortcut_(std::move(shortcut)), relu_after_(relu_after) {}

    std::string name() const override { return label_; }
    Shape output_shape(const Shape& in) const override { return main_.output_shape(in); }

    Tensor forward(const Tensor& x, Mode mode) override {
        Tensor y = main_.forward(x, mode);
        const Tensor s = shortcut_.empty() ? x : shortcut_.forward(x, mode);
        if (s.shape != y.shape) {
            throw ArgumentError(label_ + ": residual shape mismatch " + shape_string(y.shape) + " vs " +
                                shape_string(s.shape));
        }
        for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += s.data[i];
        if (relu_after_) {
            for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
            out_ = y;
        }
        return y;
    }

    Tensor backward(const Tensor& grad_out) override {
        Tensor g = grad_out;
        if (relu_after_) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (out_.data[i] <= 0.0f) g.data[i] = 0.0f;
            }
        }
        Tensor dx = main_.backward(g);
        const Tensor ds = shortcut_.empty() ? g : shortcut_.backward(g);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
        return dx;
    }

    std::vector<Param*> params() override {
        auto p = main_.params();
        auto s = shortcut_.params();
        p.insert(p.end(), s.begin(), s.end());
        return p;
    }

    std::vector<Tensor*> buffers() override {
        auto b = main_.buffers();
        auto s = shortcut_.buffers();
        b.insert(b.end(), s.begin(), s.end());
        return b;
    }

private:
    std::string label_;
    Sequential main_;
    Sequential shortcut_;
    bool relu_after_;
    Tensor out_;
};

/// Channel attention: x * sigmoid(W2 silu(W1 avgpool(x))).
class SqueezeExcite : public Layer {
public:
    SqueezeExcite(int channels, int reduced, Rng& rng) : c_(channels) {
        excite_.add<Dense>(channels, reduced, rng);
        excite_.add<SiLU>();
        excite_.add<Dense>(reduced, channels, rng);
        excite_.add<Sigmoid>();
    }

    std::string name() const override { return "squeeze_excite"; }
    Shape output_shape(const Shape& in) const override { return in; }

    Tensor forward(const Tensor& x, Mode mode) override {
        input_ = x;
        const Tensor pooled = pool_.forward(x, mode);
        scale_ = excite_.forward(pooled, mode);
        Tensor y = x;
        const std::size_t spatial = x.stride0() / static_cast<std::size_t>(c_);
        for (std::size_t nc = 0; nc < scale_.size(); ++nc) {
            for (std::size_t i = 0; i < spatial; ++i) y.data[nc * spatial + i] *= scale_.data[nc];
        }
        return y;
    }

    Tensor backward(const Tensor& grad_out) override {
        const std::size_t spatial = input_.stride0() / static_cast<std::size_t>(c_);
        Tensor dx(input_.shape);
        Tensor dscale(scale_.shape);
        for (std::size_t nc = 0; nc < scale_.size(); ++nc) {
            double acc = 0.0;
            for (std::size_t i = 0; i < spatial; ++i) {
                const std::size_t k = nc * spatial + i;
                dx.data[k] = grad_out.data[k] * scale_.data[nc];
                acc += static_cast<double>(grad_out.data[k]) * input_.data[k];
            }
            dscale.data[nc] = static_cast<float>(acc);
        }
        const Tensor dpooled = excite_.backward(dscale);
        const Tensor dx_pool = pool_.backward(dpooled);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dx_pool.data[i];
        return dx;
    }

    std::vector<Param*> params() override { return excite_.params(); }

private:
    int c_;
    GlobalAvgPool pool_;
    Sequential excite_;
    Tensor input_;
    Tensor scale_;
};

}  // namespace mint::nn

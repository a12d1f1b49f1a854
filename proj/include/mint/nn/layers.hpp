#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "mint/nn/layer.hpp"

namespace mint::nn {

namespace detail {

inline void require_rank(const Tensor& x, int rank, const char* who) {
    if (x.rank() != rank) {
        throw ArgumentError(std::string(who) + ": expected rank " + std::to_string(rank) + " input, got " +
                            shape_string(x.shape));
    }
}

}  // namespace detail

/// 2-D convolution over N x C x H x W via im2col + GEMM. A 1 x k kernel on
/// N x C x 1 x L input is a 1-D convolution.
class Conv2d : public Layer {
public:
    Conv2d(int in_channels, int out_channels, int kernel_h, int kernel_w, int stride, int pad_h, int pad_w,
           Rng& rng, bool bias = true)
        : in_(in_channels),
          out_(out_channels),
          kh_(kernel_h),
          kw_(kernel_w),
          stride_(stride),
          ph_(pad_h),
          pw_(pad_w),
          has_bias_(bias),
          weight_("weight", {out_channels, in_channels, kernel_h, kernel_w}),
          bias_("bias", {out_channels}) {
        glorot_uniform(weight_.value, in_ * kh_ * kw_, out_ * kh_ * kw_, rng);
    }

    /// Square kernel with "same" padding for odd kernels.
    static Conv2d same(int in_channels, int out_channels, int kernel, int stride, Rng& rng, bool bias = true) {
        return Conv2d(in_channels, out_channels, kernel, kernel, stride, kernel / 2, kernel / 2, rng, bias);
    }

    std::string name() const override {
        return "conv" + std::to_string(kh_) + "x" + std::to_string(kw_) + "_" + std::to_string(out_);
    }

    int out_channels() const noexcept { return out_; }

    Shape output_shape(const Shape& in) const override {
        return {out_, (in.at(1) + 2 * ph_ - kh_) / stride_ + 1, (in.at(2) + 2 * pw_ - kw_) / stride_ + 1};
    }

    Tensor forward(const Tensor& x, Mode mode) override {
        detail::require_rank(x, 4, "conv2d");
        if (x.dim(1) != in_) {
            throw ArgumentError("conv2d: expected " + std::to_string(in_) + " channels, got " + shape_string(x.shape));
        }
        in_shape_ = x.shape;
        const int n = x.dim(0);
        const Shape o = output_shape({x.dim(1), x.dim(2), x.dim(3)});
        const int oh = o[1], ow = o[2];
        if (oh <= 0 || ow <= 0) throw ArgumentError("conv2d: input too small " + shape_string(x.shape));
        const Eigen::Index k = static_cast<Eigen::Index>(in_) * kh_ * kw_;
        const Eigen::Index cols = static_cast<Eigen::Index>(n) * oh * ow;

        RowMatrix col(k, cols);
        im2col(x, oh, ow, col.data());

        RowMatrix out_mat(out_, cols);
        out_mat.noalias() = as_matrix(weight_.value.ptr(), out_, k) * col;

        Tensor y({n, out_, oh, ow});
        const std::size_t plane = static_cast<std::size_t>(oh) * ow;
        for (int b = 0; b < n; ++b) {
            for (int f = 0; f < out_; ++f) {
                const float* src = out_mat.data() + static_cast<std::size_t>(f) * cols + b * plane;
                float* dst = y.ptr() + (static_cast<std::size_t>(b) * out_ + f) * plane;
                const float bv = has_bias_ ? bias_.value.data[f] : 0.0f;
                for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bv;
            }
        }
        if (mode == Mode::train) {
            cols_ = std::move(col);
        } else {
            cols_.resize(0, 0);
        }
        return y;
    }

    Tensor backward(const Tensor& grad_out) override {
        if (cols_.size() == 0) throw ArgumentError("conv2d: backward without a training-mode forward");
        const int n = grad_out.dim(0), oh = grad_out.dim(2), ow = grad_out.dim(3);
        const std::size_t plane = static_cast<std::size_t>(oh) * ow;
        const Eigen::Index k = static_cast<Eigen::Index>(in_) * kh_ * kw_;
        const Eigen::Index cols = static_cast<Eigen::Index>(n) * oh * ow;

        RowMatrix g(out_, cols);
        for (int b = 0; b < n; ++b) {
            for (int f = 0; f < out_; ++f) {
                const float* src = grad_out.ptr() + (static_cast<std::size_t>(b) * out_ + f) * plane;
                std::memcpy(g.data() + static_cast<std::size_t>(f) * cols + b * plane, src, plane * sizeof(float));
            }
        }
        as_matrix(weight_.grad.ptr(), out_, k).noalias() += g * cols_.transpose();
        if (has_bias_) {
            for (int f = 0; f < out_; ++f) bias_.grad.data[f] += g.row(f).sum();
        }
        RowMatrix dcol(k, cols);
        dcol.noalias() = as_matrix(weight_.value.ptr(), out_, k).transpose() * g;

        Tensor dx(in_shape_);
        col2im(dcol.data(), oh, ow, dx);
        return dx;
    }

    std::vector<Param*> params() override {
        if (has_bias_) return {&weight_, &bias_};
        return {&weight_};
    }

private:
    void im2col(const Tensor& x, int oh, int ow, float* col) const {
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t plane_out = static_cast<std::size_t>(oh) * ow;
        const std::size_t row_len = static_cast<std::size_t>(n) * plane_out;
        for (int c = 0; c < in_; ++c) {
            for (int i = 0; i < kh_; ++i) {
                for (int j = 0; j < kw_; ++j) {
                    float* row = col + ((static_cast<std::size_t>(c) * kh_ + i) * kw_ + j) * row_len;
                    for (int b = 0; b < n; ++b) {
                        const float* src = x.ptr() + (static_cast<std::size_t>(b) * in_ + c) * h * w;
                        float* dst = row + b * plane_out;
                        for (int y = 0; y < oh; ++y) {
                            const int iy = y * stride_ - ph_ + i;
                            float* d = dst + static_cast<std::size_t>(y) * ow;
                            if (iy < 0 || iy >= h) {
                                std::fill(d, d + ow, 0.0f);
                                continue;
                            }
                            const float* s = src + static_cast<std::size_t>(iy) * w;
                            for (int xo = 0; xo < ow; ++xo) {
                                const int ix = xo * stride_ - pw_ + j;
                                d[xo] = (ix >= 0 && ix < w) ? s[ix] : 0.0f;
                            }
                        }
                    }
                }
            }
        }
    }

    void col2im(const float* col, int oh, int ow, Tensor& dx) const {
        const int n = dx.dim(0), h = dx.dim(2), w = dx.dim(3);
        const std::size_t plane_out = static_cast<std::size_t>(oh) * ow;
        const std::size_t row_len = static_cast<std::size_t>(n) * plane_out;
        for (int c = 0; c < in_; ++c) {
            for (int i = 0; i < kh_; ++i) {
                for (int j = 0; j < kw_; ++j) {
                    const float* row = col + ((static_cast<std::size_t>(c) * kh_ + i) * kw_ + j) * row_len;
                    for (int b = 0; b < n; ++b) {
                        float* dst = dx.ptr() + (static_cast<std::size_t>(b) * in_ + c) * h * w;
                        const float* src = row + b * plane_out;
                        for (int y = 0; y < oh; ++y) {
                            const int iy = y * stride_ - ph_ + i;
                            if (iy < 0 || iy >= h) continue;
                            const float* s = src + static_cast<std::size_t>(y) * ow;
                            float* d = dst + static_cast<std::size_t>(iy) * w;
                            for (int xo = 0; xo < ow; ++xo) {
                                const int ix = xo * stride_ - pw_ + j;
                                if (ix >= 0 && ix < w) d[ix] += s[xo];
                            }
                        }
                    }
                }
            }
        }
    }

    int in_, out_, kh_, kw_, stride_, ph_, pw_;
    bool has_bias_;
    Param weight_;
    Param bias_;
    Shape in_shape_;
    RowMatrix cols_;
};

/// Fully connected layer; inputs of any rank are flattened per sample.
class Dense : public Layer {
public:
    Dense(int in_features, int out_features, Rng& rng)
        : in_(in_features), out_(out_features), weight_("weight", {out_features, in_features}), bias_("bias", {out_features}) {
        glorot_uniform(weight_.value, in_, out_, rng);
    }

    std::string name() const override { return "dense" + std::to_string(out_); }
    Shape output_shape(const Shape&) const override { return {out_}; }

    Tensor forward(const Tensor& x, Mode mode) override {
        const int n = x.batch();
        if (x.stride0() != static_cast<std::size_t>(in_)) {
            throw ArgumentError("dense: expected " + std::to_string(in_) + " features per sample, got " +
                                shape_string(x.shape));
        }
        Tensor y({n, out_});
        auto ym = as_matrix(y.ptr(), n, out_);
        ym.noalias() = as_matrix(x.ptr(), n, in_) * as_matrix(weight_.value.ptr(), out_, in_).transpose();
        ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.ptr(), out_);
        if (mode == Mode::train) {
            input_ = x;
        } else {
            input_ = Tensor{};
        }
        return y;
    }

    Tensor backward(const Tensor& grad_out) override {
        if (input_.data.empty()) throw ArgumentError("dense: backward without a training-mode forward");
        const int n = grad_out.batch();
        auto g = as_matrix(grad_out.ptr(), n, out_);
        auto x = as_matrix(input_.ptr(), n, in_);
        as_matrix(weight_.grad.ptr(), out_, in_).noalias() += g.transpose() * x;
        Eigen::Map<Eigen::RowVectorXf>(bias_.grad.ptr(), out_) += g.colwise().sum();
        Tensor dx(input_.shape);
        as_matrix(dx.ptr(), n, in_).noalias() = g * as_matrix(weight_.value.ptr(), out_, in_);
        return dx;
    }

    std::vector<Param*> params() override { return {&weight_, &bias_}; }

private:
    int in_, out_;
    Param weight_;
    Param bias_;
    Tensor input_;
};

/// Per-channel batch normalization for N x C x H x W (or N x C) input.
class BatchNorm : public Layer {
public:
    static constexpr float kMomentum = 0.1f;
    static constexpr float kEpsilon = 1e-3f;

    explicit BatchNorm(int channels)
        : c_(channels),
          gamma_("gamma", {channels}),
          beta_("beta", {channels}),
          running_mean_({channels}, 0.0f),
          running_var_({channels}, 1.0f) {
        gamma_.value.fill(1.0f);
    }

    std::string name() const override { return "batchnorm"; }
    Shape output_shape(const Shape& in) const override { return in; }

    Tensor forward(const Tensor& x, Mode mode) override {
        if (x.rank() < 2 || x.dim(1) != c_) throw ArgumentError("batchnorm: channel mismatch " + shape_string(x.shape));
        const int n = x.dim(0);
        const std::size_t spatial = x.stride0() / static_cast<std::size_t>(c_);
        const double count = static_cast<double>(n) * static_cast<double>(spatial);
        Tensor y(x.shape);
        mode_ = mode;
        in_shape_ = x.shape;
        inv_std_.assign(static_cast<std::size_t>(c_), 0.0f);
        if (mode == Mode::train) xhat_ = Tensor(x.shape);

        for (int c = 0; c < c_; ++c) {
            float mean, var;
            if (mode == Mode::train) {
                double sum = 0.0, sq = 0.0;
                for (int b = 0; b < n; ++b) {
                    const float* p = x.ptr() + (static_cast<std::size_t>(b) * c_ + c) * spatial;
                    for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
                }
                const double m = sum / count;
                for (int b = 0; b < n; ++b) {
                    const float* p = x.ptr() + (static_cast<std::size_t>(b) * c_ + c) * spatial;
                    for (std::size_t i = 0; i < spatial; ++i) {
                        const double d = p[i] - m;
                        sq += d * d;
                    }
                }
                mean = static_cast<float>(m);
                var = static_cast<float>(sq / count);
                running_mean_.data[c] = (1.0f - kMomentum) * running_mean_.data[c] + kMomentum * mean;
                running_var_.data[c] = (1.0f - kMomentum) * running_var_.data[c] + kMomentum * var;
            } else {
                mean = running_mean_.data[c];
                var = running_var_.data[c];
            }
            const float inv = 1.0f / std::sqrt(var + kEpsilon);
            inv_std_[c] = inv;
            const float g = gamma_.value.data[c], bt = beta_.value.data[c];
            for (int b = 0; b < n; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    const float xh = (x.data[off + i] - mean) * inv;
                    if (mode == Mode::train) xhat_.data[off + i] = xh;
                    y.data[off + i] = g * xh + bt;
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& grad_out) override {
        const int n = grad_out.dim(0);
        const std::size_t spatial = grad_out.stride0() / static_cast<std::size_t>(c_);
        const float m = static_cast<float>(n) * static_cast<float>(spatial);
        Tensor dx(in_shape_);
        for (int c = 0; c < c_; ++c) {
            const float g = gamma_.value.data[c];
            const float inv = inv_std_[c];
            if (mode_ != Mode::train) {
                for (int b = 0; b < n; ++b) {
                    const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * spatial;
                    for (std::size_t i = 0; i < spatial; ++i) dx.data[off + i] = grad_out.data[off + i] * g * inv;
                }
                continue;
            }
            double sum_g = 0.0, sum_gx = 0.0;
            for (int b = 0; b < n; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    sum_g += grad_out.data[off + i];
                    sum_gx += static_cast<double>(grad_out.data[off + i]) * xhat_.data[off + i];
                }
            }
            gamma_.grad.data[c] += static_cast<float>(sum_gx);
            beta_.grad.data[c] += static_cast<float>(sum_g);
            const float mg = static_cast<float>(sum_g) / m;
            const float mgx = static_cast<float>(sum_gx) / m;
            for (int b = 0; b < n; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    dx.data[off + i] = g * inv * (grad_out.data[off + i] - mg - xhat_.data[off + i] * mgx);
                }
            }
        }
        return dx;
    }

    std::vector<Param*> params() override { return {&gamma_, &beta_}; }
    std::vector<Tensor*> buffers() override { return {&running_mean_, &running_var_}; }

private:
    int c_;
    Param gamma_;
    Param beta_;
    Tensor running_mean_;
    Tensor running_var_;
    Mode mode_ = Mode::infer;
    Shape in_shape_;
    Tensor xhat_;
    std::vector<float> inv_std_;
};

class ReLU : public Layer {
public:
    std::string name() const override { return "relu"; }
    Shape output_shape(const Shape& in) const override { return in; }
    Tensor forward(const Tensor& x, Mode) override {
        out_ = x;
        for (auto& v : out_.data) v = v > 0.0f ? v : 0.0f;
        return out_;
    }
    Tensor backward(const Tensor& grad_out) override {
        Tensor dx = grad_out;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            if (out_.data[i] <= 0.0f) dx.data[i] = 0.0f;
        }
        return dx;
    }

private:
    Tensor out_;
};

inline float sigmoid(float v) {
    return v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
}

/// x * sigmoid(x), a.k.a. swish.
class SiLU : public Layer {
public:
    std::string name() const override { return "silu"; }
    Shape output_shape(const Shape& in) const override { return in; }
    Tensor forward(const Tensor& x, Mode) override {
        in_ = x;
        Tensor y = x;
        for (auto& v : y.data) v = v * sigmoid(v);
        return y;
    }
    Tensor backward(const Tensor& grad_out) override {
        Tensor dx = grad_out;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const float s = sigmoid(in_.data[i]);
            dx.data[i] *= s * (1.0f + in_.data[i] * (1.0f - s));
        }
        return dx;
    }

private:
    Tensor in_;
};

class Sigmoid : public Layer {
public:
    std::string name() const override { return "sigmoid"; }
    Shape output_shape(const Shape& in) const override { return in; }
    Tensor forward(const Tensor& x, Mode) override {
        out_ = x;
        for (auto& v : out_.data) v = sigmoid(v);
        return out_;
    }
    Tensor backward(const Tensor& grad_out) override {
        Tensor dx = grad_out;
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= out_.data[i] * (1.0f - out_.data[i]);
        return dx;
    }

private:
    Tensor out_;
};

/// Softmax over the last dimension of N x K input.
class Softmax : public Layer {
public:
    std::string name() const override { return "softmax"; }
    Shape output_shape(const Shape& in) const override { return in; }
    Tensor forward(const Tensor& x, Mode) override {
        detail::require_rank(x, 2, "softmax");
        out_ = x;
        const int n = x.dim(0), k = x.dim(1);
        for (int b = 0; b < n; ++b) {
            float* r = out_.ptr() + static_cast<std::size_t>(b) * k;
            const float mx = *std::max_element(r, r + k);
            double sum = 0.0;
            for (int j = 0; j < k; ++j) {
                r[j] = std::exp(r[j] - mx);
                sum += r[j];
            }
            for (int j = 0; j < k; ++j) r[j] = static_cast<float>(r[j] / sum);
        }
        return out_;
    }
    Tensor backward(const Tensor& grad_out) override {
        const int n = out_.dim(0), k = out_.dim(1);
        Tensor dx(out_.shape);
        for (int b = 0; b < n; ++b) {
            const float* s = out_.ptr() + static_cast<std::size_t>(b) * k;
            const float* g = grad_out.ptr() + static_cast<std::size_t>(b) * k;
            double dot = 0.0;
            for (int j = 0; j < k; ++j) dot += static_cast<double>(g[j]) * s[j];
            for (int j = 0; j < k; ++j) dx.data[static_cast<std::size_t>(b) * k + j] = s[j] * (g[j] - static_cast<float>(dot));
        }
        return dx;
    }

private:
    Tensor out_;
};

/// Non-overlapping max pooling (stride = window). With ceil_mode a partial
/// trailing window is kept, so a length-1 axis pools to length 1.
class MaxPool2d : public Layer {
public:
    MaxPool2d(int window_h, int window_w, bool ceil_mode = false) : kh_(window_h), kw_(window_w), ceil_(ceil_mode) {}

    std::string name() const override { return "maxpool"; }

    Shape output_shape(const Shape& in) const override { return {in.at(0), pooled(in.at(1), kh_), pooled(in.at(2), kw_)}; }

    Tensor forward(const Tensor& x, Mode) override {
        detail::require_rank(x, 4, "maxpool");
        in_shape_ = x.shape;
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int oh = pooled(h, kh_), ow = pooled(w, kw_);
        Tensor y({n, c, oh, ow});
        argmax_.assign(y.size(), 0);
        std::size_t o = 0;
        for (int nc = 0; nc < n * c; ++nc) {
            const std::size_t base = static_cast<std::size_t>(nc) * h * w;
            for (int yo = 0; yo < oh; ++yo) {
                for (int xo = 0; xo < ow; ++xo, ++o) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::size_t best_i = base;
                    for (int i = yo * kh_; i < std::min(h, (yo + 1) * kh_); ++i) {
                        for (int j = xo * kw_; j < std::min(w, (xo + 1) * kw_); ++j) {
                            const std::size_t idx = base + static_cast<std::size_t>(i) * w + j;
                            if (x.data[idx] > best) {
                                best = x.data[idx];
                                best_i = idx;
                            }
                        }
                    }
                    y.data[o] = best;
                    argmax_[o] = best_i;
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& grad_out) override {
        Tensor dx(in_shape_);
        for (std::size_t o = 0; o < grad_out.size(); ++o) dx.data[argmax_[o]] += grad_out.data[o];
        return dx;
    }

private:
    int pooled(int len, int k) const { return ceil_ ? (len + k - 1) / k : len / k; }

    int kh_, kw_;
    bool ceil_;
    Shape in_shape_;
    std::vector<std::size_t> argmax_;
};

/// Inverted dropout; identity in inference mode.
class Dropout : public Layer {
public:
    Dropout(float rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
        if (rate < 0.0f || rate >= 1.0f) throw ArgumentError("dropout rate must lie in [0, 1)");
    }

    std::string name() const override { return "dropout"; }
    float rate() const noexcept { return rate_; }
    Shape output_shape(const Shape& in) const override { return in; }

    Tensor forward(const Tensor& x, Mode mode) override {
        if (mode == Mode::infer || rate_ == 0.0f) {
            mask_.clear();
            return x;
        }
        const float scale = 1.0f / (1.0f - rate_);
        std::bernoulli_distribution keep(1.0 - rate_);
        mask_.resize(x.size());
        Tensor y = x;
        for (std::size_t i = 0; i < y.size(); ++i) {
            mask_[i] = keep(rng_) ? scale : 0.0f;
            y.data[i] *= mask_[i];
        }
        return y;
    }

    Tensor backward(const Tensor& grad_out) override {
        if (mask_.empty()) return grad_out;
        Tensor dx = grad_out;
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= mask_[i];
        return dx;
    }

private:
    float rate_;
    Rng rng_;
    std::vector<float> mask_;
};

class Flatten : public Layer {
public:
    std::string name() const override { return "flatten"; }
    Shape output_shape(const Shape& in) const override { return {static_cast<int>(shape_size(in))}; }
    Tensor forward(const Tensor& x, Mode) override {
        in_shape_ = x.shape;
        return x.reshaped({x.batch(), static_cast<int>(x.stride0())});
    }
    Tensor backward(const Tensor& grad_out) override { return grad_out.reshaped(in_shape_); }

private:
    Shape in_shape_;
};

/// N x C x H x W -> N x C.
class GlobalAvgPool : public Layer {
public:
    std::string name() const override { return "global_avg_pool"; }
    Shape output_shape(const Shape& in) const override { return {in.at(0)}; }
    Tensor forward(const Tensor& x, Mode) override {
        detail::require_rank(x, 4, "global_avg_pool");
        in_shape_ = x.shape;
        const int n = x.dim(0), c = x.dim(1);
        const std::size_t spatial = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
        Tensor y({n, c});
        for (int i = 0; i < n * c; ++i) {
            const float* p = x.ptr() + static_cast<std::size_t>(i) * spatial;
            double s = 0.0;
            for (std::size_t j = 0; j < spatial; ++j) s += p[j];
            y.data[i] = static_cast<float>(s / static_cast<double>(spatial));
        }
        return y;
    }
    Tensor backward(const Tensor& grad_out) override {
        Tensor dx(in_shape_);
        const std::size_t spatial = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
        const float inv = 1.0f / static_cast<float>(spatial);
        for (std::size_t i = 0; i < grad_out.size(); ++i) {
            std::fill_n(dx.ptr() + i * spatial, spatial, grad_out.data[i] * inv);
        }
        return dx;
    }

private:
    Shape in_shape_;
};

}  // namespace mint::nn

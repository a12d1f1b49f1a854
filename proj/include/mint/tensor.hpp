#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mint/errors.hpp"

namespace mint {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

inline std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

/// 64-byte aligned storage. Eigen's vectorized kernels split work by address
/// alignment, so unaligned buffers can change float results between runs.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

/// Dense float32 tensor, row-major. Batched tensors keep the batch as dimension 0
/// and image-like tensors use N x C x H x W.
struct Tensor {
    Shape shape;
    FloatBuffer data;

    Tensor() = default;
    explicit Tensor(Shape s, float fill = 0.0f) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, FloatBuffer values) : shape(std::move(s)), data(std::move(values)) { check(); }
    Tensor(Shape s, std::span<const float> values) : shape(std::move(s)), data(values.begin(), values.end()) {
        check();
    }
    Tensor(Shape s, const std::vector<float>& values) : Tensor(std::move(s), std::span<const float>(values)) {}

    std::size_t size() const noexcept { return data.size(); }
    int rank() const noexcept { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    int batch() const { return shape.empty() ? 0 : shape[0]; }

    /// Elements per batch entry.
    std::size_t stride0() const { return shape.empty() ? 0 : data.size() / static_cast<std::size_t>(shape[0]); }

    float* ptr() noexcept { return data.data(); }
    const float* ptr() const noexcept { return data.data(); }

    std::span<float> row(int n) { return {data.data() + static_cast<std::size_t>(n) * stride0(), stride0()}; }
    std::span<const float> row(int n) const {
        return {data.data() + static_cast<std::size_t>(n) * stride0(), stride0()};
    }

    Tensor reshaped(Shape s) const& { return Tensor(std::move(s), data); }
    Tensor reshaped(Shape s) && { return Tensor(std::move(s), std::move(data)); }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }

private:
    void check() const {
        if (data.size() != shape_size(shape)) {
            throw ArgumentError("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_string(shape));
        }
    }
};

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline MatrixMap as_matrix(float* p, Eigen::Index rows, Eigen::Index cols) { return {p, rows, cols}; }
inline ConstMatrixMap as_matrix(const float* p, Eigen::Index rows, Eigen::Index cols) { return {p, rows, cols}; }

}  // namespace mint

#pragma once

#include <algorithm>
#include <vector>

#include "tgt/common.hpp"
#include "tgt/rng.hpp"

namespace tgt {

// Dense row-major tensor. A rank-0 shape holds one scalar element.
template <typename Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;

    Tensor() = default;

    explicit Tensor(Shape s, Real fill = Real(0))
        : shape(std::move(s)), data(static_cast<std::size_t>(numel(shape)), fill) {}

    Tensor(Shape s, std::vector<Real> values) : shape(std::move(s)), data(std::move(values)) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
            throw ShapeError("tensor value count " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

    static Tensor randn(Shape s, Rng& rng, Real stddev = Real(1)) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = static_cast<Real>(rng.normal()) * stddev;
        return t;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(int axis) const { return shape[static_cast<std::size_t>(axis)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    Real& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    Real operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    Real& at2(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    Real at2(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * shape[1] + j)]; }

    void fill(Real v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

template <typename Real>
std::vector<std::int64_t> row_major_strides(const Shape& shape) {
    std::vector<std::int64_t> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        strides[static_cast<std::size_t>(i)] =
            strides[static_cast<std::size_t>(i + 1)] * shape[static_cast<std::size_t>(i + 1)];
    }
    return strides;
}

}  // namespace tgt

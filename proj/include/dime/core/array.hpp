#ifndef DIME_CORE_ARRAY_HPP
#define DIME_CORE_ARRAY_HPP

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "dime/core/errors.hpp"

namespace dime {

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major buffer. Images and feature maps use HWC order:
// shape {H, W, C}, flat index (y*W + x)*C + c.
template <typename T>
struct Array {
    std::vector<int> shape;
    std::vector<T> v;

    Array() = default;
    explicit Array(std::vector<int> s, T fill = T(0))
        : shape(std::move(s)), v(static_cast<size_t>(shape_numel(shape)), fill) {}
    Array(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<int64_t>(v.size()) != shape_numel(shape))
            throw ShapeError("array data size does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T& at(int i) { return v[static_cast<size_t>(i)]; }
    const T& at(int i) const { return v[static_cast<size_t>(i)]; }
    T& at(int i, int j) { return v[static_cast<size_t>(i) * shape[1] + j]; }
    const T& at(int i, int j) const { return v[static_cast<size_t>(i) * shape[1] + j]; }
    T& at(int y, int x, int c) {
        return v[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
    }
    const T& at(int y, int x, int c) const {
        return v[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
    }

    template <typename U>
    Array<U> cast() const {
        Array<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <typename T>
bool same_shape(const Array<T>& a, const Array<T>& b) {
    return a.shape == b.shape;
}

}  // namespace dime

#endif

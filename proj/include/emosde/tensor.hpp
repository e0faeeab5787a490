#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace emosde {

// Dense row-major tensor. Rank 1 ({n}) and rank 2 ({rows, cols}) cover
// everything in this project except conv weights, which are {k, cin, cout}.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw std::invalid_argument("tensor: data length does not match shape");
    }

    static int64_t shape_numel(const std::vector<int>& s) {
        int64_t n = 1;
        for (int e : s) {
            if (e < 0) throw std::invalid_argument("tensor: negative extent");
            n *= e;
        }
        return n;
    }

    static TensorT zeros(std::vector<int> s) {
        TensorT t;
        t.data.assign(static_cast<size_t>(shape_numel(s)), T(0));
        t.shape = std::move(s);
        return t;
    }

    static TensorT full(std::vector<int> s, T v) {
        TensorT t = zeros(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    int rows() const {
        if (shape.size() != 2) throw std::invalid_argument("tensor: rows() needs rank 2");
        return shape[0];
    }
    int cols() const {
        if (shape.size() != 2) throw std::invalid_argument("tensor: cols() needs rank 2");
        return shape[1];
    }

    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.reserve(data.size());
        for (T v : data) out.data.push_back(static_cast<U>(v));
        return out;
    }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

template <typename T>
double max_abs(const TensorT<T>& a) {
    double m = 0.0;
    for (T v : a.data) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

}  // namespace emosde

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fewcount/errors.hpp"

namespace fewcount {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline long long shape_numel(const Shape& s) {
    long long n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

// Dense row-major tensor. Rank is dynamic; ops in this library use rank 1-4.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<long long>(data_.size()) != shape_numel(shape_))
            throw ShapeError("data size does not match shape " + shape_str(shape_));
    }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    bool empty() const { return data_.empty(); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const Shape& shape() const { return shape_; }
    long long size() const { return static_cast<long long>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](long long i) { return data_[static_cast<size_t>(i)]; }
    T operator[](long long i) const { return data_[static_cast<size_t>(i)]; }

    // Rank-2 accessors (H,W).
    T& at(int h, int w) { return data_[static_cast<size_t>(h) * shape_[1] + w]; }
    T at(int h, int w) const { return data_[static_cast<size_t>(h) * shape_[1] + w]; }
    // Rank-3 accessors (C,H,W).
    T& at(int c, int h, int w) { return data_[idx3(c, h, w)]; }
    T at(int c, int h, int w) const { return data_[idx3(c, h, w)]; }
    // Rank-4 accessors (K,C,H,W).
    T& at(int k, int c, int h, int w) { return data_[idx4(k, c, h, w)]; }
    T at(int k, int c, int h, int w) const { return data_[idx4(k, c, h, w)]; }

    size_t idx3(int c, int h, int w) const {
        return (static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w;
    }
    size_t idx4(int k, int c, int h, int w) const {
        return ((static_cast<size_t>(k) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (long long i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Sum accumulated in double regardless of T.
    double dsum() const {
        double s = 0.0;
        for (T v : data_) s += static_cast<double>(v);
        return s;
    }

    double max_abs() const {
        double m = 0.0;
        for (T v : data_) m = std::max(m, std::abs(static_cast<double>(v)));
        return m;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape();
}

// Returns a copy with a new shape of equal element count.
template <typename T>
Tensor<T> reshaped(const Tensor<T>& t, Shape shape) {
    if (shape_numel(shape) != t.size())
        throw ShapeError("reshape " + shape_str(t.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    Tensor<T> out(std::move(shape));
    std::copy(t.data(), t.data() + t.size(), out.data());
    return out;
}

} // namespace fewcount

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "hairseg/error.hpp"

namespace hairseg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major n-dimensional array. Contiguous storage, value semantics.
// The element type is float for training and double for the 64-bit
// finite-difference verification mode; integer types carry masks and labels.
template <class T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), T{}) {}

    TensorT(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        HS_CHECK_SHAPE(data_.size() == shape_numel(shape_),
                       "data length " << data_.size() << " does not match shape "
                                      << shape_str(shape_));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, T value) {
        TensorT t(std::move(shape));
        for (auto& v : t.data_) v = value;
        return t;
    }

    static TensorT ones(Shape shape) { return full(std::move(shape), T{1}); }

    static TensorT scalar(T value) { return TensorT({1}, {value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& vec() noexcept { return data_; }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Multi-index access, rank checked in debug-ish fashion via at().
    template <class... Ix>
    T& operator()(Ix... ix) {
        return data_[flat_index({static_cast<std::size_t>(ix)...})];
    }
    template <class... Ix>
    const T& operator()(Ix... ix) const {
        return data_[flat_index({static_cast<std::size_t>(ix)...})];
    }

    std::size_t flat_index(std::initializer_list<std::size_t> ix) const {
        HS_CHECK_SHAPE(ix.size() == shape_.size(),
                       "index rank " << ix.size() << " vs tensor rank " << shape_.size());
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (std::size_t i : ix) {
            flat = flat * shape_[axis] + i;
            ++axis;
        }
        return flat;
    }

    bool same_shape(const TensorT& other) const noexcept { return shape_ == other.shape_; }

    template <class U>
    TensorT<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return TensorT<U>(shape_, std::move(out));
    }

    bool operator==(const TensorT&) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;
using MaskTensor = TensorT<std::uint8_t>;

template <class T>
TensorT<T> zeros_like(const TensorT<T>& t) {
    return TensorT<T>(t.shape());
}

template <class T>
bool all_finite(const TensorT<T>& t) {
    for (const T& v : t.vec())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

} // namespace hairseg

#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "onsetnet/errors.hpp"

namespace onsetnet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major N-d array, rank <= 5. Activations use the layout
// [batch, channel, time, height, width].
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(shape_size(shape_)), T(0));
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<std::int64_t>(data_.size()) != shape_size(shape_)) {
            throw NumericError("tensor data length " + std::to_string(data_.size()) +
                               " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t extent(std::size_t axis) const { return shape_[axis]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

private:
    void validate_shape() const {
        if (shape_.size() > 5) {
            throw NumericError("tensor rank " + std::to_string(shape_.size()) + " exceeds 5");
        }
        for (auto e : shape_) {
            if (e < 1) throw NumericError("tensor extent must be >= 1, got shape " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

}  // namespace onsetnet

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tgl/errors.hpp"

namespace tgl {

// Scalar type of all tensors. 64-bit by default; the sawtooth term in the gate
// math is O(1/M) = 1e-5 at the default granularity, which 32-bit precision
// would corrupt. Define TGL_REAL_FLOAT to build a 32-bit variant.
#ifdef TGL_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense n-dimensional array with value semantics. A scalar is rank 0.
// `tape_id`/`node` link the tensor into the tape that produced or watched it;
// they are metadata only and do not affect value equality.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), Real(0)) {
        validate_shape();
    }

    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (numel(shape_) != data_.size())
            throw shape_error("tensor: shape " + shape_str(shape_) + " does not match data length " +
                              std::to_string(data_.size()));
    }

    static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, Real v) {
        Tensor t(std::move(shape));
        for (Real& x : t.data_) x = v;
        return t;
    }
    static Tensor ones(Shape shape) { return full(std::move(shape), Real(1)); }
    static Tensor from_vector(std::vector<Real> v) {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool is_scalar() const { return data_.size() == 1 && shape_.size() <= 1; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::vector<Real>& vec() { return data_; }
    const std::vector<Real>& vec() const { return data_; }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real item() const {
        if (data_.size() != 1)
            throw value_error("item() requires a single-element tensor, got shape " + shape_str(shape_));
        return data_[0];
    }

    bool all_finite() const {
        for (Real x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Tape linkage; 0/-1 when the tensor is not attached to any tape.
    std::uint64_t tape_id = 0;
    std::int64_t node = -1;

private:
    void validate_shape() const {
        for (std::size_t d : shape_)
            if (d == 0) throw shape_error("tensor: zero extent in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<Real> data_;
};

}  // namespace tgl

#pragma once

// Dense row-major double tensor, rank 1..4. The whole library works in
// double precision; shapes are validated eagerly so downstream loops can
// index unchecked.

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dpn {

// Thrown when two operands disagree on shape, or an operation gets a
// tensor whose rank/extents it cannot accept.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

using Dims = std::vector<std::uint32_t>;

inline std::string dims_to_string(const Dims& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(dims[i]);
    }
    s += "]";
    return s;
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Dims dims, double fill = 0.0) : dims_(std::move(dims)) {
        validate_dims();
        data_.assign(count(), fill);
        init_strides();
    }

    Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
        validate_dims();
        if (data_.size() != count())
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match dims " + dims_to_string(dims_));
        init_strides();
    }

    std::size_t rank() const { return dims_.size(); }
    const Dims& dims() const { return dims_; }
    std::uint32_t dim(std::size_t axis) const {
        assert(axis < dims_.size());
        return dims_[axis];
    }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t flat) const {
        assert(flat < data_.size());
        return data_[flat];
    }
    double& operator[](std::size_t flat) {
        assert(flat < data_.size());
        return data_[flat];
    }

    double operator()(std::uint32_t i) const { return data_[index(i)]; }
    double& operator()(std::uint32_t i) { return data_[index(i)]; }
    double operator()(std::uint32_t i, std::uint32_t j) const { return data_[index(i, j)]; }
    double& operator()(std::uint32_t i, std::uint32_t j) { return data_[index(i, j)]; }
    double operator()(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
        return data_[index(i, j, k)];
    }
    double& operator()(std::uint32_t i, std::uint32_t j, std::uint32_t k) {
        return data_[index(i, j, k)];
    }
    double operator()(std::uint32_t i, std::uint32_t j, std::uint32_t k, std::uint32_t m) const {
        return data_[index(i, j, k, m)];
    }
    double& operator()(std::uint32_t i, std::uint32_t j, std::uint32_t k, std::uint32_t m) {
        return data_[index(i, j, k, m)];
    }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

    std::size_t index(std::uint32_t i) const {
        assert(rank() == 1 && i < dims_[0]);
        return i;
    }
    std::size_t index(std::uint32_t i, std::uint32_t j) const {
        assert(rank() == 2 && i < dims_[0] && j < dims_[1]);
        return std::size_t(i) * strides_[0] + j;
    }
    std::size_t index(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
        assert(rank() == 3 && i < dims_[0] && j < dims_[1] && k < dims_[2]);
        return std::size_t(i) * strides_[0] + std::size_t(j) * strides_[1] + k;
    }
    std::size_t index(std::uint32_t i, std::uint32_t j, std::uint32_t k, std::uint32_t m) const {
        assert(rank() == 4 && i < dims_[0] && j < dims_[1] && k < dims_[2] && m < dims_[3]);
        return std::size_t(i) * strides_[0] + std::size_t(j) * strides_[1] +
               std::size_t(k) * strides_[2] + m;
    }

private:
    void validate_dims() const {
        if (dims_.empty() || dims_.size() > 4)
            throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims_.size()));
        for (std::uint32_t d : dims_)
            if (d == 0) throw ShapeError("tensor extents must be positive, got " + dims_to_string(dims_));
    }

    std::size_t count() const {
        std::size_t n = 1;
        for (std::uint32_t d : dims_) n *= d;
        return n;
    }

    void init_strides() {
        strides_.assign(dims_.size(), 1);
        for (std::size_t a = dims_.size(); a-- > 1;)
            strides_[a - 1] = strides_[a] * dims_[a];
    }

    Dims dims_;
    std::vector<double> data_;
    std::vector<std::size_t> strides_;
};

inline void ensure_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + dims_to_string(a.dims()) +
                         " vs " + dims_to_string(b.dims()));
}

// Per-pixel label assignment over an H x W grid. Values are unconstrained
// at this level; operations that need them inside a label space check there
// (ground truth may carry an ignore marker outside the label range).
class LabelMap {
public:
    LabelMap() = default;
    LabelMap(std::uint32_t height, std::uint32_t width, std::uint32_t fill = 0)
        : height_(height), width_(width), labels_(std::size_t(height) * width, fill) {
        if (height == 0 || width == 0) throw ShapeError("label map extents must be positive");
    }

    std::uint32_t height() const { return height_; }
    std::uint32_t width() const { return width_; }
    std::size_t size() const { return labels_.size(); }

    std::uint32_t at(std::uint32_t y, std::uint32_t x) const {
        assert(y < height_ && x < width_);
        return labels_[std::size_t(y) * width_ + x];
    }
    void set(std::uint32_t y, std::uint32_t x, std::uint32_t label) {
        assert(y < height_ && x < width_);
        labels_[std::size_t(y) * width_ + x] = label;
    }

    const std::vector<std::uint32_t>& values() const { return labels_; }

    // Stored in the common tensor container as H x W x 1 so label maps share
    // the on-disk format with everything else.
    Tensor to_tensor() const {
        Tensor t({height_, width_, 1});
        for (std::size_t i = 0; i < labels_.size(); ++i) t[i] = double(labels_[i]);
        return t;
    }

    static LabelMap from_tensor(const Tensor& t) {
        if (!(t.rank() == 2 || (t.rank() == 3 && t.dim(2) == 1)))
            throw ShapeError("label map tensor must be H x W or H x W x 1, got " +
                             dims_to_string(t.dims()));
        LabelMap m(t.dim(0), t.dim(1));
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double v = t[i];
            if (!(v >= 0.0) || v != static_cast<double>(static_cast<std::uint32_t>(v)) ||
                v > 4294967295.0)
                throw std::invalid_argument("label map values must be non-negative integers, got " +
                                            std::to_string(v));
            m.labels_[i] = static_cast<std::uint32_t>(v);
        }
        return m;
    }

private:
    std::uint32_t height_ = 0;
    std::uint32_t width_ = 0;
    std::vector<std::uint32_t> labels_;
};

}  // namespace dpn

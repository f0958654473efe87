#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace acnorm {

// Dense row-major tensor of doubles, up to 4 dimensions in practice.
// All layer math in the project runs in 64-bit precision.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Tensor t({rows.size(), rows.begin()->size()});
        std::size_t i = 0;
        for (const auto& row : rows)
            for (double v : row) t.data_[i++] = v;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) {
        return data_[i * shape_[1] + j];
    }
    const double& operator()(std::size_t i, std::size_t j) const {
        return data_[i * shape_[1] + j];
    }
    double& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    const double& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_abs_diff(const Tensor& o) const {
        assert(same_shape(o));
        double m = 0.0;
        for (std::size_t i = 0; i < data_.size(); ++i)
            m = std::max(m, std::abs(data_[i] - o.data_[i]));
        return m;
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

} // namespace acnorm

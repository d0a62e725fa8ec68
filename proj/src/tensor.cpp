#include "docmi/tensor.hpp"

#include <cmath>

#include "docmi/common.hpp"
#include "docmi/rng.hpp"

namespace docmi {

std::int64_t shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        require(d >= 1, "tensor dimensions must be >= 1");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    require(shape_size(shape) == static_cast<std::int64_t>(data.size()),
            "tensor data length does not match shape");
}

Tensor Tensor::zeros(std::vector<int> s) {
    std::vector<double> d(static_cast<std::size_t>(shape_size(s)), 0.0);
    return Tensor(std::move(s), std::move(d));
}

Tensor Tensor::full(std::vector<int> s, double value) {
    std::vector<double> d(static_cast<std::size_t>(shape_size(s)), value);
    return Tensor(std::move(s), std::move(d));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::kaiming(std::vector<int> s, int fan_in, Rng& rng) {
    require(fan_in >= 1, "kaiming init requires fan_in >= 1");
    Tensor t = zeros(std::move(s));
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& x : t.data) x = std_dev * rng.normal();
    return t;
}

Tensor Tensor::gaussian(std::vector<int> s, double stddev, Rng& rng) {
    require(stddev >= 0.0, "gaussian init requires stddev >= 0");
    Tensor t = zeros(std::move(s));
    for (double& x : t.data) x = stddev * rng.normal();
    return t;
}

int Tensor::rows() const {
    require(shape.size() == 2, "rows(): tensor is not rank 2");
    return shape[0];
}

int Tensor::cols() const {
    require(shape.size() == 2, "cols(): tensor is not rank 2");
    return shape[1];
}

double& Tensor::at(int r, int c) {
    return data[static_cast<std::size_t>(r) * shape[1] + c];
}

double Tensor::at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * shape[1] + c];
}

std::span<double> Tensor::row(int r) {
    return {data.data() + static_cast<std::size_t>(r) * shape[1],
            static_cast<std::size_t>(shape[1])};
}

std::span<const double> Tensor::row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * shape[1],
            static_cast<std::size_t>(shape[1])};
}

double Tensor::scalar_value() const {
    require(is_scalar(), "scalar_value(): tensor is not rank 0");
    return data[0];
}

bool Tensor::finite() const { return all_finite(data); }

double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (double x : t.data) s += x * x;
    return std::sqrt(s);
}

double dot(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

void clip_by_norm(Tensor& t, double max_norm) {
    require(max_norm > 0.0, "clip_by_norm: max_norm must be positive");
    const double n = l2_norm(t);
    if (n > max_norm) {
        const double scale = max_norm / n;
        for (double& x : t.data) x *= scale;
    }
}

} // namespace docmi

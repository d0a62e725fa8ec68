#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace docmi {

class Rng;

// Dense row-major tensor of doubles. Rank 0 (scalar), 1 or 2 is all the toy
// model needs. Values are expected to stay finite; ops that can produce
// NaN/Inf check and throw NumericError.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> shape_, std::vector<double> data_);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);
    // I.i.d. normal entries, mean 0, variance 2/fan_in.
    static Tensor kaiming(std::vector<int> shape, int fan_in, Rng& rng);
    // I.i.d. normal entries with the given standard deviation.
    static Tensor gaussian(std::vector<int> shape, double stddev, Rng& rng);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    bool is_scalar() const { return shape.empty(); }
    int rows() const;
    int cols() const;

    double& at(int r, int c);
    double at(int r, int c) const;
    std::span<double> row(int r);
    std::span<const double> row(int r) const;

    double scalar_value() const;
    bool finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::int64_t shape_size(const std::vector<int>& shape);

double l2_norm(const Tensor& t);
double dot(const Tensor& a, const Tensor& b);
// Scales t in place so its norm is exactly max_norm when it exceeds max_norm.
void clip_by_norm(Tensor& t, double max_norm);

} // namespace docmi

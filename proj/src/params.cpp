#include "docmi/params.hpp"

#include <cmath>

#include "docmi/common.hpp"

namespace docmi {

void ParameterSet::add(const std::string& name, Tensor t) {
    require(!index_.contains(name), "ParameterSet: duplicate name '" + name + "'");
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(t));
}

bool ParameterSet::contains(const std::string& name) const {
    return index_.contains(name);
}

Tensor& ParameterSet::get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParameterSet: unknown name '" + name + "'");
    return tensors_[it->second];
}

const Tensor& ParameterSet::get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParameterSet: unknown name '" + name + "'");
    return tensors_[it->second];
}

std::int64_t ParameterSet::total_size() const {
    std::int64_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet z;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        z.add(names_[i], Tensor::zeros(tensors_[i].shape));
    }
    return z;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].shape != other.tensors_[i].shape) return false;
    }
    return true;
}

double l2_norm(const ParameterSet& p) {
    double s = 0.0;
    for (const std::string& name : p.names()) {
        for (double x : p.get(name).data) s += x * x;
    }
    return std::sqrt(s);
}

double l2_distance(const ParameterSet& a, const ParameterSet& b) {
    require(a.same_layout(b), "l2_distance: parameter sets differ in layout");
    double s = 0.0;
    for (const std::string& name : a.names()) {
        const Tensor& ta = a.get(name);
        const Tensor& tb = b.get(name);
        for (std::size_t i = 0; i < ta.data.size(); ++i) {
            const double d = ta.data[i] - tb.data[i];
            s += d * d;
        }
    }
    return std::sqrt(s);
}

void axpy(double a, const ParameterSet& x, ParameterSet& y) {
    require(x.same_layout(y), "axpy: parameter sets differ in layout");
    for (const std::string& name : x.names()) {
        const Tensor& tx = x.get(name);
        Tensor& ty = y.get(name);
        for (std::size_t i = 0; i < tx.data.size(); ++i) ty.data[i] += a * tx.data[i];
    }
}

ParameterSet subset(const ParameterSet& p, const std::vector<std::string>& names) {
    ParameterSet out;
    for (const std::string& name : names) out.add(name, p.get(name));
    return out;
}

void clip_by_norm(ParameterSet& p, double max_norm) {
    require(max_norm > 0.0, "clip_by_norm: max_norm must be positive");
    const double n = l2_norm(p);
    if (n > max_norm) {
        const double scale = max_norm / n;
        for (const std::string& name : p.names()) {
            for (double& x : p.get(name).data) x *= scale;
        }
    }
}

} // namespace docmi

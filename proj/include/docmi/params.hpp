#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "docmi/tensor.hpp"

namespace docmi {

// Ordered collection of named tensors. Iteration always follows insertion
// order, so reductions over a ParameterSet are deterministic. Used for model
// parameters, gradient maps and optimizer state alike.
class ParameterSet {
public:
    void add(const std::string& name, Tensor t);
    bool contains(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;

    std::size_t count() const { return names_.size(); }
    std::int64_t total_size() const;
    const std::vector<std::string>& names() const { return names_; }

    // Same names and shapes, all entries zero.
    ParameterSet zeros_like() const;

    bool same_layout(const ParameterSet& other) const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

// Euclidean norm over all entries of all tensors; invariant to how the
// entries are grouped into tensors.
double l2_norm(const ParameterSet& p);
double l2_distance(const ParameterSet& a, const ParameterSet& b);
// Treats the whole set as one flattened vector for the norm test.
void clip_by_norm(ParameterSet& p, double max_norm);

// y += a * x, matching layouts required.
void axpy(double a, const ParameterSet& x, ParameterSet& y);
// Picks the named tensors, preserving the given order. Throws on a miss.
ParameterSet subset(const ParameterSet& p, const std::vector<std::string>& names);

} // namespace docmi

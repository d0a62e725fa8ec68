#pragma once

#include <string>
#include <vector>

#include "docmi/params.hpp"
#include "docmi/tensor.hpp"

namespace docmi {

// Numerically safe softmax of one logit row (max-subtraction).
std::vector<double> softmax_row(std::span<const double> logits);

// Reverse-mode automatic differentiation over a fixed op set:
// matmul, add, elementwise mul, softmax, log, tanh, embedding lookup,
// layer norm, summed cross-entropy, row concat and scalar scaling.
// Each op is finite-difference testable; the closure is exactly what the
// toy sequence model needs.
//
// A Tape owns the recorded graph. Ops return Ref handles into the tape.
// backward() visits nodes once, in reverse recording order (which is a
// reverse topological order since ops only consume earlier nodes).
class Tape {
public:
    struct Ref {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    // Differentiable leaf. Named leaves appear in the gradient map.
    Ref leaf(Tensor value, std::string name);
    // Non-differentiable input; gradients never flow into it.
    Ref constant(Tensor value);

    Ref add(Ref a, Ref b);             // same shape
    Ref add_rowvec(Ref m, Ref v);      // {r,c} + {c}, v broadcast over rows
    Ref mul(Ref a, Ref b);             // elementwise, same shape
    Ref scale(Ref a, double c);
    Ref matmul(Ref a, Ref b, bool transpose_b = false);
    Ref softmax_rows(Ref a);
    Ref log(Ref a);
    Ref tanh(Ref a);
    Ref embedding(Ref table, std::vector<int> ids);
    Ref layer_norm(Ref x, Ref gain, Ref bias);
    // Sum over rows of -log softmax(logits)[target]. Scalar output.
    Ref cross_entropy_sum(Ref logits, std::vector<int> targets);
    Ref concat_rows(Ref a, Ref b);
    Ref sum(Ref a);                    // reduce to scalar

    const Tensor& value(Ref r) const;
    // Per-row -log p(target); valid only for a cross_entropy_sum node.
    const std::vector<double>& cross_entropy_rows(Ref r) const;

    // Reverse pass from a scalar output. Populates gradients for every leaf;
    // leaves not reachable from the output get exactly zero. Throws
    // ContractError for a non-scalar output and NumericError if any leaf
    // gradient is non-finite.
    void backward(Ref scalar_output);

    // Gradient of the last backward() by leaf handle.
    const Tensor& grad(Ref leaf_ref) const;
    // Gradients of all named leaves, as a ParameterSet in recording order.
    ParameterSet named_grads() const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op {
        kLeaf, kConst, kAdd, kAddRowVec, kMul, kScale, kMatmul, kMatmulNT,
        kSoftmaxRows, kLog, kTanh, kEmbedding, kLayerNorm, kCrossEntropySum,
        kConcatRows, kSum,
    };

    struct Node {
        Op op;
        Tensor value;
        Tensor grad;
        int in0 = -1;
        int in1 = -1;
        int in2 = -1;
        double alpha = 0.0;            // kScale factor
        std::vector<int> ids;          // embedding ids / cross-entropy targets
        std::vector<double> aux;       // layer_norm: per-row inv_std; CE: per-row loss
        std::string name;              // named leaf
    };

    Ref push(Node n);
    Node& node(Ref r);
    const Node& node(Ref r) const;
    void backprop_node(int i);

    std::vector<Node> nodes_;
    bool backward_done_ = false;

    static constexpr double kLayerNormEps = 1e-5;
};

} // namespace docmi

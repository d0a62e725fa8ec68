#include "docmi/tape.hpp"

#include <algorithm>
#include <cmath>

#include "docmi/common.hpp"

namespace docmi {

namespace {

void check_finite(const Tensor& t, const char* where) {
    if (!t.finite()) throw NumericError(std::string(where) + ": non-finite value produced");
}

double logsumexp(std::span<const double> xs) {
    double m = xs[0];
    for (double x : xs) m = std::max(m, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

} // namespace

// Shared by the softmax op and by decoding code that needs a distribution
// from raw logits outside a tape.
std::vector<double> softmax_row(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    double m = logits[0];
    for (double x : logits) m = std::max(m, x);
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        s += out[i];
    }
    for (double& x : out) x /= s;
    return out;
}

Tape::Ref Tape::push(Node n) {
    check_finite(n.value, "tape op");
    n.grad = Tensor();
    nodes_.push_back(std::move(n));
    return Ref{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Ref r) {
    require(r.valid() && r.id < static_cast<int>(nodes_.size()), "tape: invalid ref");
    return nodes_[static_cast<std::size_t>(r.id)];
}

const Tape::Node& Tape::node(Ref r) const {
    require(r.valid() && r.id < static_cast<int>(nodes_.size()), "tape: invalid ref");
    return nodes_[static_cast<std::size_t>(r.id)];
}

Tape::Ref Tape::leaf(Tensor value, std::string name) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.name = std::move(name);
    return push(std::move(n));
}

Tape::Ref Tape::constant(Tensor value) {
    Node n;
    n.op = Op::kConst;
    n.value = std::move(value);
    return push(std::move(n));
}

Tape::Ref Tape::add(Ref a, Ref b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    require(ta.same_shape(tb), "add: shape mismatch");
    Node n;
    n.op = Op::kAdd;
    n.in0 = a.id;
    n.in1 = b.id;
    n.value = ta;
    for (std::size_t i = 0; i < tb.data.size(); ++i) n.value.data[i] += tb.data[i];
    return push(std::move(n));
}

Tape::Ref Tape::add_rowvec(Ref m, Ref v) {
    const Tensor& tm = node(m).value;
    const Tensor& tv = node(v).value;
    require(tm.shape.size() == 2 && tv.shape.size() == 1 && tm.cols() == tv.shape[0],
            "add_rowvec: expected {r,c} + {c}");
    Node n;
    n.op = Op::kAddRowVec;
    n.in0 = m.id;
    n.in1 = v.id;
    n.value = tm;
    for (int r = 0; r < tm.rows(); ++r) {
        auto row = n.value.row(r);
        for (int c = 0; c < tm.cols(); ++c) row[c] += tv.data[static_cast<std::size_t>(c)];
    }
    return push(std::move(n));
}

Tape::Ref Tape::mul(Ref a, Ref b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    require(ta.same_shape(tb), "mul: shape mismatch");
    Node n;
    n.op = Op::kMul;
    n.in0 = a.id;
    n.in1 = b.id;
    n.value = ta;
    for (std::size_t i = 0; i < tb.data.size(); ++i) n.value.data[i] *= tb.data[i];
    return push(std::move(n));
}

Tape::Ref Tape::scale(Ref a, double c) {
    Node n;
    n.op = Op::kScale;
    n.in0 = a.id;
    n.alpha = c;
    n.value = node(a).value;
    for (double& x : n.value.data) x *= c;
    return push(std::move(n));
}

Tape::Ref Tape::matmul(Ref a, Ref b, bool transpose_b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    require(ta.shape.size() == 2 && tb.shape.size() == 2, "matmul: rank-2 operands required");
    const int m = ta.rows();
    const int k = ta.cols();
    const int bn = transpose_b ? tb.rows() : tb.cols();
    const int bk = transpose_b ? tb.cols() : tb.rows();
    require(k == bk, "matmul: inner dimensions disagree");

    Node n;
    n.op = transpose_b ? Op::kMatmulNT : Op::kMatmul;
    n.in0 = a.id;
    n.in1 = b.id;
    n.value = Tensor::zeros({m, bn});
    if (!transpose_b) {
        for (int i = 0; i < m; ++i) {
            const double* arow = ta.data.data() + static_cast<std::size_t>(i) * k;
            double* crow = n.value.data.data() + static_cast<std::size_t>(i) * bn;
            for (int p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = tb.data.data() + static_cast<std::size_t>(p) * bn;
                for (int j = 0; j < bn; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            const double* arow = ta.data.data() + static_cast<std::size_t>(i) * k;
            double* crow = n.value.data.data() + static_cast<std::size_t>(i) * bn;
            for (int j = 0; j < bn; ++j) {
                const double* brow = tb.data.data() + static_cast<std::size_t>(j) * k;
                double s = 0.0;
                for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
                crow[j] = s;
            }
        }
    }
    return push(std::move(n));
}

Tape::Ref Tape::softmax_rows(Ref a) {
    const Tensor& ta = node(a).value;
    require(ta.shape.size() == 2, "softmax_rows: rank-2 input required");
    Node n;
    n.op = Op::kSoftmaxRows;
    n.in0 = a.id;
    n.value = Tensor::zeros(ta.shape);
    for (int r = 0; r < ta.rows(); ++r) {
        const auto probs = softmax_row(ta.row(r));
        std::copy(probs.begin(), probs.end(), n.value.row(r).begin());
    }
    return push(std::move(n));
}

Tape::Ref Tape::log(Ref a) {
    const Tensor& ta = node(a).value;
    Node n;
    n.op = Op::kLog;
    n.in0 = a.id;
    n.value = ta;
    for (double& x : n.value.data) x = std::log(x);
    return push(std::move(n));
}

Tape::Ref Tape::tanh(Ref a) {
    Node n;
    n.op = Op::kTanh;
    n.in0 = a.id;
    n.value = node(a).value;
    for (double& x : n.value.data) x = std::tanh(x);
    return push(std::move(n));
}

Tape::Ref Tape::embedding(Ref table, std::vector<int> ids) {
    const Tensor& tt = node(table).value;
    require(tt.shape.size() == 2, "embedding: table must be rank 2");
    require(!ids.empty(), "embedding: empty id list");
    const int d = tt.cols();
    Node n;
    n.op = Op::kEmbedding;
    n.in0 = table.id;
    n.value = Tensor::zeros({static_cast<int>(ids.size()), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && ids[i] < tt.rows(), "embedding: id out of range");
        const auto src = tt.row(ids[i]);
        std::copy(src.begin(), src.end(), n.value.row(static_cast<int>(i)).begin());
    }
    n.ids = std::move(ids);
    return push(std::move(n));
}

Tape::Ref Tape::layer_norm(Ref x, Ref gain, Ref bias) {
    const Tensor& tx = node(x).value;
    const Tensor& tg = node(gain).value;
    const Tensor& tb = node(bias).value;
    require(tx.shape.size() == 2, "layer_norm: rank-2 input required");
    const int cols = tx.cols();
    require(tg.shape == std::vector<int>{cols} && tb.shape == std::vector<int>{cols},
            "layer_norm: gain/bias must be {cols}");

    Node n;
    n.op = Op::kLayerNorm;
    n.in0 = x.id;
    n.in1 = gain.id;
    n.in2 = bias.id;
    n.value = Tensor::zeros(tx.shape);
    n.aux.resize(static_cast<std::size_t>(tx.rows()));
    for (int r = 0; r < tx.rows(); ++r) {
        const auto in = tx.row(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= cols;
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= cols;
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        n.aux[static_cast<std::size_t>(r)] = inv_std;
        auto out = n.value.row(r);
        for (int c = 0; c < cols; ++c) {
            out[c] = tg.data[static_cast<std::size_t>(c)] * (in[c] - mean) * inv_std +
                     tb.data[static_cast<std::size_t>(c)];
        }
    }
    return push(std::move(n));
}

Tape::Ref Tape::cross_entropy_sum(Ref logits, std::vector<int> targets) {
    const Tensor& tl = node(logits).value;
    require(tl.shape.size() == 2, "cross_entropy_sum: rank-2 logits required");
    require(static_cast<int>(targets.size()) == tl.rows(),
            "cross_entropy_sum: one target per row required");
    Node n;
    n.op = Op::kCrossEntropySum;
    n.in0 = logits.id;
    n.aux.resize(targets.size());
    double total = 0.0;
    for (int r = 0; r < tl.rows(); ++r) {
        require(targets[static_cast<std::size_t>(r)] >= 0 &&
                    targets[static_cast<std::size_t>(r)] < tl.cols(),
                "cross_entropy_sum: target out of range");
        const auto row = tl.row(r);
        const double loss = logsumexp(row) - row[static_cast<std::size_t>(targets[static_cast<std::size_t>(r)])];
        n.aux[static_cast<std::size_t>(r)] = loss;
        total += loss;
    }
    n.ids = std::move(targets);
    n.value = Tensor::scalar(total);
    return push(std::move(n));
}

Tape::Ref Tape::concat_rows(Ref a, Ref b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    require(ta.shape.size() == 2 && tb.shape.size() == 2 && ta.cols() == tb.cols(),
            "concat_rows: column counts must match");
    Node n;
    n.op = Op::kConcatRows;
    n.in0 = a.id;
    n.in1 = b.id;
    n.value = Tensor::zeros({ta.rows() + tb.rows(), ta.cols()});
    std::copy(ta.data.begin(), ta.data.end(), n.value.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), n.value.data.begin() + ta.data.size());
    return push(std::move(n));
}

Tape::Ref Tape::sum(Ref a) {
    Node n;
    n.op = Op::kSum;
    n.in0 = a.id;
    double s = 0.0;
    for (double x : node(a).value.data) s += x;
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

const Tensor& Tape::value(Ref r) const { return node(r).value; }

const std::vector<double>& Tape::cross_entropy_rows(Ref r) const {
    const Node& n = node(r);
    require(n.op == Op::kCrossEntropySum, "cross_entropy_rows: not a cross-entropy node");
    return n.aux;
}

void Tape::backward(Ref scalar_output) {
    const Node& out = node(scalar_output);
    require(out.value.is_scalar(), "backward: output must be a scalar");

    for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
    nodes_[static_cast<std::size_t>(scalar_output.id)].grad.data[0] = 1.0;

    for (int i = scalar_output.id; i >= 0; --i) backprop_node(i);

    backward_done_ = true;
    for (const Node& n : nodes_) {
        if (n.op == Op::kLeaf && !n.grad.finite()) {
            throw NumericError("backward: non-finite gradient for leaf '" + n.name + "'");
        }
    }
}

void Tape::backprop_node(int i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    const Tensor& g = n.grad;
    auto& in0 = n.in0 >= 0 ? nodes_[static_cast<std::size_t>(n.in0)] : n;
    switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
        return;
    case Op::kAdd: {
        Node& in1 = nodes_[static_cast<std::size_t>(n.in1)];
        for (std::size_t k = 0; k < g.data.size(); ++k) {
            in0.grad.data[k] += g.data[k];
            in1.grad.data[k] += g.data[k];
        }
        return;
    }
    case Op::kAddRowVec: {
        Node& in1 = nodes_[static_cast<std::size_t>(n.in1)];
        const int cols = n.value.cols();
        for (int r = 0; r < n.value.rows(); ++r) {
            const auto grow = g.row(r);
            for (int c = 0; c < cols; ++c) {
                in0.grad.at(r, c) += grow[c];
                in1.grad.data[static_cast<std::size_t>(c)] += grow[c];
            }
        }
        return;
    }
    case Op::kMul: {
        Node& in1 = nodes_[static_cast<std::size_t>(n.in1)];
        for (std::size_t k = 0; k < g.data.size(); ++k) {
            in0.grad.data[k] += g.data[k] * in1.value.data[k];
            in1.grad.data[k] += g.data[k] * in0.value.data[k];
        }
        return;
    }
    case Op::kScale: {
        for (std::size_t k = 0; k < g.data.size(); ++k) in0.grad.data[k] += n.alpha * g.data[k];
        return;
    }
    case Op::kMatmul: {
        // C = A.B : dA += G.B^T, dB += A^T.G
        Node& in1 = nodes_[static_cast<std::size_t>(n.in1)];
        const int m = in0.value.rows();
        const int k = in0.value.cols();
        const int nn = in1.value.cols();
        for (int r = 0; r < m; ++r) {
            const double* grow = g.data.data() + static_cast<std::size_t>(r) * nn;
            double* darow = in0.grad.data.data() + static_cast<std::size_t>(r) * k;
            const double* arow = in0.value.data.data() + static_cast<std::size_t>(r) * k;
            for (int p = 0; p < k; ++p) {
                const double* brow = in1.value.data.data() + static_cast<std::size_t>(p) * nn;
                double* dbrow = in1.grad.data.data() + static_cast<std::size_t>(p) * nn;
                double s = 0.0;
                const double av = arow[p];
                for (int j = 0; j < nn; ++j) {
                    s += grow[j] * brow[j];
                    dbrow[j] += av * grow[j];
                }
                darow[p] += s;
            }
        }
        return;
    }
    case Op::kMatmulNT: {
        // C = A.B^T : dA += G.B, dB += G^T.A
        Node& in1 = nodes_[static_cast<std::size_t>(n.in1)];
        const int m = in0.value.rows();
        const int k = in0.value.cols();
        const int nn = in1.value.rows();
        for (int r = 0; r < m; ++r) {
            const double* grow = g.data.data() + static_cast<std::size_t>(r) * nn;
            const double* arow = in0.value.data.data() + static_cast<std::size_t>(r) * k;
            double* darow = in0.grad.data.data() + static_cast<std::size_t>(r) * k;
            for (int j = 0; j < nn; ++j) {
                const double gv = grow[j];
                if (gv == 0.0) continue;
                const double* brow = in1.value.data.data() + static_cast<std::size_t>(j) * k;
                double* dbrow = in1.grad.data.data() + static_cast<std::size_t>(j) * k;
                for (int p = 0; p < k; ++p) {
                    darow[p] += gv * brow[p];
                    dbrow[p] += gv * arow[p];
                }
            }
        }
        return;
    }
    case Op::kSoftmaxRows: {
        for (int r = 0; r < n.value.rows(); ++r) {
            const auto s = n.value.row(r);
            const auto grow = g.row(r);
            double gs = 0.0;
            for (int c = 0; c < n.value.cols(); ++c) gs += grow[c] * s[c];
            for (int c = 0; c < n.value.cols(); ++c) {
                in0.grad.at(r, c) += s[c] * (grow[c] - gs);
            }
        }
        return;
    }
    case Op::kLog: {
        for (std::size_t k = 0; k < g.data.size(); ++k) {
            in0.grad.data[k] += g.data[k] / in0.value.data[k];
        }
        return;
    }
    case Op::kTanh: {
        for (std::size_t k = 0; k < g.data.size(); ++k) {
            in0.grad.data[k] += g.data[k] * (1.0 - n.value.data[k] * n.value.data[k]);
        }
        return;
    }
    case Op::kEmbedding: {
        const int d = n.value.cols();
        for (std::size_t i2 = 0; i2 < n.ids.size(); ++i2) {
            const auto grow = g.row(static_cast<int>(i2));
            double* trow = in0.grad.data.data() + static_cast<std::size_t>(n.ids[i2]) * d;
            for (int c = 0; c < d; ++c) trow[c] += grow[c];
        }
        return;
    }
    case Op::kLayerNorm: {
        Node& gain = nodes_[static_cast<std::size_t>(n.in1)];
        Node& bias = nodes_[static_cast<std::size_t>(n.in2)];
        const int cols = n.value.cols();
        for (int r = 0; r < n.value.rows(); ++r) {
            const auto in = in0.value.row(r);
            const auto grow = g.row(r);
            const double inv_std = n.aux[static_cast<std::size_t>(r)];
            double mean = 0.0;
            for (double v : in) mean += v;
            mean /= cols;
            // x_hat, gy = g * gain, and the two row means the backward needs.
            double mean_gy = 0.0;
            double mean_gy_xhat = 0.0;
            for (int c = 0; c < cols; ++c) {
                const double xhat = (in[c] - mean) * inv_std;
                const double gy = grow[c] * gain.value.data[static_cast<std::size_t>(c)];
                mean_gy += gy;
                mean_gy_xhat += gy * xhat;
                gain.grad.data[static_cast<std::size_t>(c)] += grow[c] * xhat;
                bias.grad.data[static_cast<std::size_t>(c)] += grow[c];
            }
            mean_gy /= cols;
            mean_gy_xhat /= cols;
            for (int c = 0; c < cols; ++c) {
                const double xhat = (in[c] - mean) * inv_std;
                const double gy = grow[c] * gain.value.data[static_cast<std::size_t>(c)];
                in0.grad.at(r, c) += (gy - mean_gy - xhat * mean_gy_xhat) * inv_std;
            }
        }
        return;
    }
    case Op::kCrossEntropySum: {
        const double gs = g.data[0];
        const Tensor& logits = in0.value;
        for (int r = 0; r < logits.rows(); ++r) {
            const auto probs = softmax_row(logits.row(r));
            for (int c = 0; c < logits.cols(); ++c) {
                double p = probs[static_cast<std::size_t>(c)];
                if (c == n.ids[static_cast<std::size_t>(r)]) p -= 1.0;
                in0.grad.at(r, c) += gs * p;
            }
        }
        return;
    }
    case Op::kConcatRows: {
        Node& in1 = nodes_[static_cast<std::size_t>(n.in1)];
        const std::size_t na = in0.value.data.size();
        for (std::size_t k = 0; k < na; ++k) in0.grad.data[k] += g.data[k];
        for (std::size_t k = 0; k < in1.value.data.size(); ++k) {
            in1.grad.data[k] += g.data[na + k];
        }
        return;
    }
    case Op::kSum: {
        for (double& x : in0.grad.data) x += g.data[0];
        return;
    }
    }
}

const Tensor& Tape::grad(Ref leaf_ref) const {
    require(backward_done_, "grad: backward() has not run");
    return node(leaf_ref).grad;
}

ParameterSet Tape::named_grads() const {
    require(backward_done_, "named_grads: backward() has not run");
    ParameterSet grads;
    for (const Node& n : nodes_) {
        if (n.op == Op::kLeaf && !n.name.empty()) grads.add(n.name, n.grad);
    }
    return grads;
}

} // namespace docmi

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "docmi/adam.hpp"
#include "docmi/common.hpp"
#include "docmi/rng.hpp"
#include "docmi/tape.hpp"
#include "docmi/tensor.hpp"

using namespace docmi;

namespace {

// A reproducible random computation plan: leaves plus a fixed op sequence.
// Replaying it on perturbed leaf values gives the finite-difference oracle a
// pure function to probe.
struct GraphPlan {
    struct Step {
        // aggregate-initialized in tests with a prefix of the fields
        enum Kind {
            kAdd, kAddRowVec, kMul, kScale, kMatmul, kMatmulNT, kSoftmax,
            kLogSoftmax, kTanh, kEmbedding, kLayerNorm, kConcat,
        } kind;
        int a = -1;
        int b = -1;
        int c = -1;
        double alpha = 1.0;
        std::vector<int> ids;
    };
    enum Finisher { kSumTanh, kCrossEntropy } finisher = kSumTanh;

    std::vector<std::vector<int>> leaf_shapes;
    std::vector<Step> steps;
    std::vector<int> targets;

    double eval(const std::vector<Tensor>& leaves, Tape* out_tape = nullptr,
                std::vector<Tape::Ref>* out_leaf_refs = nullptr) const {
        Tape local;
        Tape& tape = out_tape ? *out_tape : local;
        std::vector<Tape::Ref> vals;
        for (std::size_t i = 0; i < leaves.size(); ++i) {
            vals.push_back(tape.leaf(leaves[i], "leaf" + std::to_string(i)));
        }
        if (out_leaf_refs) *out_leaf_refs = vals;
        for (const Step& s : steps) {
            Tape::Ref r;
            switch (s.kind) {
            case Step::kAdd: r = tape.add(vals[s.a], vals[s.b]); break;
            case Step::kAddRowVec: r = tape.add_rowvec(vals[s.a], vals[s.b]); break;
            case Step::kMul: r = tape.mul(vals[s.a], vals[s.b]); break;
            case Step::kScale: r = tape.scale(vals[s.a], s.alpha); break;
            case Step::kMatmul: r = tape.matmul(vals[s.a], vals[s.b]); break;
            case Step::kMatmulNT: r = tape.matmul(vals[s.a], vals[s.b], true); break;
            case Step::kSoftmax: r = tape.softmax_rows(vals[s.a]); break;
            case Step::kLogSoftmax: r = tape.log(tape.softmax_rows(vals[s.a])); break;
            case Step::kTanh: r = tape.tanh(vals[s.a]); break;
            case Step::kEmbedding: r = tape.embedding(vals[s.a], s.ids); break;
            case Step::kLayerNorm: r = tape.layer_norm(vals[s.a], vals[s.b], vals[s.c]); break;
            case Step::kConcat: r = tape.concat_rows(vals[s.a], vals[s.b]); break;
            }
            vals.push_back(r);
        }
        Tape::Ref last = vals.back();
        Tape::Ref out = finisher == kCrossEntropy
                            ? tape.cross_entropy_sum(last, targets)
                            : tape.sum(tape.tanh(last));
        const double y = tape.value(out).scalar_value();
        if (out_tape) tape.backward(out);
        return y;
    }
};

// Builds a random plan over small matrices. Every op kind appears across the
// generated population.
GraphPlan random_plan(Rng& rng) {
    GraphPlan plan;
    const int r = 2 + static_cast<int>(rng.below(3));
    const int c = 2 + static_cast<int>(rng.below(3));
    plan.leaf_shapes = {{r, c}, {r, c}, {c, c}, {c}, {c}};

    struct Shaped { int idx; int rows; int cols; };
    std::vector<Shaped> mats = {{0, r, c}, {1, r, c}, {2, c, c}};

    const int n_steps = 2 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n_steps; ++i) {
        const Shaped cur = mats[rng.below(mats.size())];
        GraphPlan::Step s;
        switch (rng.below(8)) {
        case 0: {
            // pair with a same-shape operand if one exists
            int other = -1;
            for (const auto& m : mats) {
                if (m.idx != cur.idx && m.rows == cur.rows && m.cols == cur.cols) other = m.idx;
            }
            if (other < 0) { s.kind = GraphPlan::Step::kTanh; s.a = cur.idx; break; }
            s.kind = rng.below(2) ? GraphPlan::Step::kAdd : GraphPlan::Step::kMul;
            s.a = cur.idx;
            s.b = other;
            break;
        }
        case 1:
            s.kind = GraphPlan::Step::kMatmul;
            s.a = cur.idx;
            s.b = 2; // {c,c}
            if (cur.cols != c) { s.kind = GraphPlan::Step::kTanh; s.b = -1; }
            break;
        case 2:
            s.kind = GraphPlan::Step::kMatmulNT;
            s.a = cur.idx;
            s.b = 2;
            if (cur.cols != c) { s.kind = GraphPlan::Step::kTanh; s.b = -1; }
            break;
        case 3: s.kind = GraphPlan::Step::kSoftmax; s.a = cur.idx; break;
        case 4: s.kind = GraphPlan::Step::kLogSoftmax; s.a = cur.idx; break;
        case 5:
            s.kind = GraphPlan::Step::kLayerNorm;
            s.a = cur.idx;
            s.b = 3;
            s.c = 4;
            if (cur.cols != c) { s.kind = GraphPlan::Step::kTanh; }
            break;
        case 6:
            s.kind = GraphPlan::Step::kAddRowVec;
            s.a = cur.idx;
            s.b = 3;
            if (cur.cols != c) { s.kind = GraphPlan::Step::kTanh; }
            break;
        default: s.kind = GraphPlan::Step::kScale; s.a = cur.idx; s.alpha = 0.5 + rng.uniform(); break;
        }
        plan.steps.push_back(s);
        const int rows_out = cur.rows;
        mats.push_back({static_cast<int>(plan.leaf_shapes.size() + plan.steps.size()) - 1,
                        rows_out, s.kind == GraphPlan::Step::kMatmulNT ? c : cur.cols});
    }

    const Shaped last = mats.back();
    if (rng.below(2)) {
        plan.finisher = GraphPlan::kCrossEntropy;
        for (int i = 0; i < last.rows; ++i) {
            plan.targets.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(last.cols))));
        }
    }
    return plan;
}

std::vector<Tensor> random_leaves(const GraphPlan& plan, Rng& rng) {
    std::vector<Tensor> leaves;
    for (const auto& shape : plan.leaf_shapes) {
        Tensor t = Tensor::zeros(shape);
        for (double& x : t.data) x = rng.normal();
        leaves.push_back(std::move(t));
    }
    return leaves;
}

// Central finite differences, h = 1e-5, against reverse-mode gradients.
void check_against_fd(const GraphPlan& plan, std::vector<Tensor> leaves) {
    Tape tape;
    std::vector<Tape::Ref> refs;
    plan.eval(leaves, &tape, &refs);
    const double h = 1e-5;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Tensor& g = tape.grad(refs[li]);
        for (std::size_t k = 0; k < leaves[li].data.size(); ++k) {
            const double orig = leaves[li].data[k];
            leaves[li].data[k] = orig + h;
            const double fp = plan.eval(leaves);
            leaves[li].data[k] = orig - h;
            const double fm = plan.eval(leaves);
            leaves[li].data[k] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = g.data[k];
            REQUIRE_MESSAGE(std::fabs(ad - fd) <= 1e-4 * std::max({1.0, std::fabs(ad), std::fabs(fd)}),
                            "leaf ", li, " coord ", k, ": ad=", ad, " fd=", fd);
        }
    }
}

} // namespace

TEST_CASE("backward: square function analytic derivative") {
    Tape tape;
    auto w = tape.leaf(Tensor({1, 1}, {3.0}), "w");
    auto y = tape.sum(tape.mul(w, w));
    tape.backward(y);
    CHECK(tape.grad(w).data[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward: constant output gives zero gradient") {
    Tape tape;
    auto w = tape.leaf(Tensor({1, 1}, {3.0}), "w");
    auto c = tape.constant(Tensor({1, 1}, {7.0}));
    auto y = tape.sum(c);
    tape.backward(y);
    CHECK(tape.grad(w).data[0] == 0.0);
    // unused leaves appear in the gradient map with exact zeros
    ParameterSet grads = tape.named_grads();
    CHECK(grads.get("w").data[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar outputs") {
    Tape tape;
    auto w = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}), "w");
    auto y = tape.tanh(w);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("three-layer random forward matches finite differences") {
    Rng rng(7, "fd-3layer");
    // explicit 3-layer MLP: x.W1 -> tanh -> .W2 -> layer_norm -> .W3 -> CE
    GraphPlan plan;
    plan.leaf_shapes = {{3, 4}, {4, 4}, {4, 4}, {4, 4}, {4}, {4}};
    using S = GraphPlan::Step;
    plan.steps = {
        {S::kMatmul, 0, 1}, {S::kTanh, 6}, {S::kMatmul, 7, 2},
        {S::kLayerNorm, 8, 4, 5}, {S::kMatmul, 9, 3},
    };
    plan.finisher = GraphPlan::kCrossEntropy;
    plan.targets = {1, 0, 3};
    check_against_fd(plan, random_leaves(plan, rng));
}

TEST_CASE("gradient correctness over random op graphs") {
    Rng rng(1234, "fd-graphs");
    for (int i = 0; i < 120; ++i) {
        const GraphPlan plan = random_plan(rng);
        check_against_fd(plan, random_leaves(plan, rng));
    }
}

TEST_CASE("embedding lookup gradients scatter into the table") {
    GraphPlan plan;
    plan.leaf_shapes = {{5, 3}};
    GraphPlan::Step s;
    s.kind = GraphPlan::Step::kEmbedding;
    s.a = 0;
    s.ids = {0, 2, 2, 4};
    plan.steps = {s};
    Rng rng(9, "fd-embed");
    check_against_fd(plan, random_leaves(plan, rng));
}

TEST_CASE("concat_rows gradients split correctly") {
    GraphPlan plan;
    plan.leaf_shapes = {{2, 3}, {3, 3}, {3}, {3}};
    using S = GraphPlan::Step;
    plan.steps = {{S::kConcat, 0, 1}, {S::kSoftmax, 4}};
    Rng rng(11, "fd-concat");
    check_against_fd(plan, random_leaves(plan, rng));
}

TEST_CASE("adam first step hand value") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt(cfg);
    ParameterSet p;
    p.add("w", Tensor({1}, {1.0}));
    ParameterSet g;
    g.add("w", Tensor({1}, {2.0}));
    opt.step(p, g);
    CHECK(std::fabs(p.get("w").data[0] - 0.9) < 1e-6);
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("adam zero gradient is a no-op on parameters") {
    Adam opt(AdamConfig{});
    ParameterSet p;
    p.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
    ParameterSet g = p.zeros_like();
    opt.step(p, g);
    CHECK(p.get("w").data == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("adam constant gradient decreases parameter monotonically") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt(cfg);
    ParameterSet p;
    p.add("w", Tensor({1}, {1.0}));
    ParameterSet g;
    g.add("w", Tensor({1}, {2.0}));
    double prev = 1.0;
    for (int i = 0; i < 2; ++i) {
        opt.step(p, g);
        CHECK(p.get("w").data[0] < prev);
        prev = p.get("w").data[0];
    }
    // second step lands near 0.8: m_hat = 2, v_hat = 4 again by bias correction
    CHECK(std::fabs(p.get("w").data[0] - 0.8) < 1e-6);
}

TEST_CASE("adam rejects layout mismatch") {
    Adam opt(AdamConfig{});
    ParameterSet p;
    p.add("w", Tensor({2}, {1.0, 2.0}));
    ParameterSet g;
    g.add("v", Tensor({2}, {0.0, 0.0}));
    CHECK_THROWS_AS(opt.step(p, g), ContractError);
}

TEST_CASE("kaiming init variance and determinism") {
    Rng rng(42, "kaiming");
    Tensor t = Tensor::kaiming({100, 100}, 50, rng);
    double mean = 0.0;
    for (double x : t.data) mean += x;
    mean /= static_cast<double>(t.size());
    double var = 0.0;
    for (double x : t.data) var += (x - mean) * (x - mean);
    var /= static_cast<double>(t.size());
    CHECK(var == doctest::Approx(0.04).epsilon(0.10));

    Rng r1(7, "same");
    Rng r2(7, "same");
    Tensor a = Tensor::kaiming({10, 10}, 10, r1);
    Tensor b = Tensor::kaiming({10, 10}, 10, r2);
    CHECK(a.data == b.data);

    Rng r3(7, "fan2");
    Tensor c = Tensor::kaiming({200, 50}, 2, r3);
    double m2 = 0.0;
    for (double x : c.data) m2 += x;
    m2 /= static_cast<double>(c.size());
    double v2 = 0.0;
    for (double x : c.data) v2 += (x - m2) * (x - m2);
    v2 /= static_cast<double>(c.size());
    CHECK(v2 == doctest::Approx(1.0).epsilon(0.10));

    CHECK_THROWS_AS(Tensor::kaiming({2, 2}, 0, rng), ContractError);
}

TEST_CASE("l2 norm basics and concatenation property") {
    CHECK(l2_norm(Tensor::zeros({4})) == 0.0);
    CHECK(l2_norm(Tensor({2}, {3.0, 4.0})) == doctest::Approx(5.0));

    Rng rng(3, "l2");
    ParameterSet p;
    Tensor a = Tensor::kaiming({3, 4}, 4, rng);
    Tensor b = Tensor::kaiming({5}, 4, rng);
    p.add("a", a);
    p.add("b", b);
    const double lhs = l2_norm(p) * l2_norm(p);
    const double rhs = l2_norm(a) * l2_norm(a) + l2_norm(b) * l2_norm(b);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("clip_by_norm") {
    Tensor t({2}, {6.0, 8.0}); // norm 10
    Tensor dir = t;
    clip_by_norm(t, 1.0);
    CHECK(l2_norm(t) == doctest::Approx(1.0).epsilon(1e-12));
    // direction preserved
    CHECK(t.data[0] * dir.data[1] == doctest::Approx(t.data[1] * dir.data[0]).epsilon(1e-12));

    Tensor small({2}, {0.3, 0.4});
    clip_by_norm(small, 1.0);
    CHECK(small.data == std::vector<double>{0.3, 0.4});

    Rng rng(17, "clip");
    for (int i = 0; i < 20; ++i) {
        Tensor g = Tensor::kaiming({7}, 1, rng);
        const double before = l2_norm(g);
        clip_by_norm(g, 2.0);
        CHECK(std::fabs(l2_norm(g) - std::min(before, 2.0)) < 1e-12);
    }

    Tensor bad({1}, {1.0});
    CHECK_THROWS_AS(clip_by_norm(bad, 0.0), ContractError);
}

TEST_CASE("rng streams are independent and deterministic") {
    Rng a(5, "alpha");
    Rng b(5, "alpha");
    Rng c(5, "beta");
    CHECK(a.next_u64() == b.next_u64());
    CHECK(a.next_u64() != c.next_u64());
    Rng child = a.fork("child");
    Rng child2 = b.fork("child");
    CHECK(child.next_u64() == child2.next_u64());
}

TEST_CASE("rng uniform and below stay in range") {
    Rng rng(99, "range");
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.below(7) < 7);
    }
}

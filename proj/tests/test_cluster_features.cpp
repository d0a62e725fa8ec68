#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "docmi/cluster_features.hpp"
#include "docmi/common.hpp"

using namespace docmi;

namespace {

// exhaustive best 2-partition by within-cluster squared error
std::vector<int> brute_force_2partition(const std::vector<double>& xs, double* best_sse) {
    const std::size_t n = xs.size();
    std::vector<int> best;
    double best_cost = 1e300;
    // point 0 pinned to cluster 0: masks enumerate clusters for points 1..n-1
    for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
        std::vector<int> assign(n, 0);
        bool has1 = false;
        for (std::size_t i = 1; i < n; ++i) {
            if (mask & (1u << (i - 1))) {
                assign[i] = 1;
                has1 = true;
            }
        }
        if (!has1) continue;
        double cost = 0.0;
        for (int c = 0; c < 2; ++c) {
            double mean = 0.0;
            int k = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] == c) {
                    mean += xs[i];
                    ++k;
                }
            }
            mean /= k;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] == c) cost += (xs[i] - mean) * (xs[i] - mean);
            }
        }
        if (cost < best_cost) {
            best_cost = cost;
            best = assign;
        }
    }
    if (best_sse) *best_sse = best_cost;
    return best;
}

std::vector<int> canonical(std::vector<int> a) {
    if (!a.empty() && a[0] == 1) {
        for (int& x : a) x = 1 - x;
    }
    return a;
}

std::vector<std::vector<double>> lift(const std::vector<double>& xs) {
    std::vector<std::vector<double>> pts;
    for (double x : xs) pts.push_back({x});
    return pts;
}

QuestionFeatures qf_of(int id, std::vector<double> deltas, std::vector<double> steps,
                       std::vector<double> utils) {
    QuestionFeatures q;
    q.doc_id = id;
    q.per_question[FeatureKind::kDelta] = std::move(deltas);
    q.per_question[FeatureKind::kSteps] = std::move(steps);
    q.per_question[FeatureKind::kUtility] = std::move(utils);
    return q;
}

} // namespace

TEST_CASE("aggregators hand values") {
    const std::vector<double> v = {1.0, 2.0, 3.0};
    auto m = aggregate(v, all_aggregations());
    CHECK(m[Agg::kAvg] == doctest::Approx(2.0));
    CHECK(m[Agg::kMin] == 1.0);
    CHECK(m[Agg::kMax] == 3.0);
    CHECK(m[Agg::kMed] == 2.0);

    CHECK(aggregate_one({1, 2, 3, 4}, Agg::kMed) == doctest::Approx(2.5));
    for (Agg a : all_aggregations()) CHECK(aggregate_one({7.0}, a) == 7.0);
    CHECK_THROWS_AS(aggregate_one({}, Agg::kAvg), ContractError);
    CHECK_THROWS_AS(aggregate({1.0}, {}), ContractError);
}

TEST_CASE("trace features skip failures and reject all-failed documents") {
    OptimizationTrace good;
    good.delta = 0.5;
    good.steps = 3;
    good.utility_history = {0.2, 0.4, 0.6, 0.8};
    good.final_loss = 0.7;
    OptimizationTrace bad;
    bad.failed = true;

    const QuestionFeatures qf = features_from_traces(11, {good, bad, good});
    CHECK(qf.doc_id == 11);
    CHECK(qf.per_question.at(FeatureKind::kDelta) == std::vector<double>{0.5, 0.5});
    CHECK(qf.per_question.at(FeatureKind::kSteps) == std::vector<double>{3.0, 3.0});
    CHECK(qf.per_question.at(FeatureKind::kUtility)[0] == doctest::Approx(0.5));
    CHECK(qf.per_question.at(FeatureKind::kLoss) == std::vector<double>{0.7, 0.7});

    CHECK_THROWS_AS(features_from_traces(12, {bad, bad}), ContractError);
}

TEST_CASE("descriptor dimensions follow the selection") {
    std::vector<QuestionFeatures> docs = {
        qf_of(0, {1.0, 2.0}, {3, 4}, {0.1, 0.2}),
        qf_of(1, {2.0, 5.0}, {5, 6}, {0.4, 0.8}),
        qf_of(2, {0.5, 0.6}, {1, 2}, {0.9, 0.7}),
    };
    const std::vector<FeatureKind> f3 = {FeatureKind::kDelta, FeatureKind::kSteps,
                                         FeatureKind::kUtility};
    auto d = build_descriptors(docs, f3, all_aggregations());
    REQUIRE(d.size() == 3);
    CHECK(d[0].raw.size() == 12);
    CHECK(d[0].normalized.size() == 12);
    CHECK(descriptor_columns(f3, all_aggregations()).size() == 12);

    auto d1 = build_descriptors(docs, {FeatureKind::kDelta}, {Agg::kAvg});
    CHECK(d1[0].raw.size() == 1);
    CHECK(d1[0].raw[0] == doctest::Approx(1.5));
    CHECK(d1[1].raw[0] == doctest::Approx(3.5));
}

TEST_CASE("normalized columns are standard and zero-variance columns vanish") {
    std::vector<QuestionFeatures> docs;
    for (int i = 0; i < 7; ++i) {
        docs.push_back(qf_of(i, {static_cast<double>(i) * 0.3 + 0.1},
                             {5.0}, // constant across docs: zero variance
                             {0.05 * i}));
    }
    const std::vector<FeatureKind> fs = {FeatureKind::kDelta, FeatureKind::kSteps,
                                         FeatureKind::kUtility};
    auto d = build_descriptors(docs, fs, {Agg::kAvg});
    for (std::size_t c : {0UL, 2UL}) {
        double mean = 0.0;
        double var = 0.0;
        for (const auto& fd : d) mean += fd.normalized[c];
        mean /= static_cast<double>(d.size());
        for (const auto& fd : d) {
            var += (fd.normalized[c] - mean) * (fd.normalized[c] - mean);
        }
        var /= static_cast<double>(d.size());
        CHECK(std::fabs(mean) < 1e-9);
        CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-9);
    }
    for (const auto& fd : d) CHECK(fd.normalized[1] == 0.0); // constant column

    // permuting documents permutes descriptors, values unchanged
    std::vector<QuestionFeatures> rev(docs.rbegin(), docs.rend());
    auto dr = build_descriptors(rev, fs, {Agg::kAvg});
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& mirror = dr[d.size() - 1 - i];
        CHECK(d[i].doc_id == mirror.doc_id);
        for (std::size_t c = 0; c < d[i].normalized.size(); ++c) {
            CHECK(d[i].normalized[c] == doctest::Approx(mirror.normalized[c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("descriptor construction rejects gaps") {
    QuestionFeatures missing;
    missing.doc_id = 1;
    missing.per_question[FeatureKind::kDelta] = {1.0};
    CHECK_THROWS_AS(
        build_descriptors({missing}, {FeatureKind::kUtility}, {Agg::kAvg}), ContractError);
    CHECK_THROWS_AS(build_descriptors({}, {FeatureKind::kDelta}, {Agg::kAvg}), ContractError);
}

TEST_CASE("kmeans2 separates the textbook example") {
    const auto pts = lift({0.0, 0.1, 5.0, 5.1});
    const ClusterResult r = kmeans2(pts, Rng(1, "km"));
    CHECK(r.assignment[0] == r.assignment[1]);
    CHECK(r.assignment[2] == r.assignment[3]);
    CHECK(r.assignment[0] != r.assignment[2]);
}

TEST_CASE("kmeans2 matches the exhaustive 2-partition oracle") {
    Rng rng(77, "km-oracle");
    int checked = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const int n = 2 + static_cast<int>(rng.below(11)); // 2..12 points
        std::vector<double> xs;
        const bool clustered = rng.below(2) == 1;
        for (int i = 0; i < n; ++i) {
            if (clustered) {
                xs.push_back((rng.below(2) ? 4.0 : 0.0) + rng.normal() * 0.3);
            } else {
                xs.push_back(rng.uniform() * 10.0);
            }
        }
        bool distinct = false;
        for (double x : xs) distinct |= (x != xs[0]);
        if (!distinct) continue;

        double oracle_sse = 0.0;
        const std::vector<int> oracle = brute_force_2partition(xs, &oracle_sse);
        const ClusterResult got = kmeans2(lift(xs), Rng(static_cast<std::uint64_t>(inst), "km"));
        CHECK(canonical(got.assignment) == canonical(oracle));
        CHECK(got.inertia == doctest::Approx(oracle_sse).epsilon(1e-9));
        ++checked;
    }
    CHECK(checked >= 190);
}

TEST_CASE("kmeans2 is order-insensitive up to label swap") {
    Rng rng(5, "km-perm");
    for (int inst = 0; inst < 20; ++inst) {
        std::vector<double> xs;
        const int n = 4 + static_cast<int>(rng.below(8));
        for (int i = 0; i < n; ++i) xs.push_back(rng.uniform() * 10.0);
        const auto a = kmeans2(lift(xs), Rng(9, "s")).assignment;

        std::vector<int> perm(xs.size());
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<double> ys;
        for (int p : perm) ys.push_back(xs[static_cast<std::size_t>(p)]);
        const auto b = kmeans2(lift(ys), Rng(10, "s")).assignment;

        std::vector<int> b_unperm(xs.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            b_unperm[static_cast<std::size_t>(perm[i])] = b[i];
        }
        CHECK(canonical(a) == canonical(b_unperm));
    }
}

TEST_CASE("kmeans2 separates well-split blobs in higher dimensions") {
    Rng rng(21, "blobs");
    for (int inst = 0; inst < 10; ++inst) {
        std::vector<std::vector<double>> pts;
        std::vector<int> truth;
        const int dim = 2 + static_cast<int>(rng.below(4));
        for (int i = 0; i < 18; ++i) {
            const int side = i % 2;
            std::vector<double> p;
            for (int k = 0; k < dim; ++k) {
                p.push_back((side ? 8.0 : 0.0) + rng.normal() * 0.4);
            }
            pts.push_back(std::move(p));
            truth.push_back(side);
        }
        const ClusterResult r =
            kmeans2(pts, Rng(static_cast<std::uint64_t>(inst), "blob-km"));
        CHECK(canonical(r.assignment) == canonical(truth));

        // restart bookkeeping: reported inertia matches the returned partition
        double sse = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto& c = r.centroids[static_cast<std::size_t>(r.assignment[i])];
            for (std::size_t k = 0; k < c.size(); ++k) {
                sse += (pts[i][k] - c[k]) * (pts[i][k] - c[k]);
            }
        }
        CHECK(r.inertia == doctest::Approx(sse).epsilon(1e-9));
    }
}

TEST_CASE("kmeans2 rejects degenerate input") {
    CHECK_THROWS_AS(kmeans2(lift({1.0}), Rng(1, "km")), ContractError);
    CHECK_THROWS_AS(kmeans2(lift({2.0, 2.0, 2.0}), Rng(1, "km")), ContractError);
}

TEST_CASE("membership goes to the low-movement cluster") {
    const auto pts = lift({0.0, 0.1, 5.0, 5.1});
    const ClusterResult r = kmeans2(pts, Rng(2, "km"));
    // direction feature: raw aggregated delta per document
    const std::vector<double> deltas = {0.0, 0.1, 5.0, 5.1};
    const MembershipDecision d = decide_membership(r, pts, deltas, false);
    CHECK(d.is_member[0]);
    CHECK(d.is_member[1]);
    CHECK(!d.is_member[2]);
    CHECK(!d.is_member[3]);
    CHECK(!d.tie_broken);

    // score-like direction: higher means member
    const MembershipDecision inv = decide_membership(r, pts, deltas, true);
    CHECK(!inv.is_member[0]);
    CHECK(inv.is_member[2]);

    // a point at the member centroid has the maximal score of zero
    const auto& centroid = r.centroids[static_cast<std::size_t>(d.member_cluster)];
    const std::vector<std::vector<double>> with_center = {pts[0], pts[1], pts[2], {centroid[0]}};
    const MembershipDecision dc =
        decide_membership(r, with_center, deltas, false);
    CHECK(dc.score[3] == doctest::Approx(0.0));
    for (double s : dc.score) CHECK(s <= 0.0);
}

TEST_CASE("membership labels survive a cluster id swap") {
    const auto pts = lift({0.0, 0.2, 6.0, 6.2});
    ClusterResult r = kmeans2(pts, Rng(3, "km"));
    const std::vector<double> deltas = {0.0, 0.2, 6.0, 6.2};
    const MembershipDecision d = decide_membership(r, pts, deltas, false);

    ClusterResult swapped = r;
    for (int& a : swapped.assignment) a = 1 - a;
    std::swap(swapped.centroids[0], swapped.centroids[1]);
    const MembershipDecision ds = decide_membership(swapped, pts, deltas, false);
    CHECK(d.is_member == ds.is_member);
    CHECK(d.score == ds.score);
}

TEST_CASE("membership tie-break is deterministic and flagged") {
    ClusterResult r;
    r.assignment = {0, 1, 0, 1};
    r.centroids = {{0.0}, {1.0}};
    const auto pts = lift({0.0, 1.0, 0.0, 1.0});
    const std::vector<double> same = {2.0, 2.0, 2.0, 2.0};
    const MembershipDecision d = decide_membership(r, pts, same, false);
    CHECK(d.tie_broken);
    CHECK(d.member_cluster == 0);
}

TEST_CASE("descriptor export round-trips through a readable csv") {
    std::vector<QuestionFeatures> docs = {
        qf_of(100, {1.0}, {2}, {0.3}),
        qf_of(101, {4.0}, {7}, {0.9}),
        qf_of(102, {1.1}, {3}, {0.2}),
    };
    const std::vector<FeatureKind> fs = {FeatureKind::kDelta};
    auto d = build_descriptors(docs, fs, {Agg::kAvg});
    std::vector<std::vector<double>> pts;
    for (const auto& fd : d) pts.push_back(fd.normalized);
    const ClusterResult r = kmeans2(pts, Rng(4, "km"));
    std::vector<double> dir;
    for (const auto& fd : d) dir.push_back(fd.raw[0]);
    const MembershipDecision dec = decide_membership(r, pts, dir, false);

    const std::vector<int> labels = {1, 0, 1};
    export_descriptors("desc.csv", d, descriptor_columns(fs, {Agg::kAvg}), dec, &labels);
    std::ifstream in("desc.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "doc_id,true_label,avg(delta),membership_score,predicted");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    std::remove("desc.csv");
    CHECK(rows == 3);
}

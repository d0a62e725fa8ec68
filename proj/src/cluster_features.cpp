#include "docmi/cluster_features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "docmi/common.hpp"

namespace docmi {

AggregationSet all_aggregations() {
    return {Agg::kAvg, Agg::kMin, Agg::kMax, Agg::kMed};
}

std::string agg_name(Agg a) {
    switch (a) {
    case Agg::kAvg: return "avg";
    case Agg::kMin: return "min";
    case Agg::kMax: return "max";
    case Agg::kMed: return "med";
    }
    return "?";
}

std::string feature_name(FeatureKind f) {
    switch (f) {
    case FeatureKind::kDelta: return "delta";
    case FeatureKind::kSteps: return "steps";
    case FeatureKind::kUtility: return "utility";
    case FeatureKind::kLoss: return "loss";
    case FeatureKind::kGradNorm: return "grad-norm";
    case FeatureKind::kScore: return "score";
    }
    return "?";
}

double aggregate_one(const std::vector<double>& values, Agg a) {
    require(!values.empty(), "cannot aggregate an empty value list");
    switch (a) {
    case Agg::kAvg: {
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }
    case Agg::kMin: return *std::min_element(values.begin(), values.end());
    case Agg::kMax: return *std::max_element(values.begin(), values.end());
    case Agg::kMed: {
        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        if (n % 2 == 1) return sorted[n / 2];
        return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    }
    }
    throw ContractError("unreachable aggregator");
}

std::map<Agg, double> aggregate(const std::vector<double>& values, const AggregationSet& aggs) {
    require(!aggs.empty(), "aggregation set is empty");
    std::map<Agg, double> out;
    for (Agg a : aggs) out[a] = aggregate_one(values, a);
    return out;
}

QuestionFeatures features_from_traces(int doc_id,
                                      const std::vector<OptimizationTrace>& traces) {
    QuestionFeatures qf;
    qf.doc_id = doc_id;
    int failed = 0;
    for (const OptimizationTrace& t : traces) {
        if (t.failed) {
            ++failed;
            continue;
        }
        qf.per_question[FeatureKind::kDelta].push_back(t.delta);
        qf.per_question[FeatureKind::kSteps].push_back(static_cast<double>(t.steps));
        qf.per_question[FeatureKind::kUtility].push_back(t.mean_utility());
        qf.per_question[FeatureKind::kLoss].push_back(t.final_loss);
    }
    if (failed > 0) {
        std::fprintf(stderr, "doc %d: %d failed trace(s) excluded from features\n",
                     doc_id, failed);
    }
    require(!qf.per_question.empty(),
            "document " + std::to_string(doc_id) + ": every probe trace failed");
    return qf;
}

std::vector<std::string> descriptor_columns(const std::vector<FeatureKind>& features,
                                            const AggregationSet& aggs) {
    std::vector<std::string> cols;
    for (FeatureKind f : features) {
        for (Agg a : aggs) cols.push_back(agg_name(a) + "(" + feature_name(f) + ")");
    }
    return cols;
}

std::vector<FeatureDescriptor> build_descriptors(const std::vector<QuestionFeatures>& docs,
                                                 const std::vector<FeatureKind>& features,
                                                 const AggregationSet& aggs) {
    require(!docs.empty(), "no documents to describe");
    require(!features.empty(), "feature selection is empty");
    require(!aggs.empty(), "aggregation set is empty");

    const std::size_t dim = features.size() * aggs.size();
    std::vector<FeatureDescriptor> out;
    out.reserve(docs.size());
    for (const QuestionFeatures& qf : docs) {
        FeatureDescriptor d;
        d.doc_id = qf.doc_id;
        for (FeatureKind f : features) {
            auto it = qf.per_question.find(f);
            require(it != qf.per_question.end() && !it->second.empty(),
                    "document " + std::to_string(qf.doc_id) + " lacks feature " +
                        feature_name(f));
            for (Agg a : aggs) d.raw.push_back(aggregate_one(it->second, a));
        }
        require(all_finite(d.raw), "non-finite aggregated feature");
        out.push_back(std::move(d));
    }

    // column z-scores over exactly this document set
    const double n = static_cast<double>(out.size());
    for (std::size_t c = 0; c < dim; ++c) {
        double mean = 0.0;
        for (const FeatureDescriptor& d : out) mean += d.raw[c];
        mean /= n;
        double var = 0.0;
        for (const FeatureDescriptor& d : out) {
            const double x = d.raw[c] - mean;
            var += x * x;
        }
        var /= n;
        const double sd = std::sqrt(var);
        for (FeatureDescriptor& d : out) {
            d.normalized.push_back(sd > 0.0 ? (d.raw[c] - mean) / sd : 0.0);
        }
    }
    return out;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// In one dimension the SSE-optimal 2-partition is a threshold split over the
// sorted values, so it can be found exactly instead of approximated by Lloyd
// iterations (which do fall into local optima on such inputs).
ClusterResult exact_split_1d(const std::vector<std::vector<double>>& pts) {
    const std::size_t n = pts.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pts[a][0] < pts[b][0];
    });
    std::vector<double> sum(n + 1, 0.0);
    std::vector<double> sumsq(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = pts[order[i]][0];
        sum[i + 1] = sum[i] + x;
        sumsq[i + 1] = sumsq[i] + x * x;
    }
    const auto side_sse = [&](std::size_t lo, std::size_t hi) {
        const double s = sum[hi] - sum[lo];
        const double q = sumsq[hi] - sumsq[lo];
        return std::max(0.0, q - s * s / static_cast<double>(hi - lo));
    };
    std::size_t best_cut = 1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t cut = 1; cut < n; ++cut) {
        const double cost = side_sse(0, cut) + side_sse(cut, n);
        if (cost < best_cost) {
            best_cost = cost;
            best_cut = cut;
        }
    }
    ClusterResult r;
    r.assignment.assign(n, 0);
    for (std::size_t i = best_cut; i < n; ++i) r.assignment[order[i]] = 1;
    r.centroids = {{sum[best_cut] / static_cast<double>(best_cut)},
                   {(sum[n] - sum[best_cut]) / static_cast<double>(n - best_cut)}};
    r.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pts[i][0] - r.centroids[static_cast<std::size_t>(r.assignment[i])][0];
        r.inertia += d * d;
    }
    return r;
}

ClusterResult lloyd_once(const std::vector<std::vector<double>>& pts, Rng& rng) {
    const std::size_t n = pts.size();
    // kmeans++ seeding: uniform first pick, second proportional to squared
    // distance from the first
    const std::size_t first = static_cast<std::size_t>(rng.below(n));
    std::vector<double> d2(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d2[i] = sq_dist(pts[i], pts[first]);
        total += d2[i];
    }
    std::size_t second = first;
    if (total > 0.0) {
        double pick = rng.uniform() * total;
        for (std::size_t i = 0; i < n; ++i) {
            pick -= d2[i];
            if (pick <= 0.0) {
                second = i;
                break;
            }
        }
        if (second == first) {
            // numeric edge: fall back to the farthest point
            second = static_cast<std::size_t>(
                std::max_element(d2.begin(), d2.end()) - d2.begin());
        }
    }

    ClusterResult r;
    r.centroids = {pts[first], pts[second]};
    r.assignment.assign(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const int best = sq_dist(pts[i], r.centroids[0]) <= sq_dist(pts[i], r.centroids[1])
                                 ? 0
                                 : 1;
            if (best != r.assignment[i]) {
                r.assignment[i] = best;
                changed = true;
            }
        }
        // recompute centroids; re-seed an emptied cluster with the farthest point
        for (int c = 0; c < 2; ++c) {
            std::vector<double> mean(pts[0].size(), 0.0);
            int count = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (r.assignment[i] != c) continue;
                ++count;
                for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += pts[i][k];
            }
            if (count == 0) {
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = sq_dist(pts[i], r.centroids[1 - c]);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                r.centroids[static_cast<std::size_t>(c)] = pts[far];
                r.assignment[far] = c;
                changed = true;
                continue;
            }
            for (double& x : mean) x /= static_cast<double>(count);
            r.centroids[static_cast<std::size_t>(c)] = std::move(mean);
        }
        if (!changed && iter > 0) break;
    }
    r.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r.inertia += sq_dist(pts[i], r.centroids[static_cast<std::size_t>(r.assignment[i])]);
    }
    return r;
}

} // namespace

ClusterResult kmeans2(const std::vector<std::vector<double>>& points, Rng rng, int restarts) {
    require(points.size() >= 2, "clustering needs at least two points");
    require(restarts >= 1, "need at least one restart");
    const std::size_t dim = points[0].size();
    require(dim >= 1, "points must have at least one coordinate");
    bool any_distinct = false;
    for (const auto& p : points) {
        require(p.size() == dim, "inconsistent point dimensions");
        if (p != points[0]) any_distinct = true;
    }
    require(any_distinct, "all descriptors identical; two clusters are undefined");

    if (dim == 1) return exact_split_1d(points);

    ClusterResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        Rng sub = rng.fork("restart-" + std::to_string(r));
        ClusterResult cand = lloyd_once(points, sub);
        if (cand.inertia < best.inertia) best = std::move(cand);
    }
    return best;
}

MembershipDecision decide_membership(const ClusterResult& clusters,
                                     const std::vector<std::vector<double>>& points,
                                     const std::vector<double>& direction_value,
                                     bool higher_is_member) {
    const std::size_t n = clusters.assignment.size();
    require(points.size() == n && direction_value.size() == n,
            "cluster result, points and direction values must align");
    require(n >= 2, "need at least two documents");

    double mean[2] = {0.0, 0.0};
    int count[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        const int c = clusters.assignment[i];
        mean[c] += direction_value[i];
        ++count[c];
    }
    require(count[0] > 0 && count[1] > 0, "degenerate clustering: an empty cluster");
    mean[0] /= count[0];
    mean[1] /= count[1];

    MembershipDecision d;
    if (mean[0] == mean[1]) {
        d.member_cluster = 0; // deterministic tie-break, flagged for the caller
        d.tie_broken = true;
        std::fprintf(stderr, "decide_membership: direction-feature tie, cluster 0 -> member\n");
    } else if (higher_is_member) {
        d.member_cluster = mean[0] > mean[1] ? 0 : 1;
    } else {
        d.member_cluster = mean[0] < mean[1] ? 0 : 1;
    }

    const auto& centroid = clusters.centroids[static_cast<std::size_t>(d.member_cluster)];
    for (std::size_t i = 0; i < n; ++i) {
        d.is_member.push_back(clusters.assignment[i] == d.member_cluster);
        d.score.push_back(-std::sqrt(sq_dist(points[i], centroid)));
    }
    return d;
}

void export_descriptors(const std::string& path,
                        const std::vector<FeatureDescriptor>& descriptors,
                        const std::vector<std::string>& columns,
                        const MembershipDecision& decision,
                        const std::vector<int>* true_labels) {
    require(decision.is_member.size() == descriptors.size(),
            "decision does not cover every descriptor");
    std::ofstream out(path);
    require(out.good(), "cannot open descriptor export: " + path);
    out << "doc_id,true_label";
    for (const std::string& c : columns) out << ',' << c;
    out << ",membership_score,predicted\n";
    for (std::size_t i = 0; i < descriptors.size(); ++i) {
        const FeatureDescriptor& d = descriptors[i];
        require(d.raw.size() == columns.size(), "column mismatch in descriptor export");
        out << d.doc_id << ',';
        if (true_labels != nullptr) {
            out << (*true_labels)[i];
        } else {
            out << "NA";
        }
        char buf[32];
        for (double v : d.raw) {
            std::snprintf(buf, sizeof buf, "%.12g", v);
            out << ',' << buf;
        }
        std::snprintf(buf, sizeof buf, "%.12g", decision.score[i]);
        out << ',' << buf << ',' << (decision.is_member[i] ? 1 : 0) << '\n';
    }
    require(out.good(), "descriptor export write failed: " + path);
}

} // namespace docmi

#pragma once

#include <map>
#include <string>
#include <vector>

#include "docmi/attack_core.hpp"
#include "docmi/rng.hpp"

namespace docmi {

enum class Agg { kAvg, kMin, kMax, kMed };
using AggregationSet = std::vector<Agg>;

AggregationSet all_aggregations(); // AVG, MIN, MAX, MED
std::string agg_name(Agg a);

// Raw per-question signals a document can be described by. Trace-based
// attacks use delta/steps/utility; baselines fill score/loss/grad-norm.
enum class FeatureKind { kDelta, kSteps, kUtility, kLoss, kGradNorm, kScore };
std::string feature_name(FeatureKind f);

double aggregate_one(const std::vector<double>& values, Agg a);
// All requested aggregators of one value list; empty input is an error.
std::map<Agg, double> aggregate(const std::vector<double>& values, const AggregationSet& aggs);

struct QuestionFeatures {
    int doc_id = 0;
    std::map<FeatureKind, std::vector<double>> per_question;
};

// Collects per-pair features from probe traces, skipping failed ones. A
// document whose traces all failed is an error (never a silent guess).
QuestionFeatures features_from_traces(int doc_id, const std::vector<OptimizationTrace>& traces);

struct FeatureDescriptor {
    int doc_id = 0;
    std::vector<double> raw;        // aggregated, feature-major
    std::vector<double> normalized; // z-scored per column across the set
};

std::vector<std::string> descriptor_columns(const std::vector<FeatureKind>& features,
                                            const AggregationSet& aggs);

// Aggregates each selected feature with each aggregator, then z-scores every
// column over the given documents (the attack set is all the adversary has).
// Zero-variance columns normalize to all zeros.
std::vector<FeatureDescriptor> build_descriptors(const std::vector<QuestionFeatures>& docs,
                                                 const std::vector<FeatureKind>& features,
                                                 const AggregationSet& aggs);

struct ClusterResult {
    std::vector<int> assignment;                // 0/1 per point
    std::vector<std::vector<double>> centroids; // 2 rows
    double inertia = 0.0;
};

// k-means with k=2. One-dimensional inputs are solved exactly (the optimal
// 2-partition is a threshold split); higher dimensions run Lloyd iterations
// from kmeans++ seeds, keeping the lowest-inertia restart.
ClusterResult kmeans2(const std::vector<std::vector<double>>& points, Rng rng,
                      int restarts = 5);

struct MembershipDecision {
    std::vector<bool> is_member;
    std::vector<double> score; // -distance to the member centroid
    int member_cluster = 0;
    bool tie_broken = false;
};

// Picks the member cluster by the mean of a 1-D direction feature (smaller
// parameter movement means member; score-like features invert), then scores
// every point by proximity to that centroid.
MembershipDecision decide_membership(const ClusterResult& clusters,
                                     const std::vector<std::vector<double>>& points,
                                     const std::vector<double>& direction_value,
                                     bool higher_is_member);

// doc_id, optional true label, every aggregated column, score, prediction.
void export_descriptors(const std::string& path,
                        const std::vector<FeatureDescriptor>& descriptors,
                        const std::vector<std::string>& columns,
                        const MembershipDecision& decision,
                        const std::vector<int>* true_labels);

} // namespace docmi

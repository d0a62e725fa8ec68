#pragma once

#include <utility>
#include <vector>

#include "docmi/attack_core.hpp"
#include "docmi/cluster_features.hpp"

namespace docmi {

// Which aggregated trace features feed the clustering step.
struct AttackSelection {
    std::vector<FeatureKind> features = {FeatureKind::kDelta, FeatureKind::kSteps,
                                         FeatureKind::kUtility};
    AggregationSet aggs = all_aggregations();
};

struct AttackDecisionResult {
    std::vector<int> doc_ids;
    std::vector<bool> is_member;
    std::vector<double> score; // higher = more member-like
    bool tie_broken = false;
    std::vector<FeatureDescriptor> descriptors;
    std::vector<std::pair<int, std::vector<OptimizationTrace>>> traces;
};

// The complete attack against a model the adversary can optimize copies of:
// per-pair probe traces, per-document aggregation, clustering, and the
// membership call (the cluster with smaller average parameter movement is the
// member one). qa_override, when given, substitutes each document's question
// list pairwise (rephrased surface forms). jobs > 1 extracts documents on a
// worker pool; every RNG stream is forked up front, so the result is
// bit-identical at any worker count.
AttackDecisionResult run_model_attack(
    const Model& model, const std::vector<const Document*>& docs, const Vocab& vocab,
    const AttackVariant& variant, const AttackHyperparams& hp,
    const AttackSelection& selection, Rng rng,
    const std::vector<std::vector<QAPair>>* qa_override = nullptr, int jobs = 1);

} // namespace docmi

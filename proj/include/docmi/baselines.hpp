#pragma once

#include <string>
#include <vector>

#include "docmi/cluster_features.hpp"
#include "docmi/seqmodel.hpp"
#include "docmi/synthdata.hpp"
#include "docmi/text_metrics.hpp"

namespace docmi {

enum class BaselineKind {
    kScoreTA,
    kScoreUA,
    kScoreUAAll,
    kLossTA,
    kGradientUA,
    kScoreLossUAAll,
    kMinK,
    kMinKPP,
};
std::string baseline_name(BaselineKind k);

// Raw per-document measurements the comparison attacks draw from. The
// grey-box fields (token log-probs and next-token distributions) describe the
// greedy-decoded answer, one row per generated answer token.
struct DocumentStats {
    int doc_id = 0;
    std::vector<double> utilities;  // U(generated, gold) per question
    std::vector<double> losses;     // teacher-forced answer loss per question
    std::vector<double> grad_norms; // full-gradient L2 norm at the target params
    std::vector<std::vector<int>> answer_tokens;
    std::vector<std::vector<double>> answer_logprobs;
    std::vector<std::vector<std::vector<double>>> answer_distributions;
};

// Queries the target once per question (up to max_questions, document order).
DocumentStats collect_document_stats(const Model& target, const Document& doc,
                                     const Vocab& vocab, UtilityKind utility_kind,
                                     int max_questions);

struct BaselineResult {
    BaselineKind kind = BaselineKind::kScoreTA;
    std::vector<int> doc_ids;
    std::vector<bool> is_member;
    std::vector<double> score; // continuous, higher = more member-like
    double threshold = 0.0;    // the mean statistic, for the threshold attacks
    int skipped_tokens = 0;    // zero-variance tokens dropped by min_k_pp
    bool tie_broken = false;
};

// Threshold attacks: member iff the per-document statistic lies on the member
// side of the attack-set mean. Boundaries are inclusive, so all-equal inputs
// label everything member.
BaselineResult score_ta(const std::vector<int>& doc_ids,
                        const std::vector<double>& mean_utility);
BaselineResult loss_ta(const std::vector<int>& doc_ids,
                       const std::vector<double>& mean_loss);
BaselineResult score_ta(const std::vector<DocumentStats>& stats);
BaselineResult loss_ta(const std::vector<DocumentStats>& stats);

// Clustering attacks. score_ua with a single AVG aggregator is the plain
// variant; the full aggregation set is its _all extension. gradient_ua pairs
// grad-norm with utility, scoreloss_ua pairs loss with utility.
BaselineResult score_ua(const std::vector<DocumentStats>& stats,
                        const AggregationSet& aggs, Rng rng);
BaselineResult gradient_ua(const std::vector<DocumentStats>& stats, Rng rng);
BaselineResult scoreloss_ua(const std::vector<DocumentStats>& stats, Rng rng);

// Mean of the max(1, floor(k_fraction * len)) lowest token log-probs.
double min_k_answer_score(const std::vector<double>& token_logprobs, double k_fraction);

// z-score of the realized token's log-prob under the next-token distribution
// (moments taken over that distribution). Returns false when the distribution
// is uniform: sigma is zero and the token carries no signal.
bool min_k_pp_token_z(const std::vector<double>& next_token_dist, int realized_token,
                      double* z);

std::vector<double> min_k_fraction_grid(); // 0.6, 0.7, 0.8, 0.9, 1.0

// Per-document score = AVG of per-answer scores; labels from clustering the
// scores with higher-is-member direction.
BaselineResult min_k(const std::vector<DocumentStats>& stats, double k_fraction, Rng rng);
BaselineResult min_k_pp(const std::vector<DocumentStats>& stats, double k_fraction, Rng rng);

} // namespace docmi

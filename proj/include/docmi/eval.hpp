#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "docmi/seqmodel.hpp"
#include "docmi/synthdata.hpp"
#include "docmi/text_metrics.hpp"

namespace docmi {

struct ClassificationMetrics {
    int tp = 0;
    int fp = 0;
    int tn = 0;
    int fn = 0;
    double tpr = 0.0; // member recall
    double tnr = 0.0;
    double precision = 0.0;
    double balanced_accuracy = 0.0;
    double f1 = 0.0;
    bool f1_zero_division = false; // no predicted and no actual positives met
};

// Member is the positive class. Truth must contain both classes.
ClassificationMetrics classification_metrics(const std::vector<bool>& truth,
                                             const std::vector<bool>& predicted);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0; // predict member iff score >= threshold
};

// Step curve from (0,0) to (1,1), one point per distinct score; tied scores
// cross the threshold together.
std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                 const std::vector<bool>& truth);

struct TprAtFpr {
    double target = 0.0;
    double tpr = 0.0;
    double achieved_fpr = 0.0;
    double threshold = 0.0;
    bool granularity_warning = false; // fewer non-members than 1/target
};

// Best TPR over thresholds whose empirical FPR stays within the target.
std::vector<TprAtFpr> tpr_at_fpr(const std::vector<double>& scores,
                                 const std::vector<bool>& truth,
                                 const std::vector<double>& targets);

struct StratumMetric {
    std::string name; // "m=1", "m=2", "m=3", "all"
    int n_members = 0;
    double member_accuracy = 0.0; // fraction of members predicted member
};

// Member-prediction accuracy grouped by per-document question count. Empty
// strata are omitted (logged); "all" covers every member document.
std::vector<StratumMetric> stratified_member_accuracy(
    const std::vector<bool>& truth, const std::vector<bool>& predicted,
    const std::vector<int>& question_counts);

// Mean per-document utility of members minus non-members, same question
// budget on both sides.
double traintest_gap(const Model& model, const std::vector<const Document*>& members,
                     const std::vector<const Document*>& nonmembers, const Vocab& vocab,
                     UtilityKind kind, int max_questions);

struct EvalReport {
    std::string attack_name;
    std::uint64_t seed = 0;
    std::string config_hash;
    ClassificationMetrics metrics;
    std::vector<RocPoint> roc;
    std::vector<TprAtFpr> tpr_targets;
    std::vector<StratumMetric> strata;
    double traintest_gap = 0.0;
};

// Bundles every evaluation of one attack run. Default FPR targets: 1%, 3%.
EvalReport evaluate_attack(const std::string& attack_name, std::uint64_t seed,
                           const std::string& config_hash,
                           const std::vector<bool>& truth,
                           const std::vector<bool>& predicted,
                           const std::vector<double>& scores,
                           const std::vector<int>& question_counts,
                           double traintest_gap_value,
                           const std::vector<double>& fpr_targets = {0.01, 0.03});

// Human-readable report; one file per attack run.
void save_report(const std::string& path, const EvalReport& report);
// Flat row per (attack, seed) for cross-run tables.
std::string report_csv_header();
std::string report_csv_row(const EvalReport& report);
void append_report_csv(const std::string& path, const EvalReport& report);

} // namespace docmi

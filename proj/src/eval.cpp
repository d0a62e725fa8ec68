#include "docmi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sys/stat.h>

#include "docmi/answer_signals.hpp"
#include "docmi/common.hpp"

namespace docmi {

ClassificationMetrics classification_metrics(const std::vector<bool>& truth,
                                             const std::vector<bool>& predicted) {
    require(!truth.empty(), "no documents to evaluate");
    require(truth.size() == predicted.size(), "truth and predictions must align");

    ClassificationMetrics m;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) {
            ++(predicted[i] ? m.tp : m.fn);
        } else {
            ++(predicted[i] ? m.fp : m.tn);
        }
    }
    require(m.tp + m.fn > 0 && m.fp + m.tn > 0,
            "both classes must be present in the truth labels");

    m.tpr = static_cast<double>(m.tp) / (m.tp + m.fn);
    m.tnr = static_cast<double>(m.tn) / (m.tn + m.fp);
    m.balanced_accuracy = 0.5 * (m.tpr + m.tnr);
    if (m.tp + m.fp > 0) {
        m.precision = static_cast<double>(m.tp) / (m.tp + m.fp);
    }
    const double pr_sum = m.precision + m.tpr;
    if (pr_sum > 0.0) {
        m.f1 = 2.0 * m.precision * m.tpr / pr_sum;
    } else {
        m.f1 = 0.0;
        m.f1_zero_division = true;
    }
    return m;
}

namespace {

struct ScoredCounts {
    std::vector<double> thresholds; // distinct scores, descending
    std::vector<int> cum_tp;        // positives admitted at each threshold
    std::vector<int> cum_fp;
    int n_pos = 0;
    int n_neg = 0;
};

// Cumulative confusion counts per distinct threshold, tied scores atomic.
ScoredCounts sweep(const std::vector<double>& scores, const std::vector<bool>& truth) {
    require(!scores.empty(), "no scores to sweep");
    require(scores.size() == truth.size(), "scores and truth must align");
    require(all_finite(scores), "non-finite membership score");

    std::map<double, std::pair<int, int>, std::greater<double>> by_score;
    ScoredCounts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        auto& bucket = by_score[scores[i]];
        if (truth[i]) {
            ++bucket.first;
            ++c.n_pos;
        } else {
            ++bucket.second;
            ++c.n_neg;
        }
    }
    require(c.n_pos > 0 && c.n_neg > 0,
            "both classes must be present in the truth labels");

    int tp = 0;
    int fp = 0;
    for (const auto& [score, counts] : by_score) {
        tp += counts.first;
        fp += counts.second;
        c.thresholds.push_back(score);
        c.cum_tp.push_back(tp);
        c.cum_fp.push_back(fp);
    }
    return c;
}

} // namespace

std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                 const std::vector<bool>& truth) {
    const ScoredCounts c = sweep(scores, truth);
    std::vector<RocPoint> roc;
    roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
        RocPoint p;
        p.threshold = c.thresholds[i];
        p.tpr = static_cast<double>(c.cum_tp[i]) / c.n_pos;
        p.fpr = static_cast<double>(c.cum_fp[i]) / c.n_neg;
        roc.push_back(p);
    }
    return roc; // last point admits everything: (1, 1)
}

std::vector<TprAtFpr> tpr_at_fpr(const std::vector<double>& scores,
                                 const std::vector<bool>& truth,
                                 const std::vector<double>& targets) {
    const ScoredCounts c = sweep(scores, truth);
    std::vector<TprAtFpr> out;
    for (double target : targets) {
        require(target >= 0.0 && target <= 1.0, "FPR target must be in [0, 1]");
        TprAtFpr r;
        r.target = target;
        r.threshold = std::numeric_limits<double>::infinity();
        r.granularity_warning = static_cast<double>(c.n_neg) * target < 1.0 - 1e-9;
        if (r.granularity_warning) {
            std::fprintf(stderr,
                         "tpr@fpr: %d non-members cannot resolve a %.4f FPR target\n",
                         c.n_neg, target);
        }
        for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
            const double fpr = static_cast<double>(c.cum_fp[i]) / c.n_neg;
            if (fpr <= target + 1e-12) {
                // TPR grows as the threshold drops, so the last admissible
                // threshold carries the best rate
                r.tpr = static_cast<double>(c.cum_tp[i]) / c.n_pos;
                r.achieved_fpr = fpr;
                r.threshold = c.thresholds[i];
            }
        }
        out.push_back(r);
    }
    return out;
}

std::vector<StratumMetric> stratified_member_accuracy(
    const std::vector<bool>& truth, const std::vector<bool>& predicted,
    const std::vector<int>& question_counts) {
    require(truth.size() == predicted.size() && truth.size() == question_counts.size(),
            "stratified inputs must align");

    const auto stratum_over = [&](const std::string& name, int m_exact) {
        StratumMetric s;
        s.name = name;
        int hit = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (!truth[i]) continue;
            if (m_exact > 0 && question_counts[i] != m_exact) continue;
            ++s.n_members;
            hit += predicted[i] ? 1 : 0;
        }
        if (s.n_members > 0) {
            s.member_accuracy = static_cast<double>(hit) / s.n_members;
        }
        return s;
    };

    std::vector<StratumMetric> out;
    for (int m = 1; m <= 3; ++m) {
        StratumMetric s = stratum_over("m=" + std::to_string(m), m);
        if (s.n_members == 0) {
            std::fprintf(stderr, "stratified report: stratum m=%d is empty, omitted\n", m);
            continue;
        }
        out.push_back(std::move(s));
    }
    StratumMetric all = stratum_over("all", 0);
    require(all.n_members > 0, "no member documents to stratify");
    out.push_back(std::move(all));
    return out;
}

double traintest_gap(const Model& model, const std::vector<const Document*>& members,
                     const std::vector<const Document*>& nonmembers, const Vocab& vocab,
                     UtilityKind kind, int max_questions) {
    require(!members.empty() && !nonmembers.empty(),
            "gap needs documents on both sides");
    require(max_questions >= 1, "need a positive question budget");

    const auto mean_doc_utility = [&](const std::vector<const Document*>& docs) {
        double total = 0.0;
        for (const Document* doc : docs) {
            require(!doc->qa.empty(), "document without questions in gap computation");
            const std::size_t m =
                std::min(doc->qa.size(), static_cast<std::size_t>(max_questions));
            double u = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const TrainExample ex{encoder_input(*doc, vocab, doc->qa[i].question),
                                      doc->qa[i].answer};
                u += model_utility(model, kind, ex, vocab);
            }
            total += u / static_cast<double>(m);
        }
        return total / static_cast<double>(docs.size());
    };
    return mean_doc_utility(members) - mean_doc_utility(nonmembers);
}

EvalReport evaluate_attack(const std::string& attack_name, std::uint64_t seed,
                           const std::string& config_hash,
                           const std::vector<bool>& truth,
                           const std::vector<bool>& predicted,
                           const std::vector<double>& scores,
                           const std::vector<int>& question_counts,
                           double traintest_gap_value,
                           const std::vector<double>& fpr_targets) {
    EvalReport r;
    r.attack_name = attack_name;
    r.seed = seed;
    r.config_hash = config_hash;
    r.metrics = classification_metrics(truth, predicted);
    r.roc = roc_points(scores, truth);
    r.tpr_targets = tpr_at_fpr(scores, truth, fpr_targets);
    r.strata = stratified_member_accuracy(truth, predicted, question_counts);
    r.traintest_gap = traintest_gap_value;
    return r;
}

void save_report(const std::string& path, const EvalReport& r) {
    std::ofstream out(path);
    require(out.good(), "cannot open report file: " + path);
    char buf[256];
    out << "attack: " << r.attack_name << "\n";
    out << "seed: " << r.seed << "\n";
    out << "config_hash: " << r.config_hash << "\n";
    std::snprintf(buf, sizeof buf,
                  "balanced_accuracy: %.6f\nf1: %.6f\nprecision: %.6f\nrecall: %.6f\n",
                  r.metrics.balanced_accuracy, r.metrics.f1, r.metrics.precision,
                  r.metrics.tpr);
    out << buf;
    if (r.metrics.f1_zero_division) out << "f1_zero_division: true\n";
    std::snprintf(buf, sizeof buf, "confusion: tp=%d fp=%d tn=%d fn=%d\n", r.metrics.tp,
                  r.metrics.fp, r.metrics.tn, r.metrics.fn);
    out << buf;
    for (const TprAtFpr& t : r.tpr_targets) {
        std::snprintf(buf, sizeof buf, "tpr@fpr%.2f: %.6f (achieved_fpr=%.6f%s)\n",
                      t.target, t.tpr, t.achieved_fpr,
                      t.granularity_warning ? ", granularity warning" : "");
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "traintest_gap: %.6f\n", r.traintest_gap);
    out << buf;
    for (const StratumMetric& s : r.strata) {
        std::snprintf(buf, sizeof buf, "stratum %s: n=%d member_accuracy=%.6f\n",
                      s.name.c_str(), s.n_members, s.member_accuracy);
        out << buf;
    }
    out << "roc:\n";
    for (const RocPoint& p : r.roc) {
        std::snprintf(buf, sizeof buf, "  fpr=%.6f tpr=%.6f threshold=%.12g\n", p.fpr,
                      p.tpr, p.threshold);
        out << buf;
    }
    require(out.good(), "report write failed: " + path);
}

std::string report_csv_header() {
    return "attack,seed,config_hash,balanced_accuracy,f1,precision,recall,"
           "tpr_at_fpr01,tpr_at_fpr03,traintest_gap";
}

std::string report_csv_row(const EvalReport& r) {
    double at01 = 0.0;
    double at03 = 0.0;
    for (const TprAtFpr& t : r.tpr_targets) {
        if (std::fabs(t.target - 0.01) < 1e-12) at01 = t.tpr;
        if (std::fabs(t.target - 0.03) < 1e-12) at03 = t.tpr;
    }
    char buf[384];
    std::snprintf(buf, sizeof buf, "%s,%llu,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f",
                  r.attack_name.c_str(), static_cast<unsigned long long>(r.seed),
                  r.config_hash.c_str(), r.metrics.balanced_accuracy, r.metrics.f1,
                  r.metrics.precision, r.metrics.tpr, at01, at03, r.traintest_gap);
    return buf;
}

void append_report_csv(const std::string& path, const EvalReport& r) {
    struct stat st;
    const bool fresh = stat(path.c_str(), &st) != 0;
    std::ofstream out(path, std::ios::app);
    require(out.good(), "cannot open csv: " + path);
    if (fresh) out << report_csv_header() << "\n";
    out << report_csv_row(r) << "\n";
    require(out.good(), "csv write failed: " + path);
}

} // namespace docmi

#include "docmi/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "docmi/answer_signals.hpp"
#include "docmi/common.hpp"
#include "docmi/tape.hpp"

namespace docmi {

std::string baseline_name(BaselineKind k) {
    switch (k) {
    case BaselineKind::kScoreTA: return "score-ta";
    case BaselineKind::kScoreUA: return "score-ua";
    case BaselineKind::kScoreUAAll: return "score-ua-all";
    case BaselineKind::kLossTA: return "loss-ta";
    case BaselineKind::kGradientUA: return "gradient-ua";
    case BaselineKind::kScoreLossUAAll: return "scoreloss-ua-all";
    case BaselineKind::kMinK: return "min-k";
    case BaselineKind::kMinKPP: return "min-k-pp";
    }
    return "?";
}

DocumentStats collect_document_stats(const Model& target, const Document& doc,
                                     const Vocab& vocab, UtilityKind utility_kind,
                                     int max_questions) {
    require(max_questions >= 1, "need a positive question budget");
    require(!doc.qa.empty(), "document " + std::to_string(doc.doc_id) + " has no questions");

    DocumentStats s;
    s.doc_id = doc.doc_id;
    const std::size_t m =
        std::min(doc.qa.size(), static_cast<std::size_t>(max_questions));
    for (std::size_t i = 0; i < m; ++i) {
        const QAPair& qa = doc.qa[i];
        const TrainExample ex{encoder_input(doc, vocab, qa.question), qa.answer};

        const GenerateResult g = target.generate(ex.enc_ids);
        s.utilities.push_back(utility(utility_kind, vocab.detokenize(g.answer_tokens),
                                      vocab.detokenize(qa.answer)));
        s.losses.push_back(answer_loss(target, ex));

        Tape tape;
        Tape::Ref loss = target.build_loss(tape, ex.enc_ids, ex.answer);
        tape.backward(loss); // non-finite gradients surface as NumericError
        s.grad_norms.push_back(l2_norm(tape.named_grads()));

        const std::size_t n_ans = g.answer_tokens.size();
        s.answer_tokens.push_back(g.answer_tokens);
        s.answer_logprobs.emplace_back(g.token_logprobs.begin(),
                                       g.token_logprobs.begin() +
                                           static_cast<std::ptrdiff_t>(n_ans));
        s.answer_distributions.emplace_back(g.distributions.begin(),
                                            g.distributions.begin() +
                                                static_cast<std::ptrdiff_t>(n_ans));
    }
    return s;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::vector<int> ids_of(const std::vector<DocumentStats>& stats) {
    std::vector<int> ids;
    for (const DocumentStats& s : stats) ids.push_back(s.doc_id);
    return ids;
}

BaselineResult threshold_attack(BaselineKind kind, const std::vector<int>& doc_ids,
                                const std::vector<double>& stat, bool higher_is_member) {
    require(!doc_ids.empty(), "threshold attack needs at least one document");
    require(doc_ids.size() == stat.size(), "doc ids and statistics must align");
    require(all_finite(stat), "non-finite document statistic");

    BaselineResult r;
    r.kind = kind;
    r.doc_ids = doc_ids;
    r.threshold = mean_of(stat);
    for (double x : stat) {
        r.is_member.push_back(higher_is_member ? x >= r.threshold : x <= r.threshold);
        r.score.push_back(higher_is_member ? x : -x);
    }
    return r;
}

// Shared tail of every clustering baseline: z-score the aggregated columns,
// cluster, orient by the direction feature, keep the centroid-proximity score.
BaselineResult cluster_attack(BaselineKind kind, const std::vector<DocumentStats>& stats,
                              std::vector<QuestionFeatures> docs,
                              const std::vector<FeatureKind>& features,
                              const AggregationSet& aggs,
                              const std::vector<double>& direction,
                              bool higher_is_member, Rng& rng) {
    const auto descriptors = build_descriptors(docs, features, aggs);
    std::vector<std::vector<double>> points;
    for (const FeatureDescriptor& d : descriptors) points.push_back(d.normalized);

    const ClusterResult clusters = kmeans2(points, rng.fork("kmeans"));
    const MembershipDecision decision =
        decide_membership(clusters, points, direction, higher_is_member);

    BaselineResult r;
    r.kind = kind;
    r.doc_ids = ids_of(stats);
    r.is_member = decision.is_member;
    r.score = decision.score;
    r.tie_broken = decision.tie_broken;
    return r;
}

} // namespace

BaselineResult score_ta(const std::vector<int>& doc_ids,
                        const std::vector<double>& mean_utility) {
    return threshold_attack(BaselineKind::kScoreTA, doc_ids, mean_utility, true);
}

BaselineResult loss_ta(const std::vector<int>& doc_ids,
                       const std::vector<double>& mean_loss) {
    return threshold_attack(BaselineKind::kLossTA, doc_ids, mean_loss, false);
}

BaselineResult score_ta(const std::vector<DocumentStats>& stats) {
    std::vector<double> u;
    for (const DocumentStats& s : stats) u.push_back(mean_of(s.utilities));
    return score_ta(ids_of(stats), u);
}

BaselineResult loss_ta(const std::vector<DocumentStats>& stats) {
    std::vector<double> l;
    for (const DocumentStats& s : stats) l.push_back(mean_of(s.losses));
    return loss_ta(ids_of(stats), l);
}

BaselineResult score_ua(const std::vector<DocumentStats>& stats,
                        const AggregationSet& aggs, Rng rng) {
    std::vector<QuestionFeatures> docs;
    std::vector<double> direction;
    for (const DocumentStats& s : stats) {
        QuestionFeatures q;
        q.doc_id = s.doc_id;
        q.per_question[FeatureKind::kUtility] = s.utilities;
        docs.push_back(std::move(q));
        direction.push_back(mean_of(s.utilities));
    }
    const BaselineKind kind = aggs.size() == 1 && aggs[0] == Agg::kAvg
                                  ? BaselineKind::kScoreUA
                                  : BaselineKind::kScoreUAAll;
    return cluster_attack(kind, stats, std::move(docs), {FeatureKind::kUtility}, aggs,
                          direction, true, rng);
}

BaselineResult gradient_ua(const std::vector<DocumentStats>& stats, Rng rng) {
    std::vector<QuestionFeatures> docs;
    std::vector<double> direction;
    for (const DocumentStats& s : stats) {
        QuestionFeatures q;
        q.doc_id = s.doc_id;
        q.per_question[FeatureKind::kGradNorm] = s.grad_norms;
        q.per_question[FeatureKind::kUtility] = s.utilities;
        docs.push_back(std::move(q));
        direction.push_back(mean_of(s.grad_norms));
    }
    return cluster_attack(BaselineKind::kGradientUA, stats, std::move(docs),
                          {FeatureKind::kGradNorm, FeatureKind::kUtility},
                          all_aggregations(), direction, false, rng);
}

BaselineResult scoreloss_ua(const std::vector<DocumentStats>& stats, Rng rng) {
    std::vector<QuestionFeatures> docs;
    std::vector<double> direction;
    for (const DocumentStats& s : stats) {
        QuestionFeatures q;
        q.doc_id = s.doc_id;
        q.per_question[FeatureKind::kLoss] = s.losses;
        q.per_question[FeatureKind::kUtility] = s.utilities;
        docs.push_back(std::move(q));
        direction.push_back(mean_of(s.losses));
    }
    return cluster_attack(BaselineKind::kScoreLossUAAll, stats, std::move(docs),
                          {FeatureKind::kLoss, FeatureKind::kUtility},
                          all_aggregations(), direction, false, rng);
}

double min_k_answer_score(const std::vector<double>& token_logprobs, double k_fraction) {
    require(!token_logprobs.empty(), "min-k on an empty answer");
    require(k_fraction > 0.0 && k_fraction <= 1.0, "min-k fraction must be in (0, 1]");

    std::vector<double> sorted = token_logprobs;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(k_fraction *
                                               static_cast<double>(sorted.size()))));
    double s = 0.0;
    for (std::size_t i = 0; i < keep; ++i) s += sorted[i];
    return s / static_cast<double>(keep);
}

bool min_k_pp_token_z(const std::vector<double>& next_token_dist, int realized_token,
                      double* z) {
    require(realized_token >= 0 &&
                realized_token < static_cast<int>(next_token_dist.size()),
            "realized token outside the distribution");
    double mu = 0.0;
    for (double p : next_token_dist) {
        if (p > 0.0) mu += p * std::log(p);
    }
    double var = 0.0;
    for (double p : next_token_dist) {
        if (p > 0.0) {
            const double d = std::log(p) - mu;
            var += p * d * d;
        }
    }
    const double sigma = std::sqrt(var);
    if (sigma <= 1e-12) return false; // numerically uniform: no signal
    const double p_tok = next_token_dist[static_cast<std::size_t>(realized_token)];
    require(p_tok > 0.0, "realized token has zero probability");
    *z = (std::log(p_tok) - mu) / sigma;
    return true;
}

std::vector<double> min_k_fraction_grid() {
    return {0.6, 0.7, 0.8, 0.9, 1.0};
}

namespace {

// Labels for the score-only grey-box attacks come from the same 1-D
// clustering rule as the unsupervised attacks; the continuous score stays the
// raw statistic so ROC sweeps see the attack's native ordering.
BaselineResult label_by_score_cluster(BaselineKind kind, const std::vector<int>& doc_ids,
                                      const std::vector<double>& scores, Rng& rng) {
    std::vector<std::vector<double>> points;
    for (double s : scores) points.push_back({s});
    const ClusterResult clusters = kmeans2(points, rng.fork("kmeans"));
    const MembershipDecision decision = decide_membership(clusters, points, scores, true);

    BaselineResult r;
    r.kind = kind;
    r.doc_ids = doc_ids;
    r.is_member = decision.is_member;
    r.score = scores;
    r.tie_broken = decision.tie_broken;
    return r;
}

} // namespace

BaselineResult min_k(const std::vector<DocumentStats>& stats, double k_fraction, Rng rng) {
    std::vector<double> doc_scores;
    for (const DocumentStats& s : stats) {
        std::vector<double> per_answer;
        int empty = 0;
        for (const auto& lp : s.answer_logprobs) {
            if (lp.empty()) {
                ++empty;
                continue;
            }
            per_answer.push_back(min_k_answer_score(lp, k_fraction));
        }
        if (empty > 0) {
            std::fprintf(stderr, "min-k: doc %d generated %d empty answer(s)\n",
                         s.doc_id, empty);
        }
        require(!per_answer.empty(),
                "min-k: document " + std::to_string(s.doc_id) +
                    " has no scoreable answers");
        doc_scores.push_back(mean_of(per_answer));
    }
    BaselineResult r =
        label_by_score_cluster(BaselineKind::kMinK, ids_of(stats), doc_scores, rng);
    return r;
}

BaselineResult min_k_pp(const std::vector<DocumentStats>& stats, double k_fraction,
                        Rng rng) {
    int skipped_total = 0;
    std::vector<double> doc_scores;
    for (const DocumentStats& s : stats) {
        std::vector<double> per_answer;
        for (std::size_t qi = 0; qi < s.answer_distributions.size(); ++qi) {
            const auto& dists = s.answer_distributions[qi];
            std::vector<double> zs;
            require(dists.size() == s.answer_tokens[qi].size(),
                    "distribution rows and generated tokens disagree");
            for (std::size_t t = 0; t < dists.size(); ++t) {
                double z = 0.0;
                if (min_k_pp_token_z(dists[t], s.answer_tokens[qi][t], &z)) {
                    zs.push_back(z);
                } else {
                    ++skipped_total;
                }
            }
            if (!zs.empty()) per_answer.push_back(min_k_answer_score(zs, k_fraction));
        }
        require(!per_answer.empty(),
                "min-k++: every token of document " + std::to_string(s.doc_id) +
                    " was skipped");
        doc_scores.push_back(mean_of(per_answer));
    }
    if (skipped_total > 0) {
        std::fprintf(stderr, "min-k++: skipped %d zero-variance token(s)\n",
                     skipped_total);
    }
    BaselineResult r =
        label_by_score_cluster(BaselineKind::kMinKPP, ids_of(stats), doc_scores, rng);
    r.skipped_tokens = skipped_total;
    return r;
}

} // namespace docmi

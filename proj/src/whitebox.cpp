#include "docmi/whitebox.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include "docmi/common.hpp"

namespace docmi {

AttackDecisionResult run_model_attack(
    const Model& model, const std::vector<const Document*>& docs, const Vocab& vocab,
    const AttackVariant& variant, const AttackHyperparams& hp,
    const AttackSelection& selection, Rng rng,
    const std::vector<std::vector<QAPair>>* qa_override, int jobs) {
    require(docs.size() >= 2, "an attack set needs at least two documents");
    require(qa_override == nullptr || qa_override->size() == docs.size(),
            "question overrides must align with the documents");
    require(jobs >= 1, "jobs must be positive");

    // Every per-document stream is forked before any work starts, so the
    // extraction below is a pure map and worker count cannot change results.
    std::vector<Rng> doc_rngs;
    doc_rngs.reserve(docs.size());
    for (const Document* doc : docs) {
        require(doc != nullptr, "null document in attack set");
        doc_rngs.push_back(rng.fork("doc-" + std::to_string(doc->doc_id)));
    }

    std::vector<std::vector<OptimizationTrace>> all_traces(docs.size());
    auto extract_one = [&](std::size_t i) {
        const std::vector<QAPair>* qa =
            qa_override != nullptr ? &(*qa_override)[i] : nullptr;
        all_traces[i] = extract_document_features(model, *docs[i], vocab, variant, hp,
                                                  doc_rngs[i], qa);
    };
    if (jobs == 1 || docs.size() < 2 * static_cast<std::size_t>(jobs)) {
        for (std::size_t i = 0; i < docs.size(); ++i) extract_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        std::vector<std::thread> pool;
        for (int w = 0; w < jobs; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < docs.size();
                     i = next.fetch_add(1)) {
                    if (failed.load()) return;
                    try {
                        extract_one(i);
                    } catch (...) {
                        const std::lock_guard<std::mutex> lock(error_mutex);
                        if (!first_error) first_error = std::current_exception();
                        failed.store(true);
                        return;
                    }
                }
            });
        }
        for (std::thread& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    AttackDecisionResult out;
    std::vector<QuestionFeatures> features;
    std::vector<double> direction;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const QuestionFeatures qf =
            features_from_traces(docs[i]->doc_id, all_traces[i]);
        direction.push_back(
            aggregate_one(qf.per_question.at(FeatureKind::kDelta), Agg::kAvg));
        features.push_back(qf);
        out.doc_ids.push_back(docs[i]->doc_id);
        out.traces.emplace_back(docs[i]->doc_id, std::move(all_traces[i]));
    }

    out.descriptors = build_descriptors(features, selection.features, selection.aggs);
    std::vector<std::vector<double>> points;
    for (const FeatureDescriptor& d : out.descriptors) points.push_back(d.normalized);

    const ClusterResult clusters = kmeans2(points, rng.fork("kmeans"));
    const MembershipDecision decision =
        decide_membership(clusters, points, direction, false);
    out.is_member = decision.is_member;
    out.score = decision.score;
    out.tie_broken = decision.tie_broken;
    return out;
}

} // namespace docmi

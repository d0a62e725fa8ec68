#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "docmi/seqmodel.hpp"
#include "docmi/synthdata.hpp"
#include "docmi/whitebox.hpp"

namespace docmi {

// Opaque answer oracle: the only thing the adversary can do with the target
// is ask it questions about documents and read the predicted answers. Every
// call increments the query counter; an optional budget caps it.
class BlackBoxHandle {
public:
    using AnswerFn =
        std::function<std::vector<int>(const Document&, const std::vector<int>&)>;
    static constexpr std::int64_t kUnlimited = -1;

    explicit BlackBoxHandle(AnswerFn fn, std::int64_t budget = kUnlimited);

    std::vector<int> answer(const Document& doc, const std::vector<int>& question);
    std::int64_t queries() const { return queries_; }
    std::int64_t budget() const { return budget_; }
    bool can_afford(std::int64_t extra_calls) const;

private:
    AnswerFn fn_;
    std::int64_t budget_;
    std::int64_t queries_ = 0;
};

// Wraps the toy target as an oracle; the model and vocab must outlive the
// handle. Exposes greedy answers only.
BlackBoxHandle oracle_from_model(const Model& target, const Vocab& vocab,
                                 std::int64_t budget = BlackBoxHandle::kUnlimited);

// Long-running external answerer speaking a line protocol on stdin/stdout:
// request "doc_id q1 q2 ...", response "a1 a2 ..." (blank line = empty answer).
class SubprocessOracle {
public:
    explicit SubprocessOracle(const std::string& shell_command);
    ~SubprocessOracle();
    SubprocessOracle(const SubprocessOracle&) = delete;
    SubprocessOracle& operator=(const SubprocessOracle&) = delete;

    std::vector<int> ask(int doc_id, const std::vector<int>& question);

private:
    int pid_ = -1;
    FILE* to_child_ = nullptr;
    FILE* from_child_ = nullptr;
};

BlackBoxHandle oracle_from_subprocess(std::shared_ptr<SubprocessOracle> proc,
                                      std::int64_t budget = BlackBoxHandle::kUnlimited);

struct QueryEntry {
    int doc_id = 0;
    std::vector<int> question;
    std::vector<int> answer; // the oracle's prediction, never the gold answer

    bool operator==(const QueryEntry&) const = default;
};

struct QueryDataset {
    std::vector<QueryEntry> entries;

    bool operator==(const QueryDataset&) const = default;
};

// One oracle call per (document, question), first max_questions per document
// in document order. The whole budget is checked before the first call, so an
// underfunded handle causes no partial spend.
QueryDataset build_query_dataset(BlackBoxHandle& oracle,
                                 const std::vector<const Document*>& docs,
                                 int max_questions);

void save_query_dataset(const std::string& path, const QueryDataset& qd);
QueryDataset load_query_dataset(const std::string& path);

struct ProxyConfig {
    // deliberately narrower than the target: the adversary does not know the
    // target architecture
    int d_model = 24;
    int d_ff = 48;
    bool match_target_arch = false;
    TrainConfig pretrain;
    TrainConfig distill; // its epoch count is ignored; the cap below rules
    double distill_loss_floor = 1e-2;
    int distill_epoch_cap = 50;
};

ModelConfig proxy_model_config(const Vocab& vocab, const ProxyConfig& pcfg);

// QA training on the disjoint pretrain pool: gives the proxy document
// understanding without any exposure to the target's training set.
Model pretrain_proxy(const Corpus& corpus, const Vocab& vocab, const ProxyConfig& pcfg,
                     std::uint64_t seed);

struct DistillResult {
    std::vector<double> epoch_loss;
    bool reached_floor = false;
};

// Teaches the proxy to reproduce the oracle's answers (labels only). Stops at
// the loss floor or the epoch cap. on_epoch, when set, observes every epoch's
// proxy state for curve experiments.
DistillResult distill_proxy(
    Model& proxy, const QueryDataset& qd, const std::vector<const Document*>& docs,
    const Vocab& vocab, const ProxyConfig& pcfg,
    const std::function<void(int, double, const Model&)>& on_epoch = nullptr);

struct BlackBoxAttackResult {
    AttackDecisionResult decision;
    std::int64_t oracle_queries = 0; // exactly the query-dataset size
    QueryDataset query_dataset;
    DistillResult distill;
    Model proxy;
};

// Full pipeline: query the oracle, pretrain the proxy on the disjoint pool,
// distill it on the query dataset, then run the white-box attack against the
// proxy. The target itself is only ever touched through the handle.
BlackBoxAttackResult blackbox_attack(BlackBoxHandle& oracle,
                                     const std::vector<const Document*>& attack_docs,
                                     const Corpus& corpus, const Vocab& vocab,
                                     const AttackVariant& variant,
                                     const AttackHyperparams& hp,
                                     const AttackSelection& selection,
                                     const ProxyConfig& pcfg, std::uint64_t seed,
                                     int jobs = 1);

} // namespace docmi

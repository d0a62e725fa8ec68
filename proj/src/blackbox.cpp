#include "docmi/blackbox.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include <json.hpp>

#include "docmi/adam.hpp"
#include "docmi/common.hpp"

namespace docmi {

using nlohmann::json;

BlackBoxHandle::BlackBoxHandle(AnswerFn fn, std::int64_t budget)
    : fn_(std::move(fn)), budget_(budget) {
    require(static_cast<bool>(fn_), "black-box handle needs an answer function");
    require(budget_ == kUnlimited || budget_ >= 0,
            "query budget must be non-negative or unlimited");
}

std::vector<int> BlackBoxHandle::answer(const Document& doc,
                                        const std::vector<int>& question) {
    require(can_afford(1), "query budget exhausted after " +
                               std::to_string(queries_) + " calls");
    ++queries_;
    return fn_(doc, question);
}

bool BlackBoxHandle::can_afford(std::int64_t extra_calls) const {
    require(extra_calls >= 0, "extra_calls must be non-negative");
    return budget_ == kUnlimited || queries_ + extra_calls <= budget_;
}

BlackBoxHandle oracle_from_model(const Model& target, const Vocab& vocab,
                                 std::int64_t budget) {
    return BlackBoxHandle(
        [&target, &vocab](const Document& doc, const std::vector<int>& question) {
            return target.generate(encoder_input(doc, vocab, question)).answer_tokens;
        },
        budget);
}

SubprocessOracle::SubprocessOracle(const std::string& shell_command) {
    int to_pipe[2] = {-1, -1};
    int from_pipe[2] = {-1, -1};
    require(pipe(to_pipe) == 0 && pipe(from_pipe) == 0,
            "failed to create oracle pipes");
    pid_ = fork();
    require(pid_ >= 0, "failed to fork the oracle process");
    if (pid_ == 0) {
        dup2(to_pipe[0], STDIN_FILENO);
        dup2(from_pipe[1], STDOUT_FILENO);
        close(to_pipe[0]);
        close(to_pipe[1]);
        close(from_pipe[0]);
        close(from_pipe[1]);
        execl("/bin/sh", "sh", "-c", shell_command.c_str(),
              static_cast<char*>(nullptr));
        _exit(127);
    }
    close(to_pipe[0]);
    close(from_pipe[1]);
    to_child_ = fdopen(to_pipe[1], "w");
    from_child_ = fdopen(from_pipe[0], "r");
    require(to_child_ != nullptr && from_child_ != nullptr,
            "failed to open oracle streams");
}

SubprocessOracle::~SubprocessOracle() {
    if (to_child_ != nullptr) fclose(to_child_); // EOF asks the child to exit
    if (from_child_ != nullptr) fclose(from_child_);
    if (pid_ > 0) {
        int status = 0;
        waitpid(pid_, &status, 0);
    }
}

std::vector<int> SubprocessOracle::ask(int doc_id, const std::vector<int>& question) {
    std::string request = std::to_string(doc_id);
    for (int tok : question) {
        request += ' ';
        request += std::to_string(tok);
    }
    request += '\n';
    require(fputs(request.c_str(), to_child_) >= 0 && fflush(to_child_) == 0,
            "failed to write to the oracle process");

    std::string reply;
    int c = 0;
    while ((c = fgetc(from_child_)) != EOF && c != '\n') {
        reply.push_back(static_cast<char>(c));
    }
    require(c != EOF || !reply.empty(), "oracle process closed its output stream");

    std::istringstream in(reply);
    std::vector<int> tokens;
    int tok = 0;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

BlackBoxHandle oracle_from_subprocess(std::shared_ptr<SubprocessOracle> proc,
                                      std::int64_t budget) {
    require(proc != nullptr, "subprocess oracle must not be null");
    return BlackBoxHandle(
        [proc](const Document& doc, const std::vector<int>& question) {
            return proc->ask(doc.doc_id, question);
        },
        budget);
}

QueryDataset build_query_dataset(BlackBoxHandle& oracle,
                                 const std::vector<const Document*>& docs,
                                 int max_questions) {
    require(max_questions > 0, "max_questions must be positive");
    require(!docs.empty(), "query dataset needs at least one document");
    std::int64_t required = 0;
    for (const Document* doc : docs) {
        require(doc != nullptr, "null document in query set");
        required += std::min<std::int64_t>(static_cast<std::int64_t>(doc->qa.size()),
                                           max_questions);
    }
    // All-or-nothing: an underfunded budget must not leak even one call.
    require(oracle.can_afford(required),
            "query budget cannot cover the dataset: " + std::to_string(required) +
                " calls needed");

    QueryDataset qd;
    for (const Document* doc : docs) {
        const int m = std::min(static_cast<int>(doc->qa.size()), max_questions);
        for (int q = 0; q < m; ++q) {
            QueryEntry e;
            e.doc_id = doc->doc_id;
            e.question = doc->qa[static_cast<std::size_t>(q)].question;
            e.answer = oracle.answer(*doc, e.question);
            qd.entries.push_back(std::move(e));
        }
    }
    return qd;
}

void save_query_dataset(const std::string& path, const QueryDataset& qd) {
    std::ofstream out(path);
    require(out.good(), "cannot open for writing: " + path);
    const json header = {{"kind", "query-dataset"}, {"entries", qd.entries.size()}};
    out << header.dump() << '\n';
    for (const QueryEntry& e : qd.entries) {
        const json line = {
            {"doc_id", e.doc_id}, {"question", e.question}, {"answer", e.answer}};
        out << line.dump() << '\n';
    }
    require(out.good(), "failed writing: " + path);
}

QueryDataset load_query_dataset(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open for reading: " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "empty query dataset file");
    const json header = json::parse(line);
    require(header.at("kind").get<std::string>() == "query-dataset",
            "not a query dataset file: " + path);
    const auto n = header.at("entries").get<std::size_t>();

    QueryDataset qd;
    for (std::size_t i = 0; i < n; ++i) {
        require(static_cast<bool>(std::getline(in, line)),
                "query dataset truncated: " + path);
        const json j = json::parse(line);
        QueryEntry e;
        e.doc_id = j.at("doc_id").get<int>();
        e.question = j.at("question").get<std::vector<int>>();
        e.answer = j.at("answer").get<std::vector<int>>();
        qd.entries.push_back(std::move(e));
    }
    return qd;
}

ModelConfig proxy_model_config(const Vocab& vocab, const ProxyConfig& pcfg) {
    ModelConfig cfg = make_model_config(vocab);
    if (!pcfg.match_target_arch) {
        require(pcfg.d_model > 0 && pcfg.d_ff > 0, "proxy dims must be positive");
        cfg.d_model = pcfg.d_model;
        cfg.d_ff = pcfg.d_ff;
    }
    return cfg;
}

Model pretrain_proxy(const Corpus& corpus, const Vocab& vocab, const ProxyConfig& pcfg,
                     std::uint64_t seed) {
    require(!corpus.pretrain.empty(),
            "proxy pretraining needs a held-out document pool");
    Rng init_rng(seed, "proxy-init");
    Model proxy = Model::init(proxy_model_config(vocab, pcfg), init_rng);
    TrainConfig tc = pcfg.pretrain;
    tc.seed = seed;
    train_model(proxy, make_examples(corpus.pretrain, vocab), tc);
    return proxy;
}

DistillResult distill_proxy(
    Model& proxy, const QueryDataset& qd, const std::vector<const Document*>& docs,
    const Vocab& vocab, const ProxyConfig& pcfg,
    const std::function<void(int, double, const Model&)>& on_epoch) {
    require(!qd.entries.empty(), "distillation needs a non-empty query dataset");
    require(pcfg.distill_epoch_cap >= 1, "distillation epoch cap must be positive");
    require(pcfg.distill_loss_floor > 0.0, "distillation loss floor must be positive");
    require(pcfg.distill.batch_size >= 1, "bad distillation batch size");

    std::unordered_map<int, const Document*> by_id;
    for (const Document* doc : docs) {
        require(doc != nullptr, "null document in query set");
        by_id[doc->doc_id] = doc;
    }
    // Training pairs use the oracle's answers, never the gold ones: the proxy
    // learns to imitate the target, not the data distribution.
    std::vector<TrainExample> data;
    for (const QueryEntry& e : qd.entries) {
        const auto it = by_id.find(e.doc_id);
        require(it != by_id.end(), "query entry references an unknown document: " +
                                       std::to_string(e.doc_id));
        data.push_back({encoder_input(*it->second, vocab, e.question), e.answer});
    }

    AdamConfig ac;
    ac.lr = pcfg.distill.lr;
    Adam opt(ac);
    Rng rng(pcfg.distill.seed, "distill");
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const auto batch_size = static_cast<std::size_t>(pcfg.distill.batch_size);

    DistillResult res;
    for (int epoch = 0; epoch < pcfg.distill_epoch_cap; ++epoch) {
        Rng epoch_rng = rng.fork("epoch-" + std::to_string(epoch));
        epoch_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t i = 0;
        while (i < order.size()) {
            const std::size_t batch_end = std::min(order.size(), i + batch_size);
            ParameterSet grad_sum = proxy.params().zeros_like();
            int batch_n = 0;
            for (; i < batch_end; ++i, ++batch_n) {
                const TrainExample& ex = data[static_cast<std::size_t>(order[i])];
                Tape tape;
                Tape::Ref loss = proxy.build_loss(tape, ex.enc_ids, ex.answer);
                const double lv = tape.value(loss).scalar_value();
                if (!std::isfinite(lv)) {
                    throw NumericError("distillation diverged: non-finite loss at epoch " +
                                       std::to_string(epoch));
                }
                epoch_loss += lv;
                tape.backward(loss);
                axpy(1.0, tape.named_grads(), grad_sum);
            }
            ParameterSet step_grad = proxy.params().zeros_like();
            axpy(1.0 / static_cast<double>(batch_n), grad_sum, step_grad);
            opt.step(proxy.params_mut(), step_grad);
        }
        const double mean_loss = epoch_loss / static_cast<double>(data.size());
        res.epoch_loss.push_back(mean_loss);
        if (on_epoch) on_epoch(epoch, mean_loss, proxy);
        if (mean_loss < pcfg.distill_loss_floor) {
            res.reached_floor = true;
            break;
        }
    }
    return res;
}

BlackBoxAttackResult blackbox_attack(BlackBoxHandle& oracle,
                                     const std::vector<const Document*>& attack_docs,
                                     const Corpus& corpus, const Vocab& vocab,
                                     const AttackVariant& variant,
                                     const AttackHyperparams& hp,
                                     const AttackSelection& selection,
                                     const ProxyConfig& pcfg, std::uint64_t seed,
                                     int jobs) {
    // The pretrain pool must not overlap the documents under attack, or the
    // proxy would carry first-hand membership signal.
    std::unordered_set<int> pool_ids;
    for (const Document& doc : corpus.pretrain) pool_ids.insert(doc.doc_id);
    for (const Document* doc : attack_docs) {
        require(doc != nullptr, "null document in attack set");
        require(pool_ids.count(doc->doc_id) == 0,
                "attack document appears in the pretrain pool: " +
                    std::to_string(doc->doc_id));
    }

    BlackBoxAttackResult out;
    const std::int64_t before = oracle.queries();
    out.query_dataset = build_query_dataset(oracle, attack_docs, hp.max_questions);
    out.oracle_queries = oracle.queries() - before;
    require(out.oracle_queries ==
                static_cast<std::int64_t>(out.query_dataset.entries.size()),
            "oracle query accounting mismatch");

    out.proxy = pretrain_proxy(corpus, vocab, pcfg, seed);
    out.distill = distill_proxy(out.proxy, out.query_dataset, attack_docs, vocab, pcfg);
    out.decision = run_model_attack(out.proxy, attack_docs, vocab, variant, hp,
                                    selection, Rng(seed, "blackbox-attack"), nullptr,
                                    jobs);
    return out;
}

} // namespace docmi

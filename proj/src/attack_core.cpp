#include "docmi/attack_core.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include <json.hpp>

#include "docmi/adam.hpp"
#include "docmi/common.hpp"

namespace docmi {

using nlohmann::json;

AttackVariant AttackVariant::fl(std::string layer_name) {
    AttackVariant v;
    v.kind = Kind::kFL;
    v.layer = std::move(layer_name);
    return v;
}

AttackVariant AttackVariant::fllora(std::string layer_name, int rank) {
    AttackVariant v;
    v.kind = Kind::kFLLoRA;
    v.layer = std::move(layer_name);
    v.lora_rank = rank;
    return v;
}

AttackVariant AttackVariant::ig() {
    AttackVariant v;
    v.kind = Kind::kIG;
    return v;
}

std::string AttackVariant::name() const {
    switch (kind) {
    case Kind::kFL: return "fl";
    case Kind::kFLLoRA: return "fllora";
    case Kind::kIG: return "ig";
    }
    return "?";
}

double OptimizationTrace::mean_utility() const {
    if (utility_history.empty()) return 0.0;
    return std::accumulate(utility_history.begin(), utility_history.end(), 0.0) /
           static_cast<double>(utility_history.size());
}

namespace {

void validate(const AttackHyperparams& hp) {
    require(hp.lr > 0.0, "attack learning rate must be positive");
    require(hp.max_steps >= 1, "attack step budget must be >= 1");
    require(hp.early_stop_tau >= 0.0, "early-stop threshold must be >= 0");
    require(hp.max_questions >= 1, "per-document question budget must be >= 1");
}

// Shared probe loop. The three variants plug in how to evaluate utility and
// loss at the current state, how to apply one optimizer step, and how far the
// designated parameters have moved.
struct ProbeOps {
    std::function<double()> utility;
    // builds the loss graph at the current state; returns (tape keeps graph)
    std::function<Tape::Ref(Tape&)> build;
    std::function<void(Tape&, Tape::Ref)> step; // backward + optimizer update
    std::function<double()> delta;
};

OptimizationTrace run_probe(const ProbeOps& ops, const AttackHyperparams& hp) {
    OptimizationTrace tr;
    try {
        tr.utility_history.push_back(ops.utility());
        Tape tape;
        Tape::Ref loss_ref = ops.build(tape);
        double prev_loss = tape.value(loss_ref).scalar_value();
        tr.initial_loss = prev_loss;
        tr.final_loss = prev_loss;
        if (!std::isfinite(prev_loss)) {
            tr.failed = true;
            return tr;
        }
        // an infinite threshold fires before the first step: the no-op probe
        if (std::isinf(hp.early_stop_tau)) return tr;

        for (int j = 1; j <= hp.max_steps; ++j) {
            ops.step(tape, loss_ref);
            tr.steps = j;
            tr.utility_history.push_back(ops.utility());

            Tape next;
            loss_ref = ops.build(next);
            const double cur_loss = next.value(loss_ref).scalar_value();
            tr.final_loss = cur_loss;
            if (!std::isfinite(cur_loss)) {
                tr.failed = true;
                break;
            }
            if (std::fabs(prev_loss - cur_loss) < hp.early_stop_tau) break;
            prev_loss = cur_loss;
            tape = std::move(next);
        }
    } catch (const NumericError&) {
        tr.failed = true;
        tr.steps = static_cast<int>(tr.utility_history.size()) - 1;
    }
    if (!tr.failed) tr.delta = ops.delta();
    return tr;
}

} // namespace

OptimizationTrace extract_trace(const Model& target, const Document& doc,
                                const Vocab& vocab, const QAPair& qa,
                                const AttackVariant& variant,
                                const AttackHyperparams& hp, Rng rng) {
    validate(hp);
    const TrainExample ex{encoder_input(doc, vocab, qa.question), qa.answer};

    AdamConfig ac;
    ac.lr = hp.lr;
    Adam opt(ac);
    ProbeOps ops;

    switch (variant.kind) {
    case AttackVariant::Kind::kFL: {
        require(target.registry().has(variant.layer),
                "attack layer not in the registry: " + variant.layer);
        auto model = std::make_shared<Model>(target); // private tunable copy
        const std::vector<std::string> names = target.registry().params_of(variant.layer);
        auto start = std::make_shared<ParameterSet>(subset(target.params(), names));
        auto optp = std::make_shared<Adam>(opt);
        ops.utility = [model, &hp, ex, &vocab] {
            return model_utility(*model, hp.utility, ex, vocab);
        };
        ops.build = [model, ex](Tape& t) { return model->build_loss(t, ex.enc_ids, ex.answer); };
        ops.step = [model, names, optp](Tape& t, Tape::Ref loss) {
            t.backward(loss);
            ParameterSet cur = subset(model->params(), names);
            optp->step(cur, subset(t.named_grads(), names));
            for (const std::string& n : names) model->params_mut().get(n) = cur.get(n);
        };
        ops.delta = [model, names, start] {
            return l2_distance(*start, subset(model->params(), names));
        };
        return run_probe(ops, hp);
    }
    case AttackVariant::Kind::kFLLoRA: {
        auto lora = std::make_shared<LoraAdapter>(
            make_lora(target, variant.layer, variant.lora_rank, rng));
        auto a0 = std::make_shared<Tensor>(lora->A);
        auto b0 = std::make_shared<Tensor>(lora->B);
        auto optp = std::make_shared<Adam>(opt);
        ops.utility = [&target, &hp, ex, &vocab, lora] {
            return model_utility(target, hp.utility, ex, vocab, lora.get());
        };
        ops.build = [&target, ex, lora](Tape& t) {
            return target.build_loss(t, ex.enc_ids, ex.answer, lora.get());
        };
        ops.step = [lora, optp](Tape& t, Tape::Ref loss) {
            t.backward(loss);
            ParameterSet cur;
            cur.add("lora.A", lora->A);
            cur.add("lora.B", lora->B);
            optp->step(cur, subset(t.named_grads(), {"lora.A", "lora.B"}));
            lora->A = cur.get("lora.A");
            lora->B = cur.get("lora.B");
        };
        ops.delta = [lora, a0, b0] {
            double s = 0.0;
            for (std::size_t i = 0; i < lora->A.data.size(); ++i) {
                const double d = lora->A.data[i] - a0->data[i];
                s += d * d;
            }
            for (std::size_t i = 0; i < lora->B.data.size(); ++i) {
                const double d = lora->B.data[i] - b0->data[i];
                s += d * d;
            }
            return std::sqrt(s);
        };
        return run_probe(ops, hp);
    }
    case AttackVariant::Kind::kIG: {
        const int doc_len = static_cast<int>(doc.linearize(vocab).size());
        auto view = std::make_shared<Tensor>(target.doc_input_view(ex.enc_ids, doc_len));
        auto view0 = std::make_shared<Tensor>(*view);
        auto optp = std::make_shared<Adam>(opt);
        ops.utility = [&target, &hp, ex, &vocab, view, doc_len] {
            return model_utility(target, hp.utility, ex, vocab, nullptr, view.get(), doc_len);
        };
        ops.build = [&target, ex, view, doc_len](Tape& t) {
            return target.build_loss(t, ex.enc_ids, ex.answer, nullptr, view.get(), doc_len);
        };
        ops.step = [view, optp](Tape& t, Tape::Ref loss) {
            t.backward(loss);
            ParameterSet cur;
            cur.add("doc-input", *view);
            optp->step(cur, subset(t.named_grads(), {"doc-input"}));
            *view = cur.get("doc-input");
        };
        ops.delta = [view, view0] {
            double s = 0.0;
            for (std::size_t i = 0; i < view->data.size(); ++i) {
                const double d = view->data[i] - view0->data[i];
                s += d * d;
            }
            return std::sqrt(s);
        };
        return run_probe(ops, hp);
    }
    }
    throw ContractError("unreachable attack variant");
}

std::vector<OptimizationTrace> extract_document_features(
    const Model& target, const Document& doc, const Vocab& vocab,
    const AttackVariant& variant, const AttackHyperparams& hp, Rng rng,
    const std::vector<QAPair>* qa_override) {
    validate(hp);
    const std::vector<QAPair>& qa = qa_override != nullptr ? *qa_override : doc.qa;
    require(!qa.empty(), "document has no question-answer pairs");

    const std::size_t used = std::min(qa.size(), static_cast<std::size_t>(hp.max_questions));
    std::vector<OptimizationTrace> traces;
    traces.reserve(used);
    for (std::size_t i = 0; i < used; ++i) {
        // keyed by pair content so permuting the question list permutes the
        // traces exactly, adapter init included
        std::string key = "pair";
        for (int t : qa[i].question) key += "-" + std::to_string(t);
        key += "/";
        for (int t : qa[i].answer) key += "-" + std::to_string(t);
        traces.push_back(extract_trace(target, doc, vocab, qa[i], variant, hp, rng.fork(key)));
    }
    return traces;
}

void dump_traces(const std::string& path, const std::string& variant_name,
                 const std::vector<std::pair<int, std::vector<OptimizationTrace>>>& per_doc) {
    std::ofstream out(path);
    require(out.good(), "cannot open trace dump for writing: " + path);
    for (const auto& [doc_id, traces] : per_doc) {
        for (std::size_t i = 0; i < traces.size(); ++i) {
            const OptimizationTrace& t = traces[i];
            json j = {{"doc_id", doc_id}, {"pair", i}, {"variant", variant_name},
                      {"delta", t.delta}, {"steps", t.steps},
                      {"u", t.utility_history}, {"initial_loss", t.initial_loss},
                      {"final_loss", t.final_loss}, {"failed", t.failed}};
            out << j.dump() << '\n';
        }
    }
    require(out.good(), "trace dump write failed: " + path);
}

} // namespace docmi

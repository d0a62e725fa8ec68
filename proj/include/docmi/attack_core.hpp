#pragma once

#include <string>
#include <vector>

#include "docmi/answer_signals.hpp"
#include "docmi/seqmodel.hpp"

namespace docmi {

// The three per-pair fine-tuning probes: re-tune one named layer, re-tune a
// fresh low-rank adapter on that layer, or optimize the continuous document
// input while the model stays frozen.
struct AttackVariant {
    enum class Kind { kFL, kFLLoRA, kIG };
    Kind kind = Kind::kFL;
    std::string layer = "decoder0.fc1"; // FL / FLLoRA target
    int lora_rank = 4;

    static AttackVariant fl(std::string layer_name);
    static AttackVariant fllora(std::string layer_name, int rank);
    static AttackVariant ig();
    std::string name() const; // "fl" | "fllora" | "ig"
};

struct AttackHyperparams {
    double lr = 1e-3;              // Adam step size for the probe
    int max_steps = 200;           // S
    double early_stop_tau = 1e-4;  // stop when |loss improvement| drops below
    UtilityKind utility = UtilityKind::kNls;
    int max_questions = 10;        // M: per-document question budget
};

// Result of one per-pair probe. utility_history has steps+1 entries: the
// value before any update, then one per completed step.
struct OptimizationTrace {
    double delta = 0.0;      // L2 change over the designated parameters
    int steps = 0;
    std::vector<double> utility_history;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool failed = false;     // loss went non-finite mid-optimization

    double mean_utility() const;
};

// Runs the probe for a single (question, answer) pair, starting from the
// target parameters (or a fresh zero-effect adapter / the pristine input
// view). The target model is never mutated.
OptimizationTrace extract_trace(const Model& target, const Document& doc,
                                const Vocab& vocab, const QAPair& qa,
                                const AttackVariant& variant,
                                const AttackHyperparams& hp, Rng rng);

// One independent trace per question-answer pair, each restarting from the
// target parameters; at most hp.max_questions pairs, in document order.
// qa_override substitutes the question list (e.g. rephrased surface forms).
std::vector<OptimizationTrace> extract_document_features(
    const Model& target, const Document& doc, const Vocab& vocab,
    const AttackVariant& variant, const AttackHyperparams& hp, Rng rng,
    const std::vector<QAPair>* qa_override = nullptr);

// One structured line per trace for offline analysis.
void dump_traces(const std::string& path, const std::string& variant_name,
                 const std::vector<std::pair<int, std::vector<OptimizationTrace>>>& per_doc);

} // namespace docmi

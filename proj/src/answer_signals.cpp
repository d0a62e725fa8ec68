#include "docmi/answer_signals.hpp"

#include <numeric>

namespace docmi {

std::vector<double> answer_token_logprobs(const Model& model, const TrainExample& ex,
                                          const LoraAdapter* lora) {
    // model rows cover answer tokens then EOS; drop the terminator row
    std::vector<double> rows = model.answer_token_logprobs(ex.enc_ids, ex.answer, lora);
    rows.pop_back();
    return rows;
}

double answer_loss(const Model& model, const TrainExample& ex, const LoraAdapter* lora) {
    const std::vector<double> lp = answer_token_logprobs(model, ex, lora);
    return -std::accumulate(lp.begin(), lp.end(), 0.0);
}

double model_utility(const Model& model, UtilityKind kind, const TrainExample& ex,
                     const Vocab& vocab, const LoraAdapter* lora,
                     const Tensor* doc_override, int doc_prefix_len) {
    const GenerateResult g = model.generate(ex.enc_ids, lora, doc_override, doc_prefix_len);
    return utility(kind, vocab.detokenize(g.answer_tokens), vocab.detokenize(ex.answer));
}

} // namespace docmi

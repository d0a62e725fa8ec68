#pragma once

#include <vector>

#include "docmi/seqmodel.hpp"
#include "docmi/text_metrics.hpp"

namespace docmi {

// Per-answer signals used by the attacks: the teacher-forced loss and token
// log-probs cover exactly the answer tokens (the EOS continuation row stays in
// the training objective but out of the attack features), plus the generated
// utility against the gold answer.

// -sum_k log p(a_k | a_<k, x, q) over the K answer tokens.
double answer_loss(const Model& model, const TrainExample& ex,
                   const LoraAdapter* lora = nullptr);

// K entries; answer_loss == -sum of these.
std::vector<double> answer_token_logprobs(const Model& model, const TrainExample& ex,
                                          const LoraAdapter* lora = nullptr);

// U(F(x,q), a): greedy-decode an answer and score it against the gold one.
double model_utility(const Model& model, UtilityKind kind, const TrainExample& ex,
                     const Vocab& vocab, const LoraAdapter* lora = nullptr,
                     const Tensor* doc_override = nullptr, int doc_prefix_len = 0);

} // namespace docmi

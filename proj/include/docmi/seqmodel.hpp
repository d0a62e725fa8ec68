#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "docmi/params.hpp"
#include "docmi/rng.hpp"
#include "docmi/synthdata.hpp"
#include "docmi/tape.hpp"

namespace docmi {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 32;
    int d_ff = 64;
    int n_encoder_blocks = 1;
    int n_decoder_blocks = 1;
    int max_enc_len = 64;    // document linearization + SEP + question
    int max_answer_len = 6;  // decode-step budget K
    int pad = 0;
    int bos = 1;
    int eos = 2;
    int sep = 3;

    bool operator==(const ModelConfig&) const = default;
};

// Conventional dims for the corpus vocabulary; specials taken from the vocab.
ModelConfig make_model_config(const Vocab& vocab);

// Maps a layer name to the parameter names it owns. Every model parameter
// belongs to exactly one layer, so single-layer fine-tuning can address any
// part of the model.
class LayerRegistry {
public:
    void add(const std::string& layer, std::vector<std::string> param_names);
    bool has(const std::string& layer) const;
    const std::vector<std::string>& params_of(const std::string& layer) const;
    const std::vector<std::string>& layer_names() const { return layers_; }

private:
    std::vector<std::string> layers_;
    std::vector<std::vector<std::string>> params_;
};

// Low-rank adapter on one linear layer's weight matrix: effective weight is
// W + scale * A.B with A Kaiming-initialized and B zero, so a fresh adapter
// leaves the model's outputs untouched.
struct LoraAdapter {
    std::string layer;
    std::string weight_name; // the adapted parameter
    int rank = 0;
    Tensor A;                // {d_in, rank}
    Tensor B;                // {rank, d_out}
    double scale = 1.0;

    std::int64_t param_count() const { return A.size() + B.size(); }
};

struct GenerateResult {
    std::vector<int> tokens;         // emitted tokens, includes EOS when reached
    std::vector<int> answer_tokens;  // tokens with the trailing EOS stripped
    std::vector<double> token_logprobs;
    std::vector<std::vector<double>> distributions; // next-token dist per step

    double seq_logprob() const;
};

struct TrainExample {
    std::vector<int> enc_ids; // document linearization + SEP + question
    std::vector<int> answer;

    bool operator==(const TrainExample&) const = default;
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 8;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> epoch_loss; // mean example loss per epoch
};

struct CheckpointMeta {
    std::uint64_t seed = 0;
    int steps = 0;
    std::string corpus_hash;

    bool operator==(const CheckpointMeta&) const = default;
};

// Single-head encoder-decoder with one attention block per side by default.
// Parameters live in a flat ParameterSet; graph construction copies them onto
// a Tape as named leaves, so callers pick which gradients they consume.
class Model {
public:
    Model() = default;
    static Model init(const ModelConfig& cfg, Rng& rng);

    const ModelConfig& config() const { return cfg_; }
    const ParameterSet& params() const { return params_; }
    ParameterSet& params_mut() { return params_; }
    const LayerRegistry& registry() const { return registry_; }

    // Teacher-forced answer loss: -sum_k log p(a_k | a_<k, enc). The answer
    // sequence is extended with EOS internally. Optional pieces:
    //  - lora: adds leaves "lora.A"/"lora.B" and adapts the target weight
    //  - doc_override: {doc_prefix_len, d_model} leaf "doc-input" replacing
    //    the token embeddings of the first doc_prefix_len encoder positions
    Tape::Ref build_loss(Tape& tape, const std::vector<int>& enc_ids,
                         const std::vector<int>& answer,
                         const LoraAdapter* lora = nullptr,
                         const Tensor* doc_override = nullptr,
                         int doc_prefix_len = 0) const;

    double example_loss(const std::vector<int>& enc_ids,
                        const std::vector<int>& answer,
                        const LoraAdapter* lora = nullptr) const;

    // Greedy decode, at most max_answer_len answer tokens plus the EOS step.
    // Accepts the same optional document-input override as build_loss.
    GenerateResult generate(const std::vector<int>& enc_ids,
                            const LoraAdapter* lora = nullptr,
                            const Tensor* doc_override = nullptr,
                            int doc_prefix_len = 0) const;

    // Per-answer-token log-probs under teacher forcing (the negative of the
    // cross-entropy rows); last entry is the EOS position.
    std::vector<double> answer_token_logprobs(const std::vector<int>& enc_ids,
                                              const std::vector<int>& answer,
                                              const LoraAdapter* lora = nullptr) const;

    // Current embedding rows for the first doc_prefix_len encoder positions;
    // the starting point for input-space fine-tuning.
    Tensor doc_input_view(const std::vector<int>& enc_ids, int doc_prefix_len) const;

private:
    friend std::pair<Model, CheckpointMeta> load_model(const std::string& path);

    ModelConfig cfg_;
    ParameterSet params_;
    LayerRegistry registry_;

    struct GraphRefs; // per-build leaf handles
    Tape::Ref encode(Tape& tape, GraphRefs& refs, const std::vector<int>& enc_ids,
                     const Tensor* doc_override, int doc_prefix_len) const;
    Tape::Ref decode_logits(Tape& tape, GraphRefs& refs, Tape::Ref enc_out,
                            const std::vector<int>& dec_ids) const;
    void check_ids(const std::vector<int>& ids, std::size_t max_len) const;
};

LoraAdapter make_lora(const Model& model, const std::string& layer, int rank, Rng& rng);

std::vector<int> encoder_input(const Document& doc, const Vocab& vocab,
                               const std::vector<int>& question);
// One example per question-answer pair, in corpus order.
std::vector<TrainExample> make_examples(const std::vector<Document>& docs,
                                        const Vocab& vocab);

// Mini-batch Adam on the mean example loss. Throws NumericError if the loss
// ever goes non-finite.
TrainResult train_model(Model& model, const std::vector<TrainExample>& data,
                        const TrainConfig& cfg);

void save_model(const Model& model, const CheckpointMeta& meta, const std::string& path);
std::pair<Model, CheckpointMeta> load_model(const std::string& path);

} // namespace docmi

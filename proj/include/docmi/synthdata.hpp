#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "docmi/rng.hpp"

namespace docmi {

// Token inventory shared by the corpus and the model. Built deterministically
// from the corpus config, so it never needs to be serialized alongside data.
struct Vocab {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;
    int pad = 0;
    int bos = 0;
    int eos = 0;
    int sep = 0;

    int add(const std::string& tok);
    int id(const std::string& tok) const; // throws ContractError on miss
    const std::string& str(int id) const;
    int size() const { return static_cast<int>(tokens.size()); }

    // joins token strings with single spaces; empty sequence -> ""
    std::string detokenize(const std::vector<int>& ids) const;
};

struct CorpusConfig {
    int n_train = 200;       // documents the target model trains on
    int n_member = 50;       // attack-set members, sampled from the train docs
    int n_nonmember = 50;    // attack-set non-members, disjoint from train
    int n_pretrain = 100;    // disjoint pool for proxy-model pretraining
    int n_keys = 24;         // distinct field-key tokens in the world
    int min_fields = 4;
    int max_fields = 8;
    int value_alphabet = 30; // distinct value tokens
    int value_len_max = 4;   // values are 1..value_len_max tokens
    int m_max = 10;          // per-document question-count ceiling
    double single_question_fraction = 0.35; // mass at exactly one question
    double question_geom_p = 0.3;           // tail decay for counts >= 2
    int vocab_budget = 160;  // hard cap on total token inventory
};

struct QAPair {
    std::vector<int> question;
    std::vector<int> answer;
    int template_id = 0;
    int field_key = 0; // index into the document's fields

    bool operator==(const QAPair&) const = default;
};

struct Document {
    int doc_id = 0;
    // (key token id, value token ids); keys distinct within a document
    std::vector<std::pair<int, std::vector<int>>> fields;
    std::vector<QAPair> qa;

    // pure function of fields: key value... SEP per field
    std::vector<int> linearize(const Vocab& vocab) const;

    bool operator==(const Document&) const = default;
};

struct Corpus {
    CorpusConfig config;
    std::vector<Document> train;      // full training set
    std::vector<Document> nonmembers; // attack-set negatives
    std::vector<Document> pretrain;   // held-out pool, disjoint from the rest
    std::vector<int> member_ids;      // doc_ids of the attack-set positives

    std::vector<const Document*> attack_set() const; // members then nonmembers
    const Document* find(int doc_id) const;
    bool is_member(int doc_id) const;
};

struct PerturbationSpec {
    enum class Mode { kExact, kTemplateVariant } mode = Mode::kExact;
    std::uint64_t variant_seed = 0;
};

Vocab build_vocab(const CorpusConfig& config);

int question_template_count();
std::vector<int> render_question(const Vocab& vocab, int template_id, int key_token,
                                 bool variant = false);

Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed);

std::vector<QAPair> perturb_questions(const Document& doc, const Vocab& vocab,
                                      const PerturbationSpec& spec);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

} // namespace docmi

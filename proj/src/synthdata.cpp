#include "docmi/synthdata.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "docmi/common.hpp"

namespace docmi {

using nlohmann::json;

int Vocab::add(const std::string& tok) {
    auto [it, fresh] = index.emplace(tok, static_cast<int>(tokens.size()));
    if (fresh) tokens.push_back(tok);
    return it->second;
}

int Vocab::id(const std::string& tok) const {
    auto it = index.find(tok);
    require(it != index.end(), "unknown token: " + tok);
    return it->second;
}

const std::string& Vocab::str(int id) const {
    require(id >= 0 && id < size(), "token id out of range");
    return tokens[static_cast<std::size_t>(id)];
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += str(ids[i]);
    }
    return out;
}

namespace {

std::string key_token(int i) {
    return "key" + std::to_string(i);
}

std::string value_token(int i) {
    return "v" + std::to_string(i);
}

const std::vector<std::vector<std::string>>& template_words() {
    static const std::vector<std::vector<std::string>> forms = {
        {"what", "is", "the"},
        {"tell", "me", "the"},
        {"give", "the", "", "value"},   // "" marks the key slot when not trailing
        {"report", "the", "", "entry"},
        {"show", "the", "", "field"},
    };
    return forms;
}

void validate(const CorpusConfig& c) {
    require(c.n_train >= 1 && c.n_nonmember >= 0 && c.n_pretrain >= 0, "corpus sizes must be positive");
    require(c.n_member >= 1 && c.n_member <= c.n_train, "member count must fit inside the train set");
    require(c.min_fields >= 1 && c.max_fields >= c.min_fields, "bad field-count range");
    require(c.max_fields <= c.n_keys, "more fields per document than distinct keys");
    require(c.value_alphabet >= 1 && c.value_len_max >= 1, "bad value alphabet config");
    require(c.m_max >= 1, "m_max must be at least 1");
    require(c.single_question_fraction >= 0.0 && c.single_question_fraction <= 1.0,
            "single_question_fraction outside [0,1]");
    require(c.question_geom_p > 0.0 && c.question_geom_p <= 1.0, "question_geom_p outside (0,1]");
}

int sample_question_count(const CorpusConfig& c, Rng& rng) {
    if (rng.uniform() < c.single_question_fraction || c.m_max == 1) return 1;
    int m = 2;
    while (m < c.m_max && rng.uniform() > c.question_geom_p) ++m;
    return m;
}

Document make_document(int doc_id, const CorpusConfig& c, const Vocab& vocab, Rng& rng) {
    Document doc;
    doc.doc_id = doc_id;

    const int span = c.max_fields - c.min_fields + 1;
    const int n_fields = c.min_fields + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));

    std::vector<int> keys(static_cast<std::size_t>(c.n_keys));
    std::iota(keys.begin(), keys.end(), 0);
    rng.shuffle(keys);
    for (int f = 0; f < n_fields; ++f) {
        const int key_id = vocab.id(key_token(keys[static_cast<std::size_t>(f)]));
        std::vector<int> value;
        const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.value_len_max)));
        for (int j = 0; j < len; ++j) {
            value.push_back(vocab.id(value_token(static_cast<int>(rng.below(
                static_cast<std::uint64_t>(c.value_alphabet))))));
        }
        doc.fields.emplace_back(key_id, std::move(value));
    }

    const int m = sample_question_count(c, rng);
    std::vector<int> order(static_cast<std::size_t>(n_fields));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int i = 0; i < m; ++i) {
        QAPair qa;
        qa.field_key = order[static_cast<std::size_t>(i % n_fields)];
        qa.template_id = static_cast<int>(rng.below(
            static_cast<std::uint64_t>(question_template_count())));
        qa.question = render_question(vocab, qa.template_id,
                                      doc.fields[static_cast<std::size_t>(qa.field_key)].first);
        qa.answer = doc.fields[static_cast<std::size_t>(qa.field_key)].second;
        doc.qa.push_back(std::move(qa));
    }
    return doc;
}

} // namespace

Vocab build_vocab(const CorpusConfig& config) {
    validate(config);
    Vocab v;
    v.pad = v.add("<pad>");
    v.bos = v.add("<bos>");
    v.eos = v.add("<eos>");
    v.sep = v.add("<sep>");
    for (int i = 0; i < config.n_keys; ++i) v.add(key_token(i));
    for (int i = 0; i < config.value_alphabet; ++i) v.add(value_token(i));
    for (const auto& form : template_words()) {
        for (const auto& w : form) {
            if (!w.empty()) v.add(w);
        }
    }
    require(v.size() <= config.vocab_budget,
            "infeasible config: token inventory exceeds the vocabulary budget");
    return v;
}

int question_template_count() {
    return static_cast<int>(template_words().size());
}

std::vector<int> render_question(const Vocab& vocab, int template_id, int key_token,
                                 bool variant) {
    const auto& forms = template_words();
    require(template_id >= 0 && template_id < static_cast<int>(forms.size()),
            "unknown template id");
    std::vector<int> out;
    bool placed = false;
    for (const auto& w : forms[static_cast<std::size_t>(template_id)]) {
        if (w.empty()) {
            out.push_back(key_token);
            placed = true;
        } else {
            out.push_back(vocab.id(w));
        }
    }
    if (!placed) out.push_back(key_token);
    if (variant) std::reverse(out.begin(), out.end());
    return out;
}

std::vector<int> Document::linearize(const Vocab& vocab) const {
    std::vector<int> out;
    for (const auto& [key, value] : fields) {
        out.push_back(key);
        out.insert(out.end(), value.begin(), value.end());
        out.push_back(vocab.sep);
    }
    return out;
}

Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed) {
    validate(config);
    const Vocab vocab = build_vocab(config);
    Corpus corpus;
    corpus.config = config;

    Rng rng(seed, "corpus");
    int next_id = 0;
    for (int i = 0; i < config.n_train; ++i) {
        corpus.train.push_back(make_document(next_id++, config, vocab, rng));
    }
    for (int i = 0; i < config.n_nonmember; ++i) {
        corpus.nonmembers.push_back(make_document(next_id++, config, vocab, rng));
    }
    for (int i = 0; i < config.n_pretrain; ++i) {
        corpus.pretrain.push_back(make_document(next_id++, config, vocab, rng));
    }

    Rng pick = rng.fork("member-sample");
    std::vector<int> order(static_cast<std::size_t>(config.n_train));
    std::iota(order.begin(), order.end(), 0);
    pick.shuffle(order);
    for (int i = 0; i < config.n_member; ++i) {
        corpus.member_ids.push_back(corpus.train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].doc_id);
    }
    std::sort(corpus.member_ids.begin(), corpus.member_ids.end());
    return corpus;
}

std::vector<const Document*> Corpus::attack_set() const {
    std::vector<const Document*> out;
    for (int id : member_ids) {
        const Document* d = find(id);
        require(d != nullptr, "member id missing from corpus");
        out.push_back(d);
    }
    for (const Document& d : nonmembers) out.push_back(&d);
    return out;
}

const Document* Corpus::find(int doc_id) const {
    for (const auto* pool : {&train, &nonmembers, &pretrain}) {
        for (const Document& d : *pool) {
            if (d.doc_id == doc_id) return &d;
        }
    }
    return nullptr;
}

bool Corpus::is_member(int doc_id) const {
    return std::binary_search(member_ids.begin(), member_ids.end(), doc_id);
}

std::vector<QAPair> perturb_questions(const Document& doc, const Vocab& vocab,
                                      const PerturbationSpec& spec) {
    require(!doc.qa.empty(), "document has no question-answer pairs");
    std::vector<QAPair> out;
    for (const QAPair& qa : doc.qa) {
        require(qa.template_id >= 0 && qa.template_id < question_template_count(),
                "unknown template id");
        QAPair p = qa;
        if (spec.mode == PerturbationSpec::Mode::kTemplateVariant) {
            // shift to a different template, then reverse its token order, so
            // the surface form never collides with any training question
            const int n = question_template_count();
            const int shifted = static_cast<int>(
                (static_cast<std::uint64_t>(qa.template_id) + spec.variant_seed) %
                static_cast<std::uint64_t>(n));
            const int key = doc.fields[static_cast<std::size_t>(qa.field_key)].first;
            p.question = render_question(vocab, shifted, key, true);
        }
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

json doc_to_json(const Document& d) {
    json fields = json::array();
    for (const auto& [key, value] : d.fields) fields.push_back({key, value});
    json qa = json::array();
    for (const QAPair& p : d.qa) {
        qa.push_back({{"q", p.question}, {"a", p.answer},
                      {"t", p.template_id}, {"f", p.field_key}});
    }
    return {{"doc_id", d.doc_id}, {"fields", fields}, {"qa", qa}};
}

Document doc_from_json(const json& j) {
    Document d;
    d.doc_id = j.at("doc_id").get<int>();
    for (const auto& f : j.at("fields")) {
        d.fields.emplace_back(f.at(0).get<int>(), f.at(1).get<std::vector<int>>());
    }
    for (const auto& q : j.at("qa")) {
        QAPair p;
        p.question = q.at("q").get<std::vector<int>>();
        p.answer = q.at("a").get<std::vector<int>>();
        p.template_id = q.at("t").get<int>();
        p.field_key = q.at("f").get<int>();
        d.qa.push_back(std::move(p));
    }
    return d;
}

json config_to_json(const CorpusConfig& c) {
    return {{"n_train", c.n_train}, {"n_member", c.n_member},
            {"n_nonmember", c.n_nonmember}, {"n_pretrain", c.n_pretrain},
            {"n_keys", c.n_keys}, {"min_fields", c.min_fields},
            {"max_fields", c.max_fields}, {"value_alphabet", c.value_alphabet},
            {"value_len_max", c.value_len_max}, {"m_max", c.m_max},
            {"single_question_fraction", c.single_question_fraction},
            {"question_geom_p", c.question_geom_p},
            {"vocab_budget", c.vocab_budget}};
}

CorpusConfig config_from_json(const json& j) {
    CorpusConfig c;
    c.n_train = j.at("n_train").get<int>();
    c.n_member = j.at("n_member").get<int>();
    c.n_nonmember = j.at("n_nonmember").get<int>();
    c.n_pretrain = j.at("n_pretrain").get<int>();
    c.n_keys = j.at("n_keys").get<int>();
    c.min_fields = j.at("min_fields").get<int>();
    c.max_fields = j.at("max_fields").get<int>();
    c.value_alphabet = j.at("value_alphabet").get<int>();
    c.value_len_max = j.at("value_len_max").get<int>();
    c.m_max = j.at("m_max").get<int>();
    c.single_question_fraction = j.at("single_question_fraction").get<double>();
    c.question_geom_p = j.at("question_geom_p").get<double>();
    c.vocab_budget = j.at("vocab_budget").get<int>();
    return c;
}

} // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot open corpus file for writing: " + path);
    json header = {{"kind", "docmi-corpus"}, {"version", 1},
                   {"config", config_to_json(corpus.config)},
                   {"member_ids", corpus.member_ids}};
    out << header.dump() << '\n';
    auto emit = [&](const std::vector<Document>& docs, const char* split) {
        for (const Document& d : docs) {
            json j = doc_to_json(d);
            j["split"] = split;
            out << j.dump() << '\n';
        }
    };
    emit(corpus.train, "train");
    emit(corpus.nonmembers, "nonmember");
    emit(corpus.pretrain, "pretrain");
    require(out.good(), "write failed: " + path);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open corpus file: " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "corpus file is empty: " + path);
    json header = json::parse(line);
    require(header.value("kind", "") == "docmi-corpus", "not a corpus file: " + path);
    require(header.value("version", 0) == 1, "unsupported corpus version");

    Corpus corpus;
    corpus.config = config_from_json(header.at("config"));
    corpus.member_ids = header.at("member_ids").get<std::vector<int>>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        const std::string split = j.at("split").get<std::string>();
        Document d = doc_from_json(j);
        if (split == "train") {
            corpus.train.push_back(std::move(d));
        } else if (split == "nonmember") {
            corpus.nonmembers.push_back(std::move(d));
        } else if (split == "pretrain") {
            corpus.pretrain.push_back(std::move(d));
        } else {
            throw ContractError("unknown split in corpus file: " + split);
        }
    }
    return corpus;
}

} // namespace docmi

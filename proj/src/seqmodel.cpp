#include "docmi/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "docmi/adam.hpp"
#include "docmi/common.hpp"

namespace docmi {

using nlohmann::json;

ModelConfig make_model_config(const Vocab& vocab) {
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.pad = vocab.pad;
    cfg.bos = vocab.bos;
    cfg.eos = vocab.eos;
    cfg.sep = vocab.sep;
    return cfg;
}

void LayerRegistry::add(const std::string& layer, std::vector<std::string> param_names) {
    require(!has(layer), "LayerRegistry: duplicate layer '" + layer + "'");
    layers_.push_back(layer);
    params_.push_back(std::move(param_names));
}

bool LayerRegistry::has(const std::string& layer) const {
    return std::find(layers_.begin(), layers_.end(), layer) != layers_.end();
}

const std::vector<std::string>& LayerRegistry::params_of(const std::string& layer) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i] == layer) return params_[i];
    }
    throw ContractError("LayerRegistry: unknown layer '" + layer + "'");
}

double GenerateResult::seq_logprob() const {
    return std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0);
}

namespace {

enum class Init { kZero, kOne, kKaiming, kGauss };

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    Init init;
    int fan_in = 1;
    double stddev = 0.0;
};

struct Layout {
    std::vector<ParamSpec> specs;
    LayerRegistry registry;
};

void validate_config(const ModelConfig& c) {
    require(c.vocab_size >= 5, "vocab must hold the special tokens plus content");
    require(c.d_model >= 1 && c.d_ff >= 1, "model dims must be >= 1");
    require(c.n_encoder_blocks >= 1 && c.n_decoder_blocks >= 1, "need at least one block per side");
    require(c.max_enc_len >= 1 && c.max_answer_len >= 1, "length limits must be >= 1");
    for (int id : {c.pad, c.bos, c.eos, c.sep}) {
        require(id >= 0 && id < c.vocab_size, "special token id outside vocabulary");
    }
}

Layout make_layout(const ModelConfig& c) {
    Layout out;
    std::vector<ParamSpec>& sp = out.specs;
    const int d = c.d_model;
    const double emb_std = 0.1;

    auto norm_pair = [&](const std::string& stem) {
        sp.push_back({stem + ".gain", {d}, Init::kOne});
        sp.push_back({stem + ".bias", {d}, Init::kZero});
        return std::vector<std::string>{stem + ".gain", stem + ".bias"};
    };
    auto attn = [&](const std::string& stem) {
        std::vector<std::string> names;
        for (const char* m : {"wq", "wk", "wv", "wo"}) {
            sp.push_back({stem + "." + m, {d, d}, Init::kKaiming, d});
            names.push_back(stem + "." + m);
        }
        return names;
    };

    sp.push_back({"token-embedding", {c.vocab_size, d}, Init::kGauss, 1, emb_std});
    sp.push_back({"pos-encoder", {c.max_enc_len, d}, Init::kGauss, 1, emb_std});
    sp.push_back({"pos-decoder", {c.max_answer_len + 2, d}, Init::kGauss, 1, emb_std});
    out.registry.add("embeddings", {"token-embedding", "pos-encoder", "pos-decoder"});

    for (int b = 0; b < c.n_encoder_blocks; ++b) {
        const std::string p = "encoder" + std::to_string(b);
        out.registry.add(p + ".attn", attn(p + ".attn"));
        std::vector<std::string> norms = norm_pair(p + ".ln1");
        sp.push_back({p + ".fc1.w", {d, c.d_ff}, Init::kKaiming, d});
        sp.push_back({p + ".fc1.b", {c.d_ff}, Init::kZero});
        out.registry.add(p + ".fc1", {p + ".fc1.w", p + ".fc1.b"});
        sp.push_back({p + ".fc2.w", {c.d_ff, d}, Init::kKaiming, c.d_ff});
        sp.push_back({p + ".fc2.b", {d}, Init::kZero});
        out.registry.add(p + ".fc2", {p + ".fc2.w", p + ".fc2.b"});
        auto n2 = norm_pair(p + ".ln2");
        norms.insert(norms.end(), n2.begin(), n2.end());
        out.registry.add(p + ".layer-norm", norms);
    }

    for (int b = 0; b < c.n_decoder_blocks; ++b) {
        const std::string p = "decoder" + std::to_string(b);
        out.registry.add(p + ".self-attn", attn(p + ".self-attn"));
        out.registry.add(p + ".cross-attn", attn(p + ".cross-attn"));
        std::vector<std::string> norms = norm_pair(p + ".ln1");
        auto n2 = norm_pair(p + ".ln2");
        norms.insert(norms.end(), n2.begin(), n2.end());
        sp.push_back({p + ".fc1.w", {d, c.d_ff}, Init::kKaiming, d});
        sp.push_back({p + ".fc1.b", {c.d_ff}, Init::kZero});
        out.registry.add(p + ".fc1", {p + ".fc1.w", p + ".fc1.b"});
        sp.push_back({p + ".fc2.w", {c.d_ff, d}, Init::kKaiming, c.d_ff});
        sp.push_back({p + ".fc2.b", {d}, Init::kZero});
        out.registry.add(p + ".fc2", {p + ".fc2.w", p + ".fc2.b"});
        auto n3 = norm_pair(p + ".ln3");
        norms.insert(norms.end(), n3.begin(), n3.end());
        out.registry.add(p + ".layer-norm", norms);
    }

    // near-zero init keeps the untrained next-token distribution near uniform
    sp.push_back({"final-projection.w", {d, c.vocab_size}, Init::kGauss, 1, 0.02});
    sp.push_back({"final-projection.b", {c.vocab_size}, Init::kZero});
    out.registry.add("final-projection", {"final-projection.w", "final-projection.b"});
    return out;
}

std::vector<int> iota_ids(int n) {
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

Tensor causal_mask(int n) {
    Tensor m = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) m.at(i, j) = -1e9;
    }
    return m;
}

} // namespace

struct Model::GraphRefs {
    std::map<std::string, Tape::Ref> leaf;
    Tape::Ref lora_a;
    Tape::Ref lora_b;
    const LoraAdapter* lora = nullptr;

    Tape::Ref get(const std::string& name) const {
        auto it = leaf.find(name);
        require(it != leaf.end(), "graph refs: unknown parameter '" + name + "'");
        return it->second;
    }

    // effective weight: adapted when this is the LoRA target
    Tape::Ref weight(Tape& tape, const std::string& name) const {
        Tape::Ref w = get(name);
        if (lora != nullptr && lora->weight_name == name) {
            return tape.add(w, tape.scale(tape.matmul(lora_a, lora_b), lora->scale));
        }
        return w;
    }
};

Model Model::init(const ModelConfig& cfg, Rng& rng) {
    validate_config(cfg);
    Model m;
    m.cfg_ = cfg;
    Layout layout = make_layout(cfg);
    m.registry_ = std::move(layout.registry);
    for (const ParamSpec& s : layout.specs) {
        Tensor t;
        switch (s.init) {
        case Init::kZero: t = Tensor::zeros(s.shape); break;
        case Init::kOne: t = Tensor::full(s.shape, 1.0); break;
        case Init::kKaiming: t = Tensor::kaiming(s.shape, s.fan_in, rng); break;
        case Init::kGauss: t = Tensor::gaussian(s.shape, s.stddev, rng); break;
        }
        m.params_.add(s.name, std::move(t));
    }
    return m;
}

void Model::check_ids(const std::vector<int>& ids, std::size_t max_len) const {
    require(!ids.empty(), "empty token sequence");
    require(ids.size() <= max_len, "token sequence exceeds the configured maximum length");
    for (int id : ids) {
        require(id >= 0 && id < cfg_.vocab_size, "out-of-vocabulary token id");
    }
}

Tape::Ref Model::encode(Tape& tape, GraphRefs& refs, const std::vector<int>& enc_ids,
                        const Tensor* doc_override, int doc_prefix_len) const {
    const int L = static_cast<int>(enc_ids.size());
    Tape::Ref tok;
    if (doc_override != nullptr) {
        require(doc_prefix_len >= 1 && doc_prefix_len <= L,
                "document prefix length outside the encoder input");
        require(doc_override->shape == std::vector<int>{doc_prefix_len, cfg_.d_model},
                "document input view has the wrong shape");
        Tape::Ref doc = tape.leaf(*doc_override, "doc-input");
        if (doc_prefix_len == L) {
            tok = doc;
        } else {
            std::vector<int> rest(enc_ids.begin() + doc_prefix_len, enc_ids.end());
            tok = tape.concat_rows(doc, tape.embedding(refs.get("token-embedding"), rest));
        }
    } else {
        tok = tape.embedding(refs.get("token-embedding"), enc_ids);
    }
    Tape::Ref x = tape.add(tok, tape.embedding(refs.get("pos-encoder"), iota_ids(L)));

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
    for (int b = 0; b < cfg_.n_encoder_blocks; ++b) {
        const std::string p = "encoder" + std::to_string(b);
        Tape::Ref q = tape.matmul(x, refs.get(p + ".attn.wq"));
        Tape::Ref k = tape.matmul(x, refs.get(p + ".attn.wk"));
        Tape::Ref v = tape.matmul(x, refs.get(p + ".attn.wv"));
        Tape::Ref a = tape.softmax_rows(tape.scale(tape.matmul(q, k, true), inv_sqrt_d));
        Tape::Ref att = tape.matmul(tape.matmul(a, v), refs.get(p + ".attn.wo"));
        x = tape.layer_norm(tape.add(x, att), refs.get(p + ".ln1.gain"), refs.get(p + ".ln1.bias"));

        Tape::Ref h = tape.tanh(tape.add_rowvec(
            tape.matmul(x, refs.weight(tape, p + ".fc1.w")), refs.get(p + ".fc1.b")));
        Tape::Ref mlp = tape.add_rowvec(
            tape.matmul(h, refs.weight(tape, p + ".fc2.w")), refs.get(p + ".fc2.b"));
        x = tape.layer_norm(tape.add(x, mlp), refs.get(p + ".ln2.gain"), refs.get(p + ".ln2.bias"));
    }
    return x;
}

Tape::Ref Model::decode_logits(Tape& tape, GraphRefs& refs, Tape::Ref enc_out,
                               const std::vector<int>& dec_ids) const {
    const int T = static_cast<int>(dec_ids.size());
    require(T <= cfg_.max_answer_len + 2, "decoder input exceeds the position table");
    Tape::Ref x = tape.add(tape.embedding(refs.get("token-embedding"), dec_ids),
                           tape.embedding(refs.get("pos-decoder"), iota_ids(T)));

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
    for (int b = 0; b < cfg_.n_decoder_blocks; ++b) {
        const std::string p = "decoder" + std::to_string(b);
        Tape::Ref q = tape.matmul(x, refs.get(p + ".self-attn.wq"));
        Tape::Ref k = tape.matmul(x, refs.get(p + ".self-attn.wk"));
        Tape::Ref v = tape.matmul(x, refs.get(p + ".self-attn.wv"));
        Tape::Ref scores = tape.add(tape.scale(tape.matmul(q, k, true), inv_sqrt_d),
                                    tape.constant(causal_mask(T)));
        Tape::Ref att = tape.matmul(tape.matmul(tape.softmax_rows(scores), v),
                                    refs.get(p + ".self-attn.wo"));
        x = tape.layer_norm(tape.add(x, att), refs.get(p + ".ln1.gain"), refs.get(p + ".ln1.bias"));

        q = tape.matmul(x, refs.get(p + ".cross-attn.wq"));
        k = tape.matmul(enc_out, refs.get(p + ".cross-attn.wk"));
        v = tape.matmul(enc_out, refs.get(p + ".cross-attn.wv"));
        Tape::Ref cross = tape.softmax_rows(tape.scale(tape.matmul(q, k, true), inv_sqrt_d));
        Tape::Ref catt = tape.matmul(tape.matmul(cross, v), refs.get(p + ".cross-attn.wo"));
        x = tape.layer_norm(tape.add(x, catt), refs.get(p + ".ln2.gain"), refs.get(p + ".ln2.bias"));

        Tape::Ref h = tape.tanh(tape.add_rowvec(
            tape.matmul(x, refs.weight(tape, p + ".fc1.w")), refs.get(p + ".fc1.b")));
        Tape::Ref mlp = tape.add_rowvec(
            tape.matmul(h, refs.weight(tape, p + ".fc2.w")), refs.get(p + ".fc2.b"));
        x = tape.layer_norm(tape.add(x, mlp), refs.get(p + ".ln3.gain"), refs.get(p + ".ln3.bias"));
    }
    return tape.add_rowvec(tape.matmul(x, refs.weight(tape, "final-projection.w")),
                           refs.get("final-projection.b"));
}

Tape::Ref Model::build_loss(Tape& tape, const std::vector<int>& enc_ids,
                            const std::vector<int>& answer,
                            const LoraAdapter* lora,
                            const Tensor* doc_override, int doc_prefix_len) const {
    check_ids(enc_ids, static_cast<std::size_t>(cfg_.max_enc_len));
    require(answer.size() <= static_cast<std::size_t>(cfg_.max_answer_len),
            "answer exceeds the configured maximum length");
    for (int id : answer) {
        require(id >= 0 && id < cfg_.vocab_size, "out-of-vocabulary token id");
    }

    GraphRefs refs;
    for (const std::string& name : params_.names()) {
        refs.leaf.emplace(name, tape.leaf(params_.get(name), name));
    }
    if (lora != nullptr) {
        require(params_.contains(lora->weight_name), "adapter targets an unknown parameter");
        refs.lora = lora;
        refs.lora_a = tape.leaf(lora->A, "lora.A");
        refs.lora_b = tape.leaf(lora->B, "lora.B");
    }

    Tape::Ref enc = encode(tape, refs, enc_ids, doc_override, doc_prefix_len);
    std::vector<int> dec_in;
    dec_in.push_back(cfg_.bos);
    dec_in.insert(dec_in.end(), answer.begin(), answer.end());
    std::vector<int> targets = answer;
    targets.push_back(cfg_.eos);
    Tape::Ref logits = decode_logits(tape, refs, enc, dec_in);
    return tape.cross_entropy_sum(logits, targets);
}

double Model::example_loss(const std::vector<int>& enc_ids,
                           const std::vector<int>& answer,
                           const LoraAdapter* lora) const {
    Tape tape;
    return tape.value(build_loss(tape, enc_ids, answer, lora)).scalar_value();
}

std::vector<double> Model::answer_token_logprobs(const std::vector<int>& enc_ids,
                                                 const std::vector<int>& answer,
                                                 const LoraAdapter* lora) const {
    Tape tape;
    Tape::Ref loss = build_loss(tape, enc_ids, answer, lora);
    std::vector<double> out = tape.cross_entropy_rows(loss);
    for (double& x : out) x = -x;
    return out;
}

GenerateResult Model::generate(const std::vector<int>& enc_ids,
                               const LoraAdapter* lora,
                               const Tensor* doc_override, int doc_prefix_len) const {
    check_ids(enc_ids, static_cast<std::size_t>(cfg_.max_enc_len));
    Tape tape;
    GraphRefs refs;
    for (const std::string& name : params_.names()) {
        refs.leaf.emplace(name, tape.leaf(params_.get(name), name));
    }
    if (lora != nullptr) {
        refs.lora = lora;
        refs.lora_a = tape.leaf(lora->A, "lora.A");
        refs.lora_b = tape.leaf(lora->B, "lora.B");
    }
    Tape::Ref enc = encode(tape, refs, enc_ids, doc_override, doc_prefix_len);

    GenerateResult res;
    std::vector<int> dec_in = {cfg_.bos};
    while (true) {
        Tape::Ref logits = decode_logits(tape, refs, enc, dec_in);
        const Tensor& lv = tape.value(logits);
        const auto row = lv.row(lv.rows() - 1);
        const std::vector<double> dist = softmax_row(row);
        int best = 0;
        for (int i = 1; i < static_cast<int>(dist.size()); ++i) {
            if (dist[i] > dist[best]) best = i;
        }
        res.tokens.push_back(best);
        res.token_logprobs.push_back(std::log(dist[static_cast<std::size_t>(best)]));
        res.distributions.push_back(dist);
        if (best == cfg_.eos) break;
        res.answer_tokens.push_back(best);
        if (static_cast<int>(res.answer_tokens.size()) >= cfg_.max_answer_len) break;
        dec_in.push_back(best);
    }
    return res;
}

Tensor Model::doc_input_view(const std::vector<int>& enc_ids, int doc_prefix_len) const {
    check_ids(enc_ids, static_cast<std::size_t>(cfg_.max_enc_len));
    require(doc_prefix_len >= 1 && doc_prefix_len <= static_cast<int>(enc_ids.size()),
            "document prefix length outside the encoder input");
    const Tensor& emb = params_.get("token-embedding");
    Tensor view = Tensor::zeros({doc_prefix_len, cfg_.d_model});
    for (int i = 0; i < doc_prefix_len; ++i) {
        const auto src = emb.row(enc_ids[static_cast<std::size_t>(i)]);
        std::copy(src.begin(), src.end(), view.row(i).begin());
    }
    return view;
}

LoraAdapter make_lora(const Model& model, const std::string& layer, int rank, Rng& rng) {
    require(rank >= 1, "LoRA rank must be >= 1");
    const auto& names = model.registry().params_of(layer); // throws on unknown layer
    std::string weight;
    for (const std::string& n : names) {
        if (model.params().get(n).shape.size() == 2) {
            require(weight.empty(), "layer '" + layer + "' has several weight matrices; not adaptable");
            weight = n;
        }
    }
    require(!weight.empty(), "layer '" + layer + "' has no weight matrix to adapt");

    const Tensor& w = model.params().get(weight);
    LoraAdapter a;
    a.layer = layer;
    a.weight_name = weight;
    a.rank = rank;
    a.A = Tensor::kaiming({w.rows(), rank}, w.rows(), rng);
    a.B = Tensor::zeros({rank, w.cols()});
    a.scale = 1.0;
    return a;
}

std::vector<int> encoder_input(const Document& doc, const Vocab& vocab,
                               const std::vector<int>& question) {
    std::vector<int> enc = doc.linearize(vocab);
    enc.push_back(vocab.sep);
    enc.insert(enc.end(), question.begin(), question.end());
    return enc;
}

std::vector<TrainExample> make_examples(const std::vector<Document>& docs,
                                        const Vocab& vocab) {
    std::vector<TrainExample> out;
    for (const Document& d : docs) {
        for (const QAPair& qa : d.qa) {
            out.push_back({encoder_input(d, vocab, qa.question), qa.answer});
        }
    }
    return out;
}

TrainResult train_model(Model& model, const std::vector<TrainExample>& data,
                        const TrainConfig& cfg) {
    require(!data.empty(), "training dataset is empty");
    require(cfg.epochs >= 1 && cfg.batch_size >= 1, "bad training config");

    AdamConfig ac;
    ac.lr = cfg.lr;
    Adam opt(ac);
    Rng rng(cfg.seed, "train");
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult res;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = rng.fork("epoch-" + std::to_string(epoch));
        epoch_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t i = 0;
        while (i < order.size()) {
            const std::size_t batch_end = std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size));
            ParameterSet grad_sum = model.params().zeros_like();
            int batch_n = 0;
            for (; i < batch_end; ++i, ++batch_n) {
                const TrainExample& ex = data[static_cast<std::size_t>(order[i])];
                Tape tape;
                Tape::Ref loss = model.build_loss(tape, ex.enc_ids, ex.answer);
                const double lv = tape.value(loss).scalar_value();
                if (!std::isfinite(lv)) {
                    throw NumericError("training diverged: non-finite loss at epoch " +
                                       std::to_string(epoch));
                }
                epoch_loss += lv;
                tape.backward(loss);
                axpy(1.0, tape.named_grads(), grad_sum);
            }
            ParameterSet step_grad = model.params().zeros_like();
            axpy(1.0 / static_cast<double>(batch_n), grad_sum, step_grad);
            opt.step(model.params_mut(), step_grad);
        }
        res.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    return res;
}

namespace {

json config_to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"d_ff", c.d_ff},
            {"n_encoder_blocks", c.n_encoder_blocks}, {"n_decoder_blocks", c.n_decoder_blocks},
            {"max_enc_len", c.max_enc_len}, {"max_answer_len", c.max_answer_len},
            {"pad", c.pad}, {"bos", c.bos}, {"eos", c.eos}, {"sep", c.sep}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.n_encoder_blocks = j.at("n_encoder_blocks").get<int>();
    c.n_decoder_blocks = j.at("n_decoder_blocks").get<int>();
    c.max_enc_len = j.at("max_enc_len").get<int>();
    c.max_answer_len = j.at("max_answer_len").get<int>();
    c.pad = j.at("pad").get<int>();
    c.bos = j.at("bos").get<int>();
    c.eos = j.at("eos").get<int>();
    c.sep = j.at("sep").get<int>();
    return c;
}

constexpr char kMagic[4] = {'D', 'M', 'C', 'K'};

} // namespace

void save_model(const Model& model, const CheckpointMeta& meta, const std::string& path) {
    json tensors = json::array();
    for (const std::string& name : model.params().names()) {
        tensors.push_back({{"name", name}, {"shape", model.params().get(name).shape}});
    }
    json header = {{"kind", "docmi-checkpoint"}, {"version", 1},
                   {"config", config_to_json(model.config())},
                   {"meta", {{"seed", meta.seed}, {"steps", meta.steps},
                             {"corpus_hash", meta.corpus_hash}}},
                   {"tensors", tensors}};
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    const std::uint32_t version = 1;
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const std::string& name : model.params().names()) {
        const Tensor& t = model.params().get(name);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    require(out.good(), "checkpoint write failed: " + path);
}

std::pair<Model, CheckpointMeta> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, kMagic, 4) == 0, "not a checkpoint file: " + path);
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    require(in.good() && version == 1, "unsupported checkpoint version");
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    require(in.good(), "truncated checkpoint header");
    json header = json::parse(hs);
    require(header.value("kind", "") == "docmi-checkpoint", "not a checkpoint file: " + path);

    Model m;
    m.cfg_ = config_from_json(header.at("config"));
    validate_config(m.cfg_);
    Layout layout = make_layout(m.cfg_);
    m.registry_ = std::move(layout.registry);

    // tensors are stored in layout order; verify the header agrees
    const json& tensors = header.at("tensors");
    require(tensors.size() == layout.specs.size(), "checkpoint tensor list mismatch");
    for (std::size_t i = 0; i < layout.specs.size(); ++i) {
        const ParamSpec& s = layout.specs[i];
        require(tensors[i].at("name").get<std::string>() == s.name,
                "checkpoint tensor order mismatch at '" + s.name + "'");
        require(tensors[i].at("shape").get<std::vector<int>>() == s.shape,
                "checkpoint tensor shape mismatch at '" + s.name + "'");
        Tensor t = Tensor::zeros(s.shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        require(in.good(), "truncated checkpoint data at '" + s.name + "'");
        m.params_.add(s.name, std::move(t));
    }

    CheckpointMeta meta;
    const json& jm = header.at("meta");
    meta.seed = jm.at("seed").get<std::uint64_t>();
    meta.steps = jm.at("steps").get<int>();
    meta.corpus_hash = jm.at("corpus_hash").get<std::string>();
    return {std::move(m), meta};
}

} // namespace docmi

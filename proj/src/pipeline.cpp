#include "docmi/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "docmi/baselines.hpp"
#include "docmi/common.hpp"

namespace docmi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename Fn>
decltype(auto) stage(const char* name, Fn&& fn) {
    try {
        return std::forward<Fn>(fn)();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

// ---- name <-> enum ----

Agg agg_from_name(const std::string& s) {
    for (Agg a : all_aggregations()) {
        if (agg_name(a) == s) return a;
    }
    throw ContractError("unknown aggregator: " + s);
}

FeatureKind feature_from_name(const std::string& s) {
    for (FeatureKind f :
         {FeatureKind::kDelta, FeatureKind::kSteps, FeatureKind::kUtility,
          FeatureKind::kLoss, FeatureKind::kGradNorm, FeatureKind::kScore}) {
        if (feature_name(f) == s) return f;
    }
    throw ContractError("unknown feature: " + s);
}

UtilityKind utility_from_name(const std::string& s) {
    if (s == "nls") return UtilityKind::kNls;
    if (s == "acc") return UtilityKind::kAcc;
    throw ContractError("unknown utility kind: " + s);
}

std::string utility_name(UtilityKind k) {
    return k == UtilityKind::kNls ? "nls" : "acc";
}

AttackVariant variant_from(const std::string& name, const std::string& layer, int rank) {
    AttackVariant v;
    if (name == "fl") {
        v = AttackVariant::fl(layer);
    } else if (name == "fllora") {
        v = AttackVariant::fllora(layer, rank);
    } else if (name == "ig") {
        v = AttackVariant::ig();
        v.layer = layer; // carried for round-trips, unused by the probe
    } else {
        throw ContractError("unknown attack variant: " + name);
    }
    v.lora_rank = rank;
    return v;
}

const std::set<std::string>& known_baselines() {
    static const std::set<std::string> names = {"score-ta",     "loss-ta", "score-ua",
                                                "gradient-ua",  "scoreloss-ua",
                                                "min-k",        "min-k-pp"};
    return names;
}

void expect_keys(const json& j, const std::set<std::string>& allowed,
                 const std::string& where) {
    require(j.is_object(), where + " must be a JSON object");
    for (const auto& item : j.items()) {
        require(allowed.count(item.key()) == 1,
                "unknown key '" + item.key() + "' in " + where);
    }
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

double parse_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    require(used == s.size(), "not a number: " + s);
    return v;
}

// ---- config <-> json ----

json corpus_to_json(const CorpusConfig& c) {
    return {{"n_train", c.n_train},
            {"n_member", c.n_member},
            {"n_nonmember", c.n_nonmember},
            {"n_pretrain", c.n_pretrain},
            {"n_keys", c.n_keys},
            {"min_fields", c.min_fields},
            {"max_fields", c.max_fields},
            {"value_alphabet", c.value_alphabet},
            {"value_len_max", c.value_len_max},
            {"m_max", c.m_max},
            {"single_question_fraction", c.single_question_fraction},
            {"question_geom_p", c.question_geom_p},
            {"vocab_budget", c.vocab_budget}};
}

CorpusConfig corpus_from_json(const json& j, CorpusConfig c) {
    expect_keys(j,
                {"n_train", "n_member", "n_nonmember", "n_pretrain", "n_keys",
                 "min_fields", "max_fields", "value_alphabet", "value_len_max",
                 "m_max", "single_question_fraction", "question_geom_p",
                 "vocab_budget"},
                "corpus");
    c.n_train = j.value("n_train", c.n_train);
    c.n_member = j.value("n_member", c.n_member);
    c.n_nonmember = j.value("n_nonmember", c.n_nonmember);
    c.n_pretrain = j.value("n_pretrain", c.n_pretrain);
    c.n_keys = j.value("n_keys", c.n_keys);
    c.min_fields = j.value("min_fields", c.min_fields);
    c.max_fields = j.value("max_fields", c.max_fields);
    c.value_alphabet = j.value("value_alphabet", c.value_alphabet);
    c.value_len_max = j.value("value_len_max", c.value_len_max);
    c.m_max = j.value("m_max", c.m_max);
    c.single_question_fraction =
        j.value("single_question_fraction", c.single_question_fraction);
    c.question_geom_p = j.value("question_geom_p", c.question_geom_p);
    c.vocab_budget = j.value("vocab_budget", c.vocab_budget);
    return c;
}

// tau may be infinite (stop after the very first probe step); JSON has no
// infinity literal, so it travels as the string "inf"
json tau_to_json(double tau) {
    if (std::isinf(tau)) return "inf";
    return tau;
}

double tau_from_json(const json& v) {
    if (v.is_string()) {
        require(v.get<std::string>() == "inf", "early_stop_tau: bad value");
        return INFINITY;
    }
    return v.get<double>();
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["jobs"] = cfg.jobs;
    j["cache_checkpoints"] = cfg.cache_checkpoints;
    j["corpus"] = corpus_to_json(cfg.corpus);
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr}};
    j["dp"] = {{"enabled", cfg.dp_enabled},
               {"clip_norm", cfg.dp.clip_norm},
               {"noise_multiplier", cfg.dp.noise_multiplier},
               {"delta", cfg.dp.delta}};
    json feats = json::array();
    for (FeatureKind f : cfg.selection.features) feats.push_back(feature_name(f));
    json aggs = json::array();
    for (Agg a : cfg.selection.aggs) aggs.push_back(agg_name(a));
    j["attack"] = {{"variant", cfg.variant.name()},
                   {"layer", cfg.variant.layer},
                   {"lora_rank", cfg.variant.lora_rank},
                   {"lr", cfg.hp.lr},
                   {"max_steps", cfg.hp.max_steps},
                   {"early_stop_tau", tau_to_json(cfg.hp.early_stop_tau)},
                   {"utility", utility_name(cfg.hp.utility)},
                   {"max_questions", cfg.hp.max_questions},
                   {"features", feats},
                   {"aggs", aggs}};
    j["baselines"] = cfg.baselines;
    j["min_k_fraction"] = cfg.min_k_fraction;
    j["proxy"] = {{"d_model", cfg.proxy.d_model},
                  {"d_ff", cfg.proxy.d_ff},
                  {"match_target_arch", cfg.proxy.match_target_arch},
                  {"pretrain_epochs", cfg.proxy.pretrain.epochs},
                  {"pretrain_batch_size", cfg.proxy.pretrain.batch_size},
                  {"pretrain_lr", cfg.proxy.pretrain.lr},
                  {"distill_lr", cfg.proxy.distill.lr},
                  {"distill_batch_size", cfg.proxy.distill.batch_size},
                  {"distill_loss_floor", cfg.proxy.distill_loss_floor},
                  {"distill_epoch_cap", cfg.proxy.distill_epoch_cap}};
    j["query_budget"] = cfg.query_budget;
    j["eval"] = {{"fpr_targets", cfg.fpr_targets}};
    j["questions"] = {{"rephrase", cfg.rephrase_questions},
                      {"variant_seed", cfg.rephrase_seed}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    expect_keys(j,
                {"seed", "out_dir", "jobs", "cache_checkpoints", "corpus", "train",
                 "dp", "attack", "baselines", "min_k_fraction", "proxy",
                 "query_budget", "eval", "questions"},
                "config");
    ExperimentConfig cfg = default_config();
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.jobs = j.value("jobs", cfg.jobs);
    cfg.cache_checkpoints = j.value("cache_checkpoints", cfg.cache_checkpoints);
    if (j.contains("corpus")) cfg.corpus = corpus_from_json(j.at("corpus"), cfg.corpus);
    if (j.contains("train")) {
        const json& t = j.at("train");
        expect_keys(t, {"epochs", "batch_size", "lr"}, "train");
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.lr = t.value("lr", cfg.train.lr);
    }
    if (j.contains("dp")) {
        const json& d = j.at("dp");
        expect_keys(d, {"enabled", "clip_norm", "noise_multiplier", "delta"}, "dp");
        cfg.dp_enabled = d.value("enabled", cfg.dp_enabled);
        cfg.dp.clip_norm = d.value("clip_norm", cfg.dp.clip_norm);
        cfg.dp.noise_multiplier = d.value("noise_multiplier", cfg.dp.noise_multiplier);
        cfg.dp.delta = d.value("delta", cfg.dp.delta);
    }
    if (j.contains("attack")) {
        const json& a = j.at("attack");
        expect_keys(a,
                    {"variant", "layer", "lora_rank", "lr", "max_steps",
                     "early_stop_tau", "utility", "max_questions", "features", "aggs"},
                    "attack");
        const std::string vname = a.value("variant", cfg.variant.name());
        const std::string layer = a.value("layer", cfg.variant.layer);
        const int rank = a.value("lora_rank", cfg.variant.lora_rank);
        cfg.variant = variant_from(vname, layer, rank);
        cfg.hp.lr = a.value("lr", cfg.hp.lr);
        cfg.hp.max_steps = a.value("max_steps", cfg.hp.max_steps);
        if (a.contains("early_stop_tau"))
            cfg.hp.early_stop_tau = tau_from_json(a.at("early_stop_tau"));
        cfg.hp.utility =
            utility_from_name(a.value("utility", utility_name(cfg.hp.utility)));
        cfg.hp.max_questions = a.value("max_questions", cfg.hp.max_questions);
        if (a.contains("features")) {
            cfg.selection.features.clear();
            for (const json& f : a.at("features"))
                cfg.selection.features.push_back(feature_from_name(f.get<std::string>()));
        }
        if (a.contains("aggs")) {
            cfg.selection.aggs.clear();
            for (const json& g : a.at("aggs"))
                cfg.selection.aggs.push_back(agg_from_name(g.get<std::string>()));
        }
    }
    if (j.contains("baselines"))
        cfg.baselines = j.at("baselines").get<std::vector<std::string>>();
    cfg.min_k_fraction = j.value("min_k_fraction", cfg.min_k_fraction);
    if (j.contains("proxy")) {
        const json& p = j.at("proxy");
        expect_keys(p,
                    {"d_model", "d_ff", "match_target_arch", "pretrain_epochs",
                     "pretrain_batch_size", "pretrain_lr", "distill_lr",
                     "distill_batch_size", "distill_loss_floor", "distill_epoch_cap"},
                    "proxy");
        cfg.proxy.d_model = p.value("d_model", cfg.proxy.d_model);
        cfg.proxy.d_ff = p.value("d_ff", cfg.proxy.d_ff);
        cfg.proxy.match_target_arch =
            p.value("match_target_arch", cfg.proxy.match_target_arch);
        cfg.proxy.pretrain.epochs = p.value("pretrain_epochs", cfg.proxy.pretrain.epochs);
        cfg.proxy.pretrain.batch_size =
            p.value("pretrain_batch_size", cfg.proxy.pretrain.batch_size);
        cfg.proxy.pretrain.lr = p.value("pretrain_lr", cfg.proxy.pretrain.lr);
        cfg.proxy.distill.lr = p.value("distill_lr", cfg.proxy.distill.lr);
        cfg.proxy.distill.batch_size =
            p.value("distill_batch_size", cfg.proxy.distill.batch_size);
        cfg.proxy.distill_loss_floor =
            p.value("distill_loss_floor", cfg.proxy.distill_loss_floor);
        cfg.proxy.distill_epoch_cap =
            p.value("distill_epoch_cap", cfg.proxy.distill_epoch_cap);
    }
    cfg.query_budget = j.value("query_budget", cfg.query_budget);
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        expect_keys(e, {"fpr_targets"}, "eval");
        if (e.contains("fpr_targets"))
            cfg.fpr_targets = e.at("fpr_targets").get<std::vector<double>>();
    }
    if (j.contains("questions")) {
        const json& q = j.at("questions");
        expect_keys(q, {"rephrase", "variant_seed"}, "questions");
        cfg.rephrase_questions = q.value("rephrase", cfg.rephrase_questions);
        cfg.rephrase_seed = q.value("variant_seed", cfg.rephrase_seed);
    }
    return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
    require(!cfg.out_dir.empty(), "out_dir must not be empty");
    require(cfg.jobs >= 1, "jobs must be positive");
    const CorpusConfig& c = cfg.corpus;
    require(c.n_train >= 1 && c.n_nonmember >= 1, "corpus sizes must be positive");
    require(c.n_member >= 1 && c.n_member <= c.n_train,
            "n_member must lie in [1, n_train]");
    require(c.n_pretrain >= 0, "n_pretrain must be non-negative");
    require(c.min_fields >= 1 && c.min_fields <= c.max_fields, "bad field count range");
    require(c.m_max >= 1, "m_max must be positive");
    require(cfg.train.epochs >= 1 && cfg.train.batch_size >= 1 && cfg.train.lr > 0.0,
            "bad train config");
    if (cfg.dp_enabled) cfg.dp.validate();
    require(cfg.hp.lr > 0.0 && cfg.hp.max_steps >= 1 && cfg.hp.max_questions >= 1,
            "bad attack hyperparameters");
    require(cfg.hp.early_stop_tau >= 0.0, "early_stop_tau must be non-negative");
    require(!cfg.selection.features.empty() && !cfg.selection.aggs.empty(),
            "feature selection must not be empty");
    std::set<std::string> seen;
    for (const std::string& b : cfg.baselines) {
        require(known_baselines().count(b) == 1, "unknown baseline: " + b);
        require(seen.insert(b).second, "duplicate baseline: " + b);
    }
    require(cfg.min_k_fraction > 0.0 && cfg.min_k_fraction <= 1.0,
            "min_k_fraction must lie in (0, 1]");
    require(cfg.query_budget >= -1, "query_budget must be -1 (unlimited) or >= 0");
    require(!cfg.fpr_targets.empty(), "at least one FPR target is required");
    for (double t : cfg.fpr_targets)
        require(t > 0.0 && t < 1.0, "FPR targets must lie in (0, 1)");
    require(cfg.proxy.d_model >= 1 && cfg.proxy.d_ff >= 1, "bad proxy dims");
    require(cfg.proxy.pretrain.epochs >= 1 && cfg.proxy.pretrain.batch_size >= 1 &&
                cfg.proxy.pretrain.lr > 0.0,
            "bad proxy pretrain config");
    require(cfg.proxy.distill.lr > 0.0 && cfg.proxy.distill.batch_size >= 1,
            "bad proxy distill config");
    require(cfg.proxy.distill_loss_floor > 0.0 && cfg.proxy.distill_epoch_cap >= 1,
            "bad distillation stop rule");
}

// ---- run helpers ----

BaselineResult run_baseline(const std::string& name,
                            const std::vector<DocumentStats>& stats,
                            const ExperimentConfig& cfg) {
    Rng rng(cfg.seed, "baseline-" + name);
    if (name == "score-ta") return score_ta(stats);
    if (name == "loss-ta") return loss_ta(stats);
    if (name == "score-ua") return score_ua(stats, cfg.selection.aggs, rng);
    if (name == "gradient-ua") return gradient_ua(stats, rng);
    if (name == "scoreloss-ua") return scoreloss_ua(stats, rng);
    if (name == "min-k") return min_k(stats, cfg.min_k_fraction, rng);
    if (name == "min-k-pp") return min_k_pp(stats, cfg.min_k_fraction, rng);
    throw ContractError("unknown baseline: " + name);
}

struct TrainOutcome {
    Model model;
    bool cached = false;
    double epsilon = INFINITY; // at dp.delta; infinity when dp is off
    int steps = 0;
};

DPConfig derived_dp(const ExperimentConfig& cfg, std::size_t n_examples) {
    DPConfig d = cfg.dp;
    if (d.sampling_rate == 0.0) {
        d.sampling_rate = std::min(
            1.0, static_cast<double>(cfg.train.batch_size) /
                     static_cast<double>(n_examples));
    }
    return d;
}

std::string train_key(const ExperimentConfig& cfg, const std::string& corpus_hash) {
    json tj;
    tj["corpus"] = corpus_hash;
    tj["epochs"] = cfg.train.epochs;
    tj["batch_size"] = cfg.train.batch_size;
    tj["lr"] = cfg.train.lr;
    tj["seed"] = cfg.seed;
    if (cfg.dp_enabled) {
        tj["dp"] = {{"clip_norm", cfg.dp.clip_norm},
                    {"noise_multiplier", cfg.dp.noise_multiplier},
                    {"delta", cfg.dp.delta}};
    }
    return content_hash_bytes(tj.dump());
}

TrainOutcome ensure_target(const ExperimentConfig& cfg, const Corpus& corpus,
                           const Vocab& vocab, const std::string& corpus_hash,
                           const fs::path& run_dir, const fs::path& cache_dir) {
    const std::vector<TrainExample> data = make_examples(corpus.train, vocab);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const int steps_per_epoch = static_cast<int>(
        (data.size() + static_cast<std::size_t>(tc.batch_size) - 1) /
        static_cast<std::size_t>(tc.batch_size));

    const fs::path run_ckpt = run_dir / "target.ckpt";
    const fs::path cache_ckpt = cache_dir / ("target-" + train_key(cfg, corpus_hash) + ".ckpt");

    TrainOutcome out;
    if (cfg.cache_checkpoints && fs::exists(cache_ckpt)) {
        auto [model, meta] = load_model(cache_ckpt.string());
        require(meta.corpus_hash == corpus_hash, "cached checkpoint corpus mismatch");
        out.model = std::move(model);
        out.cached = true;
        out.steps = meta.steps;
        out.epsilon = cfg.dp_enabled
                          ? account_epsilon(derived_dp(cfg, data.size()), meta.steps)
                          : INFINITY;
        fs::copy_file(cache_ckpt, run_ckpt, fs::copy_options::overwrite_existing);
        return out;
    }

    Rng init_rng(cfg.seed, "target-init");
    out.model = Model::init(make_model_config(vocab), init_rng);
    if (cfg.dp_enabled) {
        const DPTrainResult r = dp_train_model(out.model, data, tc, derived_dp(cfg, data.size()));
        out.epsilon = r.epsilon;
        out.steps = r.steps;
    } else {
        train_model(out.model, data, tc);
        out.steps = tc.epochs * steps_per_epoch;
        out.epsilon = INFINITY;
    }
    const CheckpointMeta meta{cfg.seed, out.steps, corpus_hash};
    save_model(out.model, meta, run_ckpt.string());
    if (cfg.cache_checkpoints) {
        fs::create_directories(cache_dir);
        fs::copy_file(run_ckpt, cache_ckpt, fs::copy_options::overwrite_existing);
    }
    return out;
}

void write_manifest(const fs::path& run_dir, const RunSummary& sum,
                    std::uint64_t seed, bool dp_enabled) {
    json m;
    m["config_hash"] = sum.config_hash;
    m["seed"] = seed;
    m["corpus_hash"] = sum.corpus_hash;
    m["wall_seconds"] = sum.wall_seconds;
    m["dp_epsilon"] = dp_enabled ? json(sum.dp_epsilon) : json(nullptr);
    m["oracle_queries"] =
        sum.oracle_queries >= 0 ? json(sum.oracle_queries) : json(nullptr);
    m["used_cached_target"] = sum.used_cached_target;
    json outputs = json::array();
    for (const RunArtifact& a : sum.artifacts)
        outputs.push_back({{"path", a.path}, {"hash", a.hash}});
    m["outputs"] = outputs;
    std::ofstream out(run_dir / "manifest.json");
    require(out.good(), "cannot write manifest");
    out << m.dump(2) << '\n';
    require(out.good(), "manifest write failed");
}

// Shared front half of both pipelines: config/corpus/train stages plus the
// attack-set bookkeeping every later stage consumes.
struct RunContext {
    fs::path run_dir;
    Corpus corpus;
    Vocab vocab;
    TrainOutcome target;
    std::vector<const Document*> docs;
    std::vector<bool> truth;
    std::vector<int> question_counts;
    std::vector<std::string> outputs; // run-relative paths emitted so far
    std::chrono::steady_clock::time_point t0;
};

RunContext run_front(const ExperimentConfig& cfg, const fs::path& cache_dir,
                     RunSummary& sum) {
    RunContext ctx;
    ctx.t0 = std::chrono::steady_clock::now();
    stage("config", [&] { validate_config(cfg); });
    sum.out_dir = cfg.out_dir;
    sum.config_hash = config_hash(cfg);
    ctx.run_dir = cfg.out_dir;

    stage("io", [&] {
        fs::create_directories(ctx.run_dir);
        save_config_file((ctx.run_dir / "config.json").string(), cfg);
        // reports accumulate by appending; a rerun starts from scratch
        fs::remove(ctx.run_dir / "reports.csv");
    });
    ctx.outputs.push_back("config.json");

    stage("corpus", [&] {
        ctx.corpus = generate_corpus(cfg.corpus, cfg.seed);
        ctx.vocab = build_vocab(cfg.corpus);
        save_corpus(ctx.corpus, (ctx.run_dir / "corpus.txt").string());
    });
    ctx.outputs.push_back("corpus.txt");
    sum.corpus_hash = content_hash_file((ctx.run_dir / "corpus.txt").string());

    ctx.target = stage("train", [&] {
        return ensure_target(cfg, ctx.corpus, ctx.vocab, sum.corpus_hash, ctx.run_dir,
                             cache_dir);
    });
    ctx.outputs.push_back("target.ckpt");
    sum.used_cached_target = ctx.target.cached;
    sum.dp_epsilon = ctx.target.epsilon;

    ctx.docs = ctx.corpus.attack_set();
    for (const Document* d : ctx.docs) {
        ctx.truth.push_back(ctx.corpus.is_member(d->doc_id));
        ctx.question_counts.push_back(static_cast<int>(d->qa.size()));
    }
    return ctx;
}

void eval_one(const ExperimentConfig& cfg, RunContext& ctx, RunSummary& sum,
              const std::string& name, const std::vector<bool>& predicted,
              const std::vector<double>& scores, double gap) {
    const EvalReport r =
        evaluate_attack(name, cfg.seed, sum.config_hash, ctx.truth, predicted, scores,
                        ctx.question_counts, gap, cfg.fpr_targets);
    const std::string report_file = "report-" + name + ".txt";
    save_report((ctx.run_dir / report_file).string(), r);
    ctx.outputs.push_back(report_file);
    append_report_csv((ctx.run_dir / "reports.csv").string(), r);
    sum.reports.push_back(r);
}

void finish_run(const ExperimentConfig& cfg, RunContext& ctx, RunSummary& sum) {
    stage("manifest", [&] {
        ctx.outputs.push_back("reports.csv");
        for (const std::string& p : ctx.outputs) {
            sum.artifacts.push_back(
                {p, content_hash_file((ctx.run_dir / p).string())});
        }
        sum.wall_seconds = std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - ctx.t0)
                               .count();
        write_manifest(ctx.run_dir, sum, cfg.seed, cfg.dp_enabled);
    });
}

double attack_set_gap(const ExperimentConfig& cfg, const RunContext& ctx) {
    std::vector<const Document*> members;
    std::vector<const Document*> nonmembers;
    for (std::size_t i = 0; i < ctx.docs.size(); ++i) {
        (ctx.truth[i] ? members : nonmembers).push_back(ctx.docs[i]);
    }
    return traintest_gap(ctx.target.model, members, nonmembers, ctx.vocab,
                         cfg.hp.utility, cfg.hp.max_questions);
}

RunSummary run_whitebox_at(const ExperimentConfig& cfg, const fs::path& cache_dir) {
    RunSummary sum;
    RunContext ctx = run_front(cfg, cache_dir, sum);

    // The adversary only ever sees its own phrasing of each question, so a
    // rephrased run substitutes the question lists for the probe attack and
    // the baselines alike. Gold answers stay, and the reported train-test gap
    // keeps using the exact questions (it characterizes the target, not the
    // attack).
    std::vector<Document> rephrased;
    std::vector<const Document*> adversary_docs = ctx.docs;
    if (cfg.rephrase_questions) {
        PerturbationSpec spec;
        spec.mode = PerturbationSpec::Mode::kTemplateVariant;
        spec.variant_seed = cfg.rephrase_seed;
        rephrased.reserve(ctx.docs.size());
        adversary_docs.clear();
        for (const Document* d : ctx.docs) {
            Document copy = *d;
            copy.qa = perturb_questions(*d, ctx.vocab, spec);
            rephrased.push_back(std::move(copy));
            adversary_docs.push_back(&rephrased.back());
        }
    }

    AttackDecisionResult decision;
    stage("attack", [&] {
        decision = run_model_attack(ctx.target.model, adversary_docs, ctx.vocab,
                                    cfg.variant, cfg.hp, cfg.selection,
                                    Rng(cfg.seed, "attack"), nullptr, cfg.jobs);
        const std::string traces_file = "traces-" + cfg.variant.name() + ".jsonl";
        dump_traces((ctx.run_dir / traces_file).string(), cfg.variant.name(),
                    decision.traces);
        ctx.outputs.push_back(traces_file);

        MembershipDecision md;
        md.is_member = decision.is_member;
        md.score = decision.score;
        md.tie_broken = decision.tie_broken;
        std::vector<int> labels;
        for (bool t : ctx.truth) labels.push_back(t ? 1 : 0);
        const std::string desc_file = "descriptors-" + cfg.variant.name() + ".csv";
        export_descriptors((ctx.run_dir / desc_file).string(), decision.descriptors,
                           descriptor_columns(cfg.selection.features, cfg.selection.aggs),
                           md, &labels);
        ctx.outputs.push_back(desc_file);
    });

    std::vector<BaselineResult> baseline_results;
    stage("baselines", [&] {
        if (cfg.baselines.empty()) return;
        std::vector<DocumentStats> stats;
        for (const Document* d : adversary_docs) {
            stats.push_back(collect_document_stats(ctx.target.model, *d, ctx.vocab,
                                                   cfg.hp.utility, cfg.hp.max_questions));
        }
        for (const std::string& name : cfg.baselines)
            baseline_results.push_back(run_baseline(name, stats, cfg));
    });

    stage("eval", [&] {
        const double gap = attack_set_gap(cfg, ctx);
        eval_one(cfg, ctx, sum, cfg.variant.name(), decision.is_member, decision.score,
                 gap);
        for (const BaselineResult& b : baseline_results)
            eval_one(cfg, ctx, sum, baseline_name(b.kind), b.is_member, b.score, gap);
    });

    finish_run(cfg, ctx, sum);
    return sum;
}

RunSummary run_blackbox_at(const ExperimentConfig& cfg, const fs::path& cache_dir) {
    stage("config", [&] {
        require(!cfg.rephrase_questions,
                "rephrased-question runs are a white-box experiment");
        require(cfg.corpus.n_pretrain >= 1,
                "the black-box pipeline needs a proxy pretrain pool");
    });
    RunSummary sum;
    RunContext ctx = run_front(cfg, cache_dir, sum);

    BlackBoxAttackResult result;
    stage("blackbox", [&] {
        BlackBoxHandle oracle = oracle_from_model(ctx.target.model, ctx.vocab,
                                                  cfg.query_budget);
        ProxyConfig pcfg = cfg.proxy;
        pcfg.distill.seed = cfg.seed; // one master seed drives every stage
        result = blackbox_attack(oracle, ctx.docs, ctx.corpus, ctx.vocab, cfg.variant,
                                 cfg.hp, cfg.selection, pcfg, cfg.seed, cfg.jobs);
        sum.oracle_queries = result.oracle_queries;

        save_query_dataset((ctx.run_dir / "query-dataset.jsonl").string(),
                           result.query_dataset);
        ctx.outputs.push_back("query-dataset.jsonl");

        const CheckpointMeta meta{cfg.seed,
                                  static_cast<int>(result.distill.epoch_loss.size()),
                                  sum.corpus_hash};
        save_model(result.proxy, meta, (ctx.run_dir / "proxy.ckpt").string());
        ctx.outputs.push_back("proxy.ckpt");

        const std::string name = cfg.variant.name() + "-blackbox";
        const std::string traces_file = "traces-" + name + ".jsonl";
        dump_traces((ctx.run_dir / traces_file).string(), name, result.decision.traces);
        ctx.outputs.push_back(traces_file);

        MembershipDecision md;
        md.is_member = result.decision.is_member;
        md.score = result.decision.score;
        md.tie_broken = result.decision.tie_broken;
        std::vector<int> labels;
        for (bool t : ctx.truth) labels.push_back(t ? 1 : 0);
        const std::string desc_file = "descriptors-" + name + ".csv";
        export_descriptors((ctx.run_dir / desc_file).string(),
                           result.decision.descriptors,
                           descriptor_columns(cfg.selection.features, cfg.selection.aggs),
                           md, &labels);
        ctx.outputs.push_back(desc_file);
    });

    stage("eval", [&] {
        const double gap = attack_set_gap(cfg, ctx);
        eval_one(cfg, ctx, sum, cfg.variant.name() + "-blackbox",
                 result.decision.is_member, result.decision.score, gap);
    });

    finish_run(cfg, ctx, sum);
    return sum;
}

std::string sanitize_label(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') {
            out.push_back(c);
        } else {
            out.push_back('_');
        }
    }
    return out;
}

struct SweepPoint {
    std::string label;
    ExperimentConfig cfg;
};

std::vector<SweepPoint> expand_sweep(const ExperimentConfig& base,
                                     const SweepSpec& spec) {
    std::vector<SweepPoint> points;
    if (spec.axis.empty()) {
        require(spec.values.empty(), "sweep values given without an axis");
        SweepPoint p{"default", base};
        p.cfg.out_dir = base.out_dir + "/default";
        points.push_back(std::move(p));
        return points;
    }
    const std::vector<std::string> axes = sweep_axes();
    require(std::find(axes.begin(), axes.end(), spec.axis) != axes.end(),
            "unknown sweep axis: " + spec.axis);
    require(!spec.values.empty(), "sweep axis given without values");

    // the dp-epsilon axis needs the step count of the shared target run to
    // translate a privacy budget into a noise multiplier
    int dp_steps = 0;
    std::size_t n_examples = 0;
    if (spec.axis == "dp-epsilon") {
        const Corpus corpus = generate_corpus(base.corpus, base.seed);
        for (const Document& d : corpus.train) n_examples += d.qa.size();
        const auto batch = static_cast<std::size_t>(base.train.batch_size);
        dp_steps = base.train.epochs *
                   static_cast<int>((n_examples + batch - 1) / batch);
    }

    for (const std::string& value : spec.values) {
        SweepPoint p{spec.axis + "-" + sanitize_label(value), base};
        ExperimentConfig& cfg = p.cfg;
        if (spec.axis == "alpha") {
            cfg.hp.lr = parse_double(value);
        } else if (spec.axis == "tau") {
            cfg.hp.early_stop_tau = value == "inf" ? INFINITY : parse_double(value);
        } else if (spec.axis == "layer") {
            require(cfg.variant.kind != AttackVariant::Kind::kIG,
                    "the input-gradient variant has no layer to sweep");
            cfg.variant.layer = value;
        } else if (spec.axis == "min-k") {
            cfg.min_k_fraction = parse_double(value);
        } else if (spec.axis == "features") {
            cfg.selection = parse_feature_selection(value, base.selection.aggs);
        } else if (spec.axis == "dp-epsilon") {
            if (value == "inf") {
                cfg.dp_enabled = false;
                cfg.dp.noise_multiplier = 0.0;
            } else {
                const double eps = parse_double(value);
                cfg.dp_enabled = true;
                DPConfig d = base.dp;
                d.sampling_rate = std::min(
                    1.0, static_cast<double>(base.train.batch_size) /
                             static_cast<double>(n_examples));
                d.noise_multiplier = solve_noise_for_epsilon(d, dp_steps, eps);
                cfg.dp = d;
            }
        }
        cfg.out_dir = base.out_dir + "/" + p.label;
        points.push_back(std::move(p));
    }
    return points;
}

} // namespace

// The reference experiment: a 200-document corpus with a 50 member + 50
// non-member attack set, trained until the member/non-member utility gap is
// large, probed with two questions per document (every generated document has
// at least two, so the black-box query count is exactly |attack set| * 2).
ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.corpus.m_max = 5;
    cfg.corpus.single_question_fraction = 0.0;
    cfg.corpus.question_geom_p = 0.5;
    cfg.train.epochs = 60;
    cfg.train.batch_size = 8;
    cfg.train.lr = 2e-3;
    cfg.hp.lr = 2e-3;
    cfg.hp.max_steps = 60;
    cfg.hp.max_questions = 2;
    cfg.proxy.pretrain.epochs = 30;
    cfg.proxy.pretrain.batch_size = 8;
    cfg.proxy.pretrain.lr = 3e-3;
    cfg.proxy.distill.lr = 3e-3;
    cfg.proxy.distill.batch_size = 8;
    cfg.proxy.distill_epoch_cap = 150;
    return cfg;
}

std::string config_to_text(const ExperimentConfig& cfg) {
    return config_to_json(cfg).dump(2) + "\n";
}

ExperimentConfig config_from_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ContractError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return config_from_text(buf.str());
}

void save_config_file(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream out(path);
    require(out.good(), "cannot write config: " + path);
    out << config_to_text(cfg);
    require(out.good(), "config write failed: " + path);
}

ExperimentConfig apply_overrides(const ExperimentConfig& cfg,
                                 const std::vector<std::string>& assignments) {
    json j = config_to_json(cfg);
    for (const std::string& a : assignments) {
        const std::size_t eq = a.find('=');
        require(eq != std::string::npos && eq > 0, "override needs key=value: " + a);
        const std::string path = a.substr(0, eq);
        const std::string value = a.substr(eq + 1);

        json* node = &j;
        std::size_t start = 0;
        while (true) {
            const std::size_t dot = path.find('.', start);
            const std::string key = path.substr(start, dot - start);
            require(!key.empty(), "bad override path: " + path);
            if (dot == std::string::npos) {
                json parsed;
                try {
                    parsed = json::parse(value);
                } catch (const json::parse_error&) {
                    parsed = value; // bare strings stay strings
                }
                (*node)[key] = parsed;
                break;
            }
            require(node->is_object(), "bad override path: " + path);
            node = &(*node)[key];
            start = dot + 1;
        }
    }
    return config_from_json(j); // re-validates, catches typo'd keys
}

std::string content_hash_bytes(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string content_hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot hash missing file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return content_hash_bytes(buf.str());
}

std::string config_hash(const ExperimentConfig& cfg) {
    json j = config_to_json(cfg);
    // plumbing fields never influence an emitted number, so runs that differ
    // only in them share an identity
    j.erase("out_dir");
    j.erase("jobs");
    j.erase("cache_checkpoints");
    return content_hash_bytes(j.dump());
}

AttackSelection parse_feature_selection(const std::string& text,
                                        const AggregationSet& default_aggs) {
    require(!text.empty(), "empty feature selection");
    AttackSelection sel;
    sel.features.clear();
    sel.aggs.clear();

    std::vector<std::pair<std::string, std::string>> pairs; // (agg, feature)
    bool plain = false;
    for (const std::string& token : split_csv(text)) {
        require(!token.empty(), "empty entry in feature selection: " + text);
        const std::size_t colon = token.find(':');
        if (colon == std::string::npos) {
            plain = true;
            pairs.emplace_back("", token);
        } else {
            pairs.emplace_back(token.substr(0, colon), token.substr(colon + 1));
        }
    }
    for (const auto& [agg, feat] : pairs) {
        require(plain == agg.empty(),
                "feature selection mixes plain and agg:feature forms: " + text);
    }

    auto add_unique = [](auto& vec, const auto& v) {
        if (std::find(vec.begin(), vec.end(), v) == vec.end()) vec.push_back(v);
    };
    for (const auto& [agg, feat] : pairs) {
        add_unique(sel.features, feature_from_name(feat));
        if (!plain) add_unique(sel.aggs, agg_from_name(agg));
    }
    if (plain) {
        sel.aggs = default_aggs;
        require(sel.features.size() == pairs.size(),
                "duplicate feature in selection: " + text);
        return sel;
    }
    // descriptors are built feature x aggregator, so explicit cells must form
    // a full grid
    require(pairs.size() == sel.features.size() * sel.aggs.size(),
            "feature selection must form a full aggregator x feature grid: " + text);
    std::set<std::pair<std::string, std::string>> unique(pairs.begin(), pairs.end());
    require(unique.size() == pairs.size(), "duplicate entry in selection: " + text);
    return sel;
}

RunSummary run_whitebox(const ExperimentConfig& cfg) {
    return run_whitebox_at(cfg, fs::path(cfg.out_dir) / "cache");
}

RunSummary run_blackbox(const ExperimentConfig& cfg) {
    return run_blackbox_at(cfg, fs::path(cfg.out_dir) / "cache");
}

std::vector<std::string> sweep_axes() {
    return {"alpha", "tau", "layer", "min-k", "features", "dp-epsilon"};
}

SweepResult run_sweep(const ExperimentConfig& base, const SweepSpec& spec) {
    const std::vector<SweepPoint> points =
        stage("config", [&] { return expand_sweep(base, spec); });

    SweepResult out;
    stage("io", [&] { fs::create_directories(base.out_dir); });
    const fs::path cache_dir = fs::path(base.out_dir) / "cache";
    out.csv_path = (fs::path(base.out_dir) / "sweep.csv").string();

    std::ofstream csv(out.csv_path);
    require(csv.good(), "cannot write sweep table: " + out.csv_path);
    csv << "run," << report_csv_header() << "\n";
    for (const SweepPoint& p : points) {
        const RunSummary sum = run_whitebox_at(p.cfg, cache_dir);
        for (const EvalReport& r : sum.reports) {
            csv << p.label << ',' << report_csv_row(r) << "\n";
        }
        out.runs.push_back(sum);
    }
    require(csv.good(), "sweep table write failed: " + out.csv_path);
    return out;
}

std::string render_report_table(const std::string& run_dir) {
    fs::path csv_path = fs::path(run_dir) / "sweep.csv";
    if (!fs::exists(csv_path)) csv_path = fs::path(run_dir) / "reports.csv";
    if (!fs::exists(csv_path)) {
        throw StageError("report", "no sweep.csv or reports.csv under " + run_dir);
    }

    std::ifstream in(csv_path);
    require(in.good(), "cannot open " + csv_path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(split_csv(line));
    }
    require(!rows.empty(), "empty report table: " + csv_path.string());

    std::vector<std::size_t> width;
    for (const auto& row : rows) {
        if (width.size() < row.size()) width.resize(row.size(), 0);
        for (std::size_t i = 0; i < row.size(); ++i)
            width[i] = std::max(width[i], row[i].size());
    }
    std::string text;
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            text += row[i];
            if (i + 1 < row.size())
                text += std::string(width[i] - row[i].size() + 2, ' ');
        }
        text += '\n';
    }
    return text;
}

} // namespace docmi

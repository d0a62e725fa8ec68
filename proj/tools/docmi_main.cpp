// docmi: membership-inference laboratory for a toy document-QA model.
//
// Subcommands: gen-corpus, train-target, attack-whitebox, attack-blackbox,
// sweep, report. Every experiment flag lives in the JSON config; --set
// applies dotted-path overrides on top, and the dedicated flags (--seed,
// --out-dir, ...) are applied last.
//
// Exit codes: 0 success; 2 config, 3 corpus, 4 train, 5 attack, 6 eval,
// 7 io/other. Failures print "[stage] message" to stderr.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "docmi/pipeline.hpp"

namespace fs = std::filesystem;
using namespace docmi;

namespace {

int exit_code_for(const std::string& stage) {
    if (stage == "config") return 2;
    if (stage == "corpus") return 3;
    if (stage == "train") return 4;
    if (stage == "attack" || stage == "blackbox") return 5;
    if (stage == "eval") return 6;
    return 7;
}

// Flags shared by every subcommand that consumes an ExperimentConfig.
struct ConfigArgs {
    std::string config_file;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    std::string out_dir;
    int jobs = 0;
    std::string features;

    CLI::Option* seed_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* jobs_opt = nullptr;
    CLI::Option* features_opt = nullptr;

    void attach(CLI::App& cmd, bool with_features = true) {
        cmd.add_option("--config", config_file,
                       "JSON experiment config (defaults used when omitted)")
            ->check(CLI::ExistingFile);
        cmd.add_option("--set", overrides,
                       "dotted-path override, e.g. --set attack.lr=0.01 "
                       "(repeatable, JSON values with bare-string fallback)")
            ->type_name("KEY=VALUE");
        seed_opt = cmd.add_option("--seed", seed, "master seed (default 1)");
        out_opt = cmd.add_option("--out-dir", out_dir,
                                 "run directory (default runs/default)");
        jobs_opt = cmd.add_option("--jobs", jobs,
                                  "attack worker threads (default 1; results "
                                  "are identical at any count)");
        if (with_features) {
            features_opt = cmd.add_option(
                "--features", features,
                "trace features: \"delta,steps\" under the configured "
                "aggregators, or explicit \"avg:delta,med:steps\" cells "
                "forming a full grid");
        }
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg =
            config_file.empty() ? default_config() : load_config_file(config_file);
        if (!overrides.empty()) cfg = apply_overrides(cfg, overrides);
        if (seed_opt && seed_opt->count() > 0) cfg.seed = seed;
        if (out_opt && out_opt->count() > 0) cfg.out_dir = out_dir;
        if (jobs_opt && jobs_opt->count() > 0) cfg.jobs = jobs;
        if (features_opt && features_opt->count() > 0)
            cfg.selection = parse_feature_selection(features, cfg.selection.aggs);
        return cfg;
    }
};

void print_reports(const RunSummary& sum) {
    std::printf("%s", render_report_table(sum.out_dir).c_str());
    std::printf("\nwrote %s/manifest.json (%zu artifacts, %.1fs",
                sum.out_dir.c_str(), sum.artifacts.size(), sum.wall_seconds);
    if (sum.used_cached_target) std::printf(", cached target");
    if (sum.oracle_queries >= 0)
        std::printf(", %lld oracle queries",
                    static_cast<long long>(sum.oracle_queries));
    if (std::isfinite(sum.dp_epsilon))
        std::printf(", dp epsilon %.3f", sum.dp_epsilon);
    std::printf(")\n");
}

int cmd_gen_corpus(const ConfigArgs& args, const std::string& out_file) {
    const ExperimentConfig cfg = args.resolve();
    fs::path out = out_file.empty() ? fs::path(cfg.out_dir) / "corpus.txt"
                                    : fs::path(out_file);
    const Corpus corpus = [&] {
        try {
            return generate_corpus(cfg.corpus, cfg.seed);
        } catch (const std::exception& e) {
            throw StageError("corpus", e.what());
        }
    }();
    try {
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        save_corpus(corpus, out.string());
    } catch (const std::exception& e) {
        throw StageError("io", e.what());
    }
    const Vocab vocab = build_vocab(cfg.corpus);
    std::printf("wrote %s (hash %s)\n", out.string().c_str(),
                content_hash_file(out.string()).c_str());
    std::printf("train %zu docs, attack set %zu members + %zu non-members, "
                "pretrain pool %zu, vocab %d tokens\n",
                corpus.train.size(), corpus.member_ids.size(),
                corpus.nonmembers.size(), corpus.pretrain.size(), vocab.size());
    return 0;
}

int cmd_train_target(const ConfigArgs& args, const std::string& corpus_file,
                     const std::string& out_file) {
    const ExperimentConfig cfg = args.resolve();
    fs::path out = out_file.empty() ? fs::path(cfg.out_dir) / "target.ckpt"
                                    : fs::path(out_file);

    Corpus corpus;
    std::string corpus_hash;
    try {
        if (corpus_file.empty()) {
            corpus = generate_corpus(cfg.corpus, cfg.seed);
            corpus_hash = content_hash_bytes(config_hash(cfg) + "-in-memory");
        } else {
            corpus = load_corpus(corpus_file);
            corpus_hash = content_hash_file(corpus_file);
        }
    } catch (const std::exception& e) {
        throw StageError("corpus", e.what());
    }

    const Vocab vocab = build_vocab(corpus.config);
    int steps = 0;
    double epsilon = INFINITY;
    double final_loss = 0.0;
    Rng init_rng(cfg.seed, "target-init");
    Model model = Model::init(make_model_config(vocab), init_rng);
    try {
        const std::vector<TrainExample> data = make_examples(corpus.train, vocab);
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seed;
        if (cfg.dp_enabled) {
            DPConfig dp = cfg.dp;
            if (dp.sampling_rate == 0.0) {
                dp.sampling_rate =
                    std::min(1.0, static_cast<double>(tc.batch_size) /
                                      static_cast<double>(data.size()));
            }
            const DPTrainResult r = dp_train_model(model, data, tc, dp);
            steps = r.steps;
            epsilon = r.epsilon;
            if (!r.epoch_loss.empty()) final_loss = r.epoch_loss.back();
        } else {
            const TrainResult r = train_model(model, data, tc);
            const auto batch = static_cast<std::size_t>(tc.batch_size);
            steps = tc.epochs *
                    static_cast<int>((data.size() + batch - 1) / batch);
            if (!r.epoch_loss.empty()) final_loss = r.epoch_loss.back();
        }
    } catch (const std::exception& e) {
        throw StageError("train", e.what());
    }
    try {
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        save_model(model, CheckpointMeta{cfg.seed, steps, corpus_hash}, out.string());
    } catch (const std::exception& e) {
        throw StageError("io", e.what());
    }
    std::printf("wrote %s (%d steps, final epoch loss %.4f", out.string().c_str(),
                steps, final_loss);
    if (cfg.dp_enabled) std::printf(", dp epsilon %.3f", epsilon);
    std::printf(")\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"docmi: document membership-inference laboratory"};
    app.require_subcommand(1);

    ConfigArgs gen_args;
    std::string gen_out;
    CLI::App* gen = app.add_subcommand(
        "gen-corpus", "generate a synthetic key-value document corpus");
    gen_args.attach(*gen, /*with_features=*/false);
    gen->add_option("--out", gen_out,
                    "corpus file (default <out-dir>/corpus.txt)");

    ConfigArgs train_args;
    std::string train_corpus;
    std::string train_out;
    CLI::App* train = app.add_subcommand(
        "train-target", "train the target model and write a checkpoint");
    train_args.attach(*train, /*with_features=*/false);
    train->add_option("--corpus", train_corpus,
                      "corpus file (default: regenerate from the config)")
        ->check(CLI::ExistingFile);
    train->add_option("--out", train_out,
                      "checkpoint file (default <out-dir>/target.ckpt)");

    ConfigArgs wb_args;
    bool wb_rephrase = false;
    CLI::App* wb = app.add_subcommand(
        "attack-whitebox",
        "full pipeline: corpus, target, probe attack + baselines, reports");
    wb_args.attach(*wb);
    wb->add_flag("--rephrase", wb_rephrase,
                 "attack with template-variant question phrasings");

    ConfigArgs bb_args;
    std::int64_t bb_budget = 0;
    CLI::App* bb = app.add_subcommand(
        "attack-blackbox",
        "full pipeline with the target behind a query oracle: query dataset, "
        "proxy distillation, probe attack on the proxy");
    bb_args.attach(*bb);
    CLI::Option* bb_budget_opt = bb->add_option(
        "--query-budget", bb_budget, "oracle call cap (default -1, unlimited)");

    ConfigArgs sweep_args;
    std::string sweep_axis;
    std::vector<std::string> sweep_values;
    CLI::App* sweep = app.add_subcommand(
        "sweep", "one white-box run per value of a single axis");
    sweep_args.attach(*sweep);
    sweep->add_option("--axis", sweep_axis,
                      "alpha | tau | layer | min-k | features | dp-epsilon "
                      "(omit for a single default run)");
    sweep->add_option("--values", sweep_values,
                      "grid values, e.g. --values 0.001 0.01 0.1 "
                      "(\"inf\" allowed for tau and dp-epsilon)");

    std::string report_dir;
    CLI::App* report = app.add_subcommand(
        "report", "print a run's reports.csv (or sweep.csv) as a table");
    report->add_option("dir", report_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        try {
            if (gen->parsed()) return cmd_gen_corpus(gen_args, gen_out);
            if (train->parsed()) return cmd_train_target(train_args, train_corpus, train_out);
            if (wb->parsed()) {
                ExperimentConfig cfg = wb_args.resolve();
                if (wb_rephrase) cfg.rephrase_questions = true;
                print_reports(run_whitebox(cfg));
                return 0;
            }
            if (bb->parsed()) {
                ExperimentConfig cfg = bb_args.resolve();
                if (bb_budget_opt->count() > 0) cfg.query_budget = bb_budget;
                print_reports(run_blackbox(cfg));
                return 0;
            }
            if (sweep->parsed()) {
                const ExperimentConfig cfg = sweep_args.resolve();
                const SweepResult result = run_sweep(cfg, {sweep_axis, sweep_values});
                std::printf("%s", render_report_table(cfg.out_dir).c_str());
                std::printf("\nwrote %s (%zu runs)\n", result.csv_path.c_str(),
                            result.runs.size());
                return 0;
            }
            if (report->parsed()) {
                std::printf("%s", render_report_table(report_dir).c_str());
                return 0;
            }
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            // config loading/overrides run before any pipeline stage tags apply
            throw StageError("config", e.what());
        }
    } catch (const StageError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return exit_code_for(e.stage());
    }
    return 7;
}

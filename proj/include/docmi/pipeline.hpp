#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "docmi/blackbox.hpp"
#include "docmi/dp_defense.hpp"
#include "docmi/eval.hpp"
#include "docmi/whitebox.hpp"

namespace docmi {

// A pipeline failure tagged with the stage that raised it, so callers can
// print "[stage] message" and pick a stage-specific exit code.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& msg)
        : std::runtime_error("[" + stage + "] " + msg), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

// Everything one experiment needs, with working defaults for every field.
// The master seed drives corpus generation, target training, proxy training
// and the attack; per-stage TrainConfig seeds are derived from it and never
// read from the config file.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/default";
    int jobs = 1;
    bool cache_checkpoints = true;

    CorpusConfig corpus;
    TrainConfig train;   // target training; its seed field is overridden
    bool dp_enabled = false;
    DPConfig dp;

    AttackVariant variant;
    AttackHyperparams hp;
    AttackSelection selection;
    std::vector<std::string> baselines = {"score-ta",    "loss-ta", "score-ua",
                                          "gradient-ua", "scoreloss-ua",
                                          "min-k",       "min-k-pp"};
    double min_k_fraction = 0.9;

    ProxyConfig proxy;
    std::int64_t query_budget = -1; // black-box oracle cap, -1 = unlimited

    std::vector<double> fpr_targets = {0.01, 0.03};
    bool rephrase_questions = false; // attack with template-variant questions
    std::uint64_t rephrase_seed = 0;
};

ExperimentConfig default_config();

// JSON round-trip. Serialization is canonical (sorted keys), parsing rejects
// unknown keys so typos in --set fail loudly.
std::string config_to_text(const ExperimentConfig& cfg);
ExperimentConfig config_from_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
void save_config_file(const std::string& path, const ExperimentConfig& cfg);

// "dotted.path=value" overrides applied on top of the config's JSON form;
// values parse as JSON scalars/arrays, with a bare-string fallback.
ExperimentConfig apply_overrides(const ExperimentConfig& cfg,
                                 const std::vector<std::string>& assignments);

// FNV-1a over the canonical serialization: stable under key reordering of the
// source file because parsing normalizes first. Plumbing fields that cannot
// affect any reported number (out_dir, jobs, cache_checkpoints) are excluded,
// so the same experiment run into two directories shares one hash.
std::string config_hash(const ExperimentConfig& cfg);
std::string content_hash_bytes(const std::string& bytes);
std::string content_hash_file(const std::string& path);

// "delta,steps" selects features under every configured aggregator;
// "avg:delta,med:steps" pins (aggregator, feature) cells, which must form a
// full grid because descriptors are built feature x aggregator.
AttackSelection parse_feature_selection(const std::string& text,
                                        const AggregationSet& default_aggs);

struct RunArtifact {
    std::string path; // relative to the run directory
    std::string hash;
};

struct RunSummary {
    std::string out_dir;
    std::string config_hash;
    std::string corpus_hash;
    std::vector<EvalReport> reports;
    std::vector<RunArtifact> artifacts;
    double wall_seconds = 0.0;
    double dp_epsilon = 0.0;        // infinity sentinel when dp is off
    std::int64_t oracle_queries = -1; // black-box runs only
    bool used_cached_target = false;
};

// generate -> train target -> probe attack + baselines -> evaluate. Emits
// config.json, corpus.txt, target checkpoint, per-attack report/descriptor/
// trace files, reports.csv and manifest.json under cfg.out_dir.
RunSummary run_whitebox(const ExperimentConfig& cfg);

// Same pipeline but the attack only sees the target through a query oracle:
// query dataset -> proxy pretrain + distill -> white-box attack on the proxy.
RunSummary run_blackbox(const ExperimentConfig& cfg);

struct SweepSpec {
    std::string axis; // "", alpha, tau, layer, min-k, features, dp-epsilon
    std::vector<std::string> values;
};

std::vector<std::string> sweep_axes();

struct SweepResult {
    std::string csv_path;
    std::vector<RunSummary> runs;
};

// One white-box run per grid value under <out_dir>/<axis>-<value>/, all
// sharing one checkpoint cache; rows collect into <out_dir>/sweep.csv. An
// empty axis runs the base config once.
SweepResult run_sweep(const ExperimentConfig& base, const SweepSpec& spec);

// Renders reports.csv (or sweep.csv) from a run directory as an aligned
// table; returns the text.
std::string render_report_table(const std::string& run_dir);

} // namespace docmi

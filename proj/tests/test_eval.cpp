#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "docmi/common.hpp"
#include "docmi/eval.hpp"
#include "docmi/rng.hpp"

using namespace docmi;

namespace {

// independent confusion-matrix reduction for the oracle comparison
struct OracleCounts {
    int tp = 0, fp = 0, tn = 0, fn = 0;
};

OracleCounts count_slow(const std::vector<bool>& truth, const std::vector<bool>& pred) {
    OracleCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] && pred[i]) ++c.tp;
        if (!truth[i] && pred[i]) ++c.fp;
        if (!truth[i] && !pred[i]) ++c.tn;
        if (truth[i] && !pred[i]) ++c.fn;
    }
    return c;
}

// exhaustive threshold scan over every score value as a candidate cutoff
double tpr_at_fpr_slow(const std::vector<double>& scores, const std::vector<bool>& truth,
                       double target) {
    int n_pos = 0;
    int n_neg = 0;
    for (bool t : truth) (t ? n_pos : n_neg)++;
    double best = 0.0;
    for (double cut : scores) {
        int tp = 0;
        int fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= cut) (truth[i] ? tp : fp)++;
        }
        const double fpr = static_cast<double>(fp) / n_neg;
        if (fpr <= target + 1e-12) best = std::max(best, static_cast<double>(tp) / n_pos);
    }
    return best;
}

} // namespace

TEST_CASE("classification metrics hand values") {
    const std::vector<bool> truth = {true, true, false, false};
    const auto m = classification_metrics(truth, {true, false, false, false});
    CHECK(m.tpr == doctest::Approx(0.5));
    CHECK(m.tnr == doctest::Approx(1.0));
    CHECK(m.balanced_accuracy == doctest::Approx(0.75));
    CHECK(m.precision == doctest::Approx(1.0));
    CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
    CHECK(!m.f1_zero_division);

    const auto perfect = classification_metrics(truth, {true, true, false, false});
    CHECK(perfect.balanced_accuracy == doctest::Approx(1.0));
    CHECK(perfect.f1 == doctest::Approx(1.0));

    const auto all_member = classification_metrics(truth, {true, true, true, true});
    CHECK(all_member.balanced_accuracy == doctest::Approx(0.5));

    // nothing predicted member: precision undefined, F1 collapses to 0
    const auto none = classification_metrics(truth, {false, false, false, false});
    CHECK(none.f1 == 0.0);
    CHECK(none.f1_zero_division);

    CHECK_THROWS_AS(classification_metrics({true, true}, {true, false}), ContractError);
    CHECK_THROWS_AS(classification_metrics({true}, {true, false}), ContractError);
    CHECK_THROWS_AS(classification_metrics({}, {}), ContractError);
}

TEST_CASE("classification metrics match a brute-force oracle") {
    Rng rng(31, "eval-oracle");
    int done = 0;
    for (int inst = 0; inst < 500; ++inst) {
        const int n = 2 + static_cast<int>(rng.below(19));
        std::vector<bool> truth;
        std::vector<bool> pred;
        for (int i = 0; i < n; ++i) {
            truth.push_back(rng.below(2) == 1);
            pred.push_back(rng.below(2) == 1);
        }
        const OracleCounts c = count_slow(truth, pred);
        if (c.tp + c.fn == 0 || c.fp + c.tn == 0) continue; // single-class truth
        const auto m = classification_metrics(truth, pred);
        CHECK(m.tp == c.tp);
        CHECK(m.fp == c.fp);
        CHECK(m.tn == c.tn);
        CHECK(m.fn == c.fn);
        const double tpr = static_cast<double>(c.tp) / (c.tp + c.fn);
        const double tnr = static_cast<double>(c.tn) / (c.tn + c.fp);
        CHECK(m.balanced_accuracy == doctest::Approx(0.5 * (tpr + tnr)));
        if (c.tp + c.fp > 0 && c.tp > 0) {
            const double p = static_cast<double>(c.tp) / (c.tp + c.fp);
            CHECK(m.f1 == doctest::Approx(2.0 * p * tpr / (p + tpr)));
        }
        CHECK(m.balanced_accuracy >= 0.0);
        CHECK(m.balanced_accuracy <= 1.0);
        CHECK(m.f1 >= 0.0);
        CHECK(m.f1 <= 1.0);
        ++done;
    }
    CHECK(done >= 400);
}

TEST_CASE("roc curve is a monotone step function from origin to the far corner") {
    Rng rng(32, "roc");
    std::vector<double> scores;
    std::vector<bool> truth;
    for (int i = 0; i < 50; ++i) {
        truth.push_back(i % 2 == 0);
        scores.push_back(rng.uniform() + (truth.back() ? 0.2 : 0.0));
    }
    // inject score ties across classes to exercise atomic tie handling
    scores[4] = scores[7];
    const auto roc = roc_points(scores, truth);
    CHECK(roc.front().fpr == 0.0);
    CHECK(roc.front().tpr == 0.0);
    CHECK(roc.back().fpr == doctest::Approx(1.0));
    CHECK(roc.back().tpr == doctest::Approx(1.0));
    for (std::size_t i = 1; i < roc.size(); ++i) {
        CHECK(roc[i].fpr >= roc[i - 1].fpr);
        CHECK(roc[i].tpr >= roc[i - 1].tpr);
        CHECK(roc[i].threshold < roc[i - 1].threshold);
    }
}

TEST_CASE("tpr at fpr hand example and basic properties") {
    const std::vector<double> scores = {0.9, 0.8, 0.7, 0.6, 0.2, 0.1};
    const std::vector<bool> truth = {true, true, true, false, false, false};
    const auto at = tpr_at_fpr(scores, truth, {0.33});
    REQUIRE(at.size() == 1);
    CHECK(at[0].tpr == doctest::Approx(1.0));
    CHECK(at[0].achieved_fpr == 0.0);
    CHECK(at[0].granularity_warning); // 3 non-members cannot resolve 1/0.33

    // perfectly separated scores saturate immediately
    const auto tight = tpr_at_fpr(scores, truth, {0.01});
    CHECK(tight[0].tpr == doctest::Approx(1.0));

    // monotone in the target
    Rng rng(33, "tpr");
    std::vector<double> s2;
    std::vector<bool> t2;
    for (int i = 0; i < 120; ++i) {
        t2.push_back(i % 2 == 0);
        s2.push_back(rng.uniform() + (t2.back() ? 0.15 : 0.0));
    }
    const auto sw = tpr_at_fpr(s2, t2, {0.01, 0.05, 0.2, 0.5, 1.0});
    for (std::size_t i = 1; i < sw.size(); ++i) CHECK(sw[i].tpr >= sw[i - 1].tpr);
    CHECK(sw.back().tpr == doctest::Approx(1.0));
}

TEST_CASE("tpr at fpr matches an exhaustive sweep and is transform-invariant") {
    Rng rng(34, "tpr-oracle");
    for (int inst = 0; inst < 60; ++inst) {
        const int n = 6 + static_cast<int>(rng.below(15));
        std::vector<double> scores;
        std::vector<bool> truth;
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            truth.push_back(rng.below(2) == 1);
            pos += truth.back();
            scores.push_back(rng.uniform());
        }
        if (pos == 0 || pos == n) continue;
        for (double target : {0.1, 0.3, 0.5}) {
            const auto got = tpr_at_fpr(scores, truth, {target});
            CHECK(got[0].tpr == doctest::Approx(tpr_at_fpr_slow(scores, truth, target)));

            // any strictly monotone transform preserves the metric
            std::vector<double> warped;
            for (double s : scores) warped.push_back(std::exp(3.0 * s) + 1.0);
            const auto w = tpr_at_fpr(warped, truth, {target});
            CHECK(w[0].tpr == doctest::Approx(got[0].tpr));
        }
    }
}

TEST_CASE("random scores put tpr at fpr on the diagonal") {
    Rng rng(7, "diag");
    std::vector<double> scores;
    std::vector<bool> truth;
    for (int i = 0; i < 2000; ++i) {
        truth.push_back(i % 2 == 0);
        scores.push_back(rng.uniform());
    }
    for (double f : {0.1, 0.3, 0.5}) {
        const auto at = tpr_at_fpr(scores, truth, {f});
        CHECK(std::fabs(at[0].tpr - f) < 0.05);
    }
}

TEST_CASE("granularity warning tracks the non-member count") {
    std::vector<double> scores;
    std::vector<bool> truth;
    Rng rng(36, "gran");
    for (int i = 0; i < 300; ++i) {
        truth.push_back(i % 3 != 0); // 100 non-members
        scores.push_back(rng.uniform());
    }
    const auto at = tpr_at_fpr(scores, truth, {0.01, 0.003});
    CHECK(!at[0].granularity_warning); // 100 * 0.01 = 1 false positive resolvable
    CHECK(at[1].granularity_warning);
}

TEST_CASE("stratified member accuracy partitions by question count") {
    // 6 members with m = 1,1,2,3,5,5 and 2 non-members
    const std::vector<bool> truth = {true, true, true, true, true, true, false, false};
    const std::vector<bool> pred = {true, false, true, true, false, true, true, false};
    const std::vector<int> counts = {1, 1, 2, 3, 5, 5, 1, 2};

    const auto strata = stratified_member_accuracy(truth, pred, counts);
    REQUIRE(strata.size() == 4);
    CHECK(strata[0].name == "m=1");
    CHECK(strata[0].n_members == 2);
    CHECK(strata[0].member_accuracy == doctest::Approx(0.5));
    CHECK(strata[1].name == "m=2");
    CHECK(strata[1].member_accuracy == doctest::Approx(1.0));
    CHECK(strata[2].name == "m=3");
    CHECK(strata[2].member_accuracy == doctest::Approx(1.0));
    CHECK(strata[3].name == "all");
    CHECK(strata[3].n_members == 6);

    // "all" equals overall member recall
    const auto m = classification_metrics(truth, pred);
    CHECK(strata[3].member_accuracy == doctest::Approx(m.tpr));

    // the explicit strata plus the m>3 remainder account for every member
    int rest = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) rest += truth[i] && counts[i] > 3;
    CHECK(strata[0].n_members + strata[1].n_members + strata[2].n_members + rest ==
          strata[3].n_members);

    // an empty stratum disappears instead of reporting a fake zero
    const auto sparse = stratified_member_accuracy({true, true, false},
                                                   {true, true, false}, {1, 3, 1});
    REQUIRE(sparse.size() == 3);
    CHECK(sparse[0].name == "m=1");
    CHECK(sparse[1].name == "m=3");
    CHECK(sparse[2].name == "all");

    CHECK_THROWS_AS(stratified_member_accuracy({false}, {false}, {1}), ContractError);
}

TEST_CASE("report bundle serializes and the csv row stays flat") {
    std::vector<double> scores;
    std::vector<bool> truth;
    std::vector<bool> pred;
    std::vector<int> counts;
    Rng rng(37, "report");
    for (int i = 0; i < 40; ++i) {
        truth.push_back(i % 2 == 0);
        scores.push_back(rng.uniform() + (truth.back() ? 0.4 : 0.0));
        pred.push_back(scores.back() > 0.7);
        counts.push_back(1 + static_cast<int>(rng.below(4)));
    }
    const EvalReport r = evaluate_attack("fl", 7, "abc123", truth, pred, scores,
                                         counts, 0.31);
    CHECK(r.tpr_targets.size() == 2);
    CHECK(r.tpr_targets[0].target == doctest::Approx(0.01));
    CHECK(r.traintest_gap == doctest::Approx(0.31));

    save_report("report.txt", r);
    std::ifstream in("report.txt");
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("attack: fl") != std::string::npos);
    CHECK(text.find("balanced_accuracy:") != std::string::npos);
    CHECK(text.find("stratum all:") != std::string::npos);
    CHECK(text.find("roc:") != std::string::npos);
    std::remove("report.txt");

    std::remove("rows.csv");
    append_report_csv("rows.csv", r);
    append_report_csv("rows.csv", r);
    std::ifstream csv("rows.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == report_csv_header());
    int rows = 0;
    while (std::getline(csv, line)) rows += !line.empty();
    CHECK(rows == 2);
    CHECK(report_csv_row(r).find("fl,7,abc123,") == 0);
    std::remove("rows.csv");
}

TEST_CASE("train-test gap tracks overfitting") {
    CorpusConfig ccfg;
    ccfg.n_train = 5;
    ccfg.n_member = 5;
    ccfg.n_nonmember = 5;
    ccfg.n_pretrain = 2;
    ccfg.max_fields = 6;
    const Corpus corpus = generate_corpus(ccfg, 41);
    const Vocab vocab = build_vocab(ccfg);
    Rng rng(41, "model-init");
    Model model = Model::init(make_model_config(vocab), rng);

    std::vector<const Document*> members;
    std::vector<const Document*> nonmembers;
    for (const Document& d : corpus.train) members.push_back(&d);
    for (const Document& d : corpus.nonmembers) nonmembers.push_back(&d);

    const double before =
        traintest_gap(model, members, nonmembers, vocab, UtilityKind::kNls, 3);
    CHECK(std::fabs(before) < 0.2); // untrained model shows no real separation

    TrainConfig tc;
    tc.epochs = 160;
    tc.batch_size = 4;
    tc.lr = 3e-3;
    tc.seed = 41;
    train_model(model, make_examples(corpus.train, vocab), tc);
    const double after =
        traintest_gap(model, members, nonmembers, vocab, UtilityKind::kNls, 3);
    CHECK(after > before);
    CHECK(after > 0.25);

    CHECK_THROWS_AS(traintest_gap(model, {}, nonmembers, vocab, UtilityKind::kNls, 3),
                    ContractError);
}

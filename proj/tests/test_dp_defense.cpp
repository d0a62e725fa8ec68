#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "docmi/answer_signals.hpp"
#include "docmi/common.hpp"
#include "docmi/dp_defense.hpp"
#include "docmi/tape.hpp"

using namespace docmi;

namespace {

struct Bench {
    CorpusConfig ccfg;
    Corpus corpus;
    Vocab vocab;
    Model model;

    static Bench make(std::uint64_t seed) {
        Bench b;
        b.ccfg.n_train = 5;
        b.ccfg.n_member = 5;
        b.ccfg.n_nonmember = 5;
        b.ccfg.n_pretrain = 2;
        b.ccfg.max_fields = 6;
        b.corpus = generate_corpus(b.ccfg, seed);
        b.vocab = build_vocab(b.ccfg);
        Rng rng(seed, "model-init");
        b.model = Model::init(make_model_config(b.vocab), rng);
        return b;
    }
};

bool params_equal(const ParameterSet& a, const ParameterSet& b) {
    if (!a.same_layout(b)) return false;
    for (const std::string& name : a.names()) {
        if (a.get(name).data != b.get(name).data) return false;
    }
    return true;
}

double mean_train_utility(const Bench& b, const Model& m, int max_q) {
    double total = 0.0;
    int n = 0;
    for (const Document& d : b.corpus.train) {
        const std::size_t q = std::min<std::size_t>(d.qa.size(), max_q);
        for (std::size_t i = 0; i < q; ++i) {
            const TrainExample ex{encoder_input(d, b.vocab, d.qa[i].question),
                                  d.qa[i].answer};
            total += model_utility(m, UtilityKind::kNls, ex, b.vocab);
            ++n;
        }
    }
    return total / n;
}

DPConfig dp_of(double clip, double sigma, double q = 0.5, double delta = 1e-5) {
    DPConfig dp;
    dp.clip_norm = clip;
    dp.noise_multiplier = sigma;
    dp.sampling_rate = q;
    dp.delta = delta;
    return dp;
}

} // namespace

TEST_CASE("dp config validation") {
    CHECK_THROWS_AS(dp_of(0.0, 1.0).validate(), ContractError);
    CHECK_THROWS_AS(dp_of(1.0, -0.1).validate(), ContractError);
    CHECK_THROWS_AS(dp_of(1.0, 1.0, 1.5).validate(), ContractError);
    CHECK_THROWS_AS(dp_of(1.0, 1.0, 0.5, 0.0).validate(), ContractError);
    dp_of(1.0, 0.0).validate(); // noiseless clipped training is a valid config
}

TEST_CASE("noiseless private step equals a hand-built clipped update") {
    Bench b = Bench::make(51);
    std::vector<TrainExample> batch;
    for (int i = 0; i < 3; ++i) {
        const Document& d = b.corpus.train[static_cast<std::size_t>(i)];
        batch.push_back({encoder_input(d, b.vocab, d.qa[0].question), d.qa[0].answer});
    }
    const double clip = 0.05;

    Model private_model = b.model;
    Adam opt_a{AdamConfig{}};
    Rng noise(9, "unused");
    dp_sgd_step(private_model, batch, dp_of(clip, 0.0), opt_a, noise);

    // independent reimplementation of the same update
    Model manual = b.model;
    ParameterSet grad_sum = manual.params().zeros_like();
    for (const TrainExample& ex : batch) {
        Tape tape;
        Tape::Ref loss = manual.build_loss(tape, ex.enc_ids, ex.answer);
        tape.backward(loss);
        ParameterSet g = tape.named_grads();
        CHECK(l2_norm(g) > clip); // untrained grads engage the clip for real
        clip_by_norm(g, clip);
        CHECK(l2_norm(g) <= clip * (1.0 + 1e-12));
        axpy(1.0, g, grad_sum);
    }
    ParameterSet step_grad = manual.params().zeros_like();
    axpy(1.0 / 3.0, grad_sum, step_grad);
    Adam opt_b{AdamConfig{}};
    opt_b.step(manual.params_mut(), step_grad);

    CHECK(params_equal(private_model.params(), manual.params()));
}

TEST_CASE("noise draws are deterministic per stream and actually perturb") {
    Bench b = Bench::make(52);
    const Document& d = b.corpus.train[0];
    const std::vector<TrainExample> batch = {
        {encoder_input(d, b.vocab, d.qa[0].question), d.qa[0].answer}};

    Model m1 = b.model;
    Model m2 = b.model;
    Model m0 = b.model;
    Adam o1{AdamConfig{}};
    Adam o2{AdamConfig{}};
    Adam o0{AdamConfig{}};
    Rng n1(7, "dp-noise");
    Rng n2(7, "dp-noise");
    Rng n0(7, "dp-noise");
    dp_sgd_step(m1, batch, dp_of(1.0, 0.8), o1, n1);
    dp_sgd_step(m2, batch, dp_of(1.0, 0.8), o2, n2);
    dp_sgd_step(m0, batch, dp_of(1.0, 0.0), o0, n0);

    CHECK(params_equal(m1.params(), m2.params()));
    CHECK(!params_equal(m1.params(), m0.params()));
}

TEST_CASE("noiseless wide-clip private training is bit-identical to the plain trainer") {
    Bench b = Bench::make(53);
    const auto examples = make_examples(b.corpus.train, b.vocab);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.lr = 3e-3;
    tc.seed = 53;

    Model plain = b.model;
    const TrainResult pr = train_model(plain, examples, tc);

    Model priv = b.model;
    // a clip bound far above any gradient norm never engages; sampling rate
    // left at zero so the trainer derives it from batch and dataset size
    const DPTrainResult dr = dp_train_model(priv, examples, tc, dp_of(1e9, 0.0, 0.0));

    CHECK(params_equal(plain.params(), priv.params()));
    REQUIRE(pr.epoch_loss.size() == dr.epoch_loss.size());
    for (std::size_t i = 0; i < pr.epoch_loss.size(); ++i) {
        CHECK(dr.epoch_loss[i] == doctest::Approx(pr.epoch_loss[i]).epsilon(1e-12));
    }
    CHECK(std::isinf(dr.epsilon));
    const int batches_per_epoch =
        static_cast<int>((examples.size() + 3) / 4); // one example per qa pair
    CHECK(dr.steps == 3 * batches_per_epoch);
    CHECK(dr.sampling_rate ==
          doctest::Approx(4.0 / static_cast<double>(examples.size())));
}

TEST_CASE("heavy noise collapses training utility") {
    Bench b = Bench::make(54);
    const auto examples = make_examples(b.corpus.train, b.vocab);
    TrainConfig tc;
    tc.epochs = 60;
    tc.batch_size = 4;
    tc.lr = 3e-3;
    tc.seed = 54;

    Model plain = b.model;
    train_model(plain, examples, tc);
    const double clean_u = mean_train_utility(b, plain, 2);

    Model priv = b.model;
    const DPTrainResult dr = dp_train_model(priv, examples, tc, dp_of(1.0, 10.0));
    const double noisy_u = mean_train_utility(b, priv, 2);

    CHECK(clean_u > 0.8);      // the plain trainer memorizes this bench
    CHECK(noisy_u < 0.4);      // sigma = 10 drowns the signal
    CHECK(noisy_u < clean_u);
    CHECK(std::isfinite(dr.epsilon));
}

TEST_CASE("renyi bound reduces to the plain gaussian mechanism at full sampling") {
    for (int alpha : {2, 5, 17, 64}) {
        for (double sigma : {0.5, 2.0, 6.0}) {
            CHECK(rdp_sampled_gaussian(1.0, sigma, alpha) ==
                  doctest::Approx(alpha / (2.0 * sigma * sigma)));
        }
    }
    // subsampling only ever helps
    Rng rng(55, "amp");
    for (int i = 0; i < 50; ++i) {
        const double q = 0.05 + 0.9 * rng.uniform();
        const double sigma = 0.3 + 4.0 * rng.uniform();
        const int alpha = 2 + static_cast<int>(rng.below(60));
        const double sub = rdp_sampled_gaussian(q, sigma, alpha);
        CHECK(sub >= 0.0);
        CHECK(sub <= rdp_sampled_gaussian(1.0, sigma, alpha) + 1e-12);
    }
    // vanishing sampling rate spends almost nothing
    CHECK(rdp_sampled_gaussian(1e-4, 1.0, 2) < 1e-6);
    CHECK(rdp_sampled_gaussian(1e-4, 1.0, 2) > 0.0);
    CHECK_THROWS_AS(rdp_sampled_gaussian(0.0, 1.0, 2), ContractError);
    CHECK_THROWS_AS(rdp_sampled_gaussian(0.5, 0.0, 2), ContractError);
    CHECK_THROWS_AS(rdp_sampled_gaussian(0.5, 1.0, 1), ContractError);
}

TEST_CASE("accountant agrees with the analytic single-release gaussian bound") {
    // one full-batch release at sigma = 6: epsilon = sqrt(2 ln(1.25/delta)) / sigma
    const double delta = 1e-5;
    const double sigma = 6.0;
    const double analytic = std::sqrt(2.0 * std::log(1.25 / delta)) / sigma;
    const double accounted = account_epsilon(dp_of(1.0, sigma, 1.0, delta), 1);
    CHECK(std::fabs(accounted - analytic) / analytic < 0.10);
}

TEST_CASE("accountant edge cases and monotonicity") {
    CHECK(account_epsilon(dp_of(1.0, 2.0, 0.5), 0) == 0.0);
    CHECK(std::isinf(account_epsilon(dp_of(1.0, 0.0, 0.5), 100)));
    CHECK_THROWS_AS(account_epsilon(dp_of(1.0, 1.0, 0.0), 10), ContractError);

    Rng rng(56, "mono");
    for (int i = 0; i < 40; ++i) {
        const double q = 0.05 + 0.7 * rng.uniform();
        const double sigma = 0.4 + 3.0 * rng.uniform();
        const int steps = 1 + static_cast<int>(rng.below(400));
        const double base = account_epsilon(dp_of(1.0, sigma, q), steps);
        CHECK(base > 0.0);
        // more steps, more spend
        CHECK(account_epsilon(dp_of(1.0, sigma, q), 2 * steps) >= base - 1e-12);
        // higher sampling rate, more spend
        CHECK(account_epsilon(dp_of(1.0, sigma, std::min(1.0, q * 1.5)), steps) >=
              base - 1e-12);
        // more noise, less spend
        CHECK(account_epsilon(dp_of(1.0, sigma * 1.5, q), steps) <= base + 1e-12);
    }
}

TEST_CASE("noise calibration hits the epsilon target from above") {
    DPConfig dp = dp_of(1.0, 0.0, 0.25);
    const int steps = 120;
    for (double target : {1.0, 8.0, 32.0}) {
        const double sigma = solve_noise_for_epsilon(dp, steps, target);
        DPConfig at = dp;
        at.noise_multiplier = sigma;
        CHECK(account_epsilon(at, steps) <= target);
        at.noise_multiplier = sigma * 0.99;
        CHECK(account_epsilon(at, steps) > target * 0.99);
    }
    // looser targets need less noise
    CHECK(solve_noise_for_epsilon(dp, steps, 32.0) <
          solve_noise_for_epsilon(dp, steps, 8.0));
}

#include "docmi/dp_defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "docmi/common.hpp"
#include "docmi/tape.hpp"

namespace docmi {

void DPConfig::validate() const {
    require(clip_norm > 0.0, "clip norm must be positive");
    require(noise_multiplier >= 0.0, "noise multiplier must be non-negative");
    require(sampling_rate >= 0.0 && sampling_rate <= 1.0,
            "sampling rate must be in [0, 1]");
    require(delta > 0.0 && delta < 1.0, "delta must be in (0, 1)");
}

double dp_sgd_step(Model& model, const std::vector<TrainExample>& batch,
                   const DPConfig& dp, Adam& opt, Rng& noise_rng) {
    dp.validate();
    require(!batch.empty(), "empty batch");

    ParameterSet noisy_sum = model.params().zeros_like();
    double loss_total = 0.0;
    for (const TrainExample& ex : batch) {
        Tape tape;
        Tape::Ref loss = model.build_loss(tape, ex.enc_ids, ex.answer);
        const double lv = tape.value(loss).scalar_value();
        if (!std::isfinite(lv)) throw NumericError("non-finite loss in private step");
        loss_total += lv;
        tape.backward(loss);
        ParameterSet g = tape.named_grads();
        clip_by_norm(g, dp.clip_norm);
        axpy(1.0, g, noisy_sum);
    }

    if (dp.noise_multiplier > 0.0) {
        const double std_dev = dp.noise_multiplier * dp.clip_norm;
        for (const std::string& name : noisy_sum.names()) {
            for (double& x : noisy_sum.get(name).data) {
                x += std_dev * noise_rng.normal();
            }
        }
    }

    ParameterSet step_grad = model.params().zeros_like();
    axpy(1.0 / static_cast<double>(batch.size()), noisy_sum, step_grad);
    opt.step(model.params_mut(), step_grad);
    return loss_total / static_cast<double>(batch.size());
}

DPTrainResult dp_train_model(Model& model, const std::vector<TrainExample>& data,
                             const TrainConfig& cfg, const DPConfig& dp) {
    require(!data.empty(), "training dataset is empty");
    require(cfg.epochs >= 1 && cfg.batch_size >= 1, "bad training config");
    dp.validate();

    AdamConfig ac;
    ac.lr = cfg.lr;
    Adam opt(ac);
    Rng rng(cfg.seed, "train");
    Rng noise_rng = Rng(cfg.seed, "dp-noise");
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    DPTrainResult res;
    res.sampling_rate =
        dp.sampling_rate > 0.0
            ? dp.sampling_rate
            : std::min(1.0, static_cast<double>(cfg.batch_size) /
                                static_cast<double>(data.size()));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = rng.fork("epoch-" + std::to_string(epoch));
        epoch_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t i = 0;
        while (i < order.size()) {
            const std::size_t batch_end =
                std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size));
            std::vector<TrainExample> batch;
            for (; i < batch_end; ++i) {
                batch.push_back(data[static_cast<std::size_t>(order[i])]);
            }
            epoch_loss +=
                dp_sgd_step(model, batch, dp, opt, noise_rng) *
                static_cast<double>(batch.size());
            ++res.steps;
        }
        res.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    }

    DPConfig accounted = dp;
    accounted.sampling_rate = res.sampling_rate;
    res.epsilon = account_epsilon(accounted, res.steps);
    return res;
}

namespace {

double log_sum_exp(const std::vector<double>& terms) {
    const double m = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double t : terms) s += std::exp(t - m);
    return m + std::log(s);
}

double log_binomial(int n, int k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

} // namespace

double rdp_sampled_gaussian(double q, double sigma, int alpha) {
    require(q > 0.0 && q <= 1.0, "sampling rate must be in (0, 1]");
    require(sigma > 0.0, "noise multiplier must be positive");
    require(alpha >= 2, "Renyi order must be at least 2");

    // full-batch release: the plain Gaussian mechanism's Renyi divergence
    if (q == 1.0) return static_cast<double>(alpha) / (2.0 * sigma * sigma);

    // integer-order bound via the binomial expansion of the mixture moment:
    // E[(1 - q + q * e^{Z})^alpha] with the k-th term carrying e^{k(k-1)/2sigma^2}
    std::vector<double> log_terms;
    for (int k = 0; k <= alpha; ++k) {
        const double lt = log_binomial(alpha, k) +
                          static_cast<double>(alpha - k) * std::log1p(-q) +
                          static_cast<double>(k) * std::log(q) +
                          static_cast<double>(k) * (k - 1) / (2.0 * sigma * sigma);
        log_terms.push_back(lt);
    }
    const double moment = log_sum_exp(log_terms);
    // a Renyi divergence is non-negative; tiny negatives are rounding
    return std::max(0.0, moment / (alpha - 1.0));
}

double account_epsilon(const DPConfig& dp, int steps) {
    dp.validate();
    require(steps >= 0, "negative step count");
    require(dp.sampling_rate > 0.0, "accounting needs an explicit sampling rate");
    if (steps == 0) return 0.0;
    if (dp.noise_multiplier == 0.0) return std::numeric_limits<double>::infinity();

    double best = std::numeric_limits<double>::infinity();
    for (int alpha = 2; alpha <= 64; ++alpha) {
        const double rdp =
            steps * rdp_sampled_gaussian(dp.sampling_rate, dp.noise_multiplier, alpha);
        const double eps = rdp + std::log(1.0 / dp.delta) / (alpha - 1.0);
        best = std::min(best, eps);
    }
    return best;
}

double solve_noise_for_epsilon(DPConfig dp, int steps, double target_epsilon) {
    require(target_epsilon > 0.0, "target epsilon must be positive");
    require(steps >= 1, "need at least one step to calibrate");

    double lo = 1e-3;
    double hi = 1.0;
    dp.noise_multiplier = hi;
    while (account_epsilon(dp, steps) > target_epsilon) {
        hi *= 2.0;
        dp.noise_multiplier = hi;
        require(hi < 1e6, "noise calibration diverged");
    }
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        dp.noise_multiplier = mid;
        if (account_epsilon(dp, steps) <= target_epsilon) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

} // namespace docmi

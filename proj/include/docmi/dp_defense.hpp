#pragma once

#include <vector>

#include "docmi/adam.hpp"
#include "docmi/rng.hpp"
#include "docmi/seqmodel.hpp"

namespace docmi {

struct DPConfig {
    double clip_norm = 1.0;        // per-example gradient bound C
    double noise_multiplier = 0.0; // sigma, in units of C
    double sampling_rate = 0.0;    // q, filled from batch/dataset size when 0
    double delta = 1e-5;
    int step_budget = 0;           // informational; accounting takes real steps

    void validate() const;
};

// One private update: per-example gradients clipped to C, summed, per-coordinate
// Gaussian noise of std sigma*C added to the sum, averaged over the batch,
// then a standard optimizer step. Returns the batch mean loss before the
// update. A zero noise multiplier skips drawing entirely, so that path is
// bit-identical to plain clipped training.
double dp_sgd_step(Model& model, const std::vector<TrainExample>& batch,
                   const DPConfig& dp, Adam& opt, Rng& noise_rng);

struct DPTrainResult {
    std::vector<double> epoch_loss;
    int steps = 0;
    double sampling_rate = 0.0;
    double epsilon = 0.0; // at dp.delta, infinity when sigma is 0
};

// train_model with dp_sgd_step in place of the plain update; same epoch
// shuffling streams, noise drawn from one dedicated stream.
DPTrainResult dp_train_model(Model& model, const std::vector<TrainExample>& data,
                             const TrainConfig& cfg, const DPConfig& dp);

// Total (epsilon, delta) spent after `steps` subsampled-Gaussian releases:
// integer-order Renyi composition over alpha in [2, 64], converted with
// epsilon = min_alpha [ rdp(alpha) + ln(1/delta) / (alpha - 1) ].
// sigma = 0 reports infinity; steps = 0 reports 0.
double account_epsilon(const DPConfig& dp, int steps);

// Single-order subsampled-Gaussian Renyi bound (exposed for the oracle tests).
double rdp_sampled_gaussian(double q, double sigma, int alpha);

// Smallest noise multiplier whose accounted epsilon stays at or below the
// target after `steps` updates, found by bisection.
double solve_noise_for_epsilon(DPConfig dp, int steps, double target_epsilon);

} // namespace docmi

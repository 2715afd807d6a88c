#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stitchformer/dataset.hpp"
#include "stitchformer/envs.hpp"
#include "stitchformer/models.hpp"
#include "stitchformer/objectives.hpp"

namespace stitchformer {

struct EvalReport {
    int episodes = 0;
    double mean_return = 0.0;
    double success_rate = 0.0;
    double normalized_score = 0.0;
    std::vector<double> returns;
    std::uint64_t seed = 0;
    int context_k = 0;
};

std::string eval_report_json(const EvalReport& report);

// Per-environment scoring anchors, measured by running the seeded random
// policy and the scripted expert under a fixed protocol.
struct RefReturns {
    double random_return = 0.0;
    double expert_return = 1.0;
};

RefReturns measure_reference_returns(const std::string& env_name);

// 100 * (raw - random) / (expert - random); the scripted expert maps to 100.
double normalized_score(double raw, const RefReturns& refs);

// Action source for a rollout: the most recent <= k steps (normalized
// observations, taken actions) plus the raw current observation.
using ActionSource =
    std::function<EnvAction(const Window& window, const std::vector<double>& raw_obs)>;

// Seeded evaluation episodes; with threads > 1 episodes run in parallel over
// read-only state and the report is identical to the serial one.
EvalReport rollout_eval_fn(const std::string& env_name, const ActionSource& source,
                           const NormStats& stats, int episodes, std::uint64_t seed, int k,
                           int threads = 1);

// Greedy rollouts of a latent-conditioned policy.
EvalReport rollout_eval(const PolicyModel& policy, const Tensor& z, const std::string& env_name,
                        const NormStats& stats, int episodes, std::uint64_t seed, int threads = 1);

// Trains a policy of the same architecture on the sub-optimal split only,
// conditioned on a constant zero token: the non-stitching control arm.
PolicyModel train_bc_control(const PolicyConfig& config, const TrainingData& data,
                             const TrainOptions& options, int total_steps,
                             const std::function<void(int, double)>& on_step = nullptr);

struct StitchConfig {
    std::string env_name = "four-rooms";
    int demo_count = 5;
    bool observation_only = false;  // LfO when true
    int subopt_episodes = 500;
    double behavior_noise = 0.5;
    int epochs = 20;
    TrainOptions train;
    int eval_episodes = 50;
    int threads = 1;
    int hidden = 64;
    int policy_layers = 3;
    int policy_heads = 2;
    int encoder_layers = 3;
    int encoder_heads = 8;
    int z_dim = 16;
    double dropout = 0.1;
};

struct StitchReport {
    EvalReport conditioned;  // latent-conditioned arm
    EvalReport control;      // zero-token control
    double gap = 0.0;        // conditioned minus control success rate
    int training_steps_conditioned = 0;
    int training_steps_control = 0;
    std::string dataset_hash;
    std::vector<EpochMetrics> metrics;
};

std::string stitch_report_json(const StitchReport& report);

// Full protocol: verify the stitching precondition, train both arms on the
// identical dataset with identical budgets, evaluate both. Refuses to run
// when the sub-optimal split contains a complete start-to-goal episode.
StitchReport stitching_experiment(const StitchConfig& config, const Dataset& dataset);

// Convenience: generate the dataset from the default segment plan first.
StitchReport stitching_experiment(const StitchConfig& config);

// Model configs sized for an environment.
PolicyConfig policy_config_for(const StitchConfig& config, const EnvSpec& spec);
EncoderConfig encoder_config_for(const StitchConfig& config, const EnvSpec& spec);

}  // namespace stitchformer

#include "stitchformer/eval.hpp"

#include <cmath>
#include <thread>

#include <json.hpp>

#include "stitchformer/errors.hpp"
#include "stitchformer/rng.hpp"

namespace stitchformer {

namespace {

using nlohmann::json;

// Reference-measurement protocol constants. Fixed so anchors are stable.
constexpr std::uint64_t kRefBaseSeed = 0xA11CEull;
constexpr int kRefRandomEpisodes = 1000;
constexpr int kRefExpertEpisodes = 50;

struct EpisodeOutcome {
    double episode_return = 0.0;
    bool success = false;
};

EpisodeOutcome run_episode(Env& env, const ActionSource& source, const NormStats& stats,
                           std::uint64_t reset_seed, int k) {
    EpisodeOutcome outcome;
    Window history;
    std::vector<double> obs = env.reset(reset_seed);
    const int action_dim = env.spec().action_dim;
    while (!env.done()) {
        StepData step;
        step.obs = stats.apply(obs);
        step.action.assign(static_cast<std::size_t>(action_dim), 0.0);
        step.action_masked = false;
        step.timestep = env.t();
        history.push_back(std::move(step));

        const int len = static_cast<int>(history.size());
        Window window(history.begin() + std::max(0, len - k), history.end());
        EnvAction action = source(window, obs);
        history.back().action = action.values;

        StepResult result = env.step(action.values);
        outcome.episode_return += result.reward;
        outcome.success = outcome.success || result.reached_goal;
        obs = result.obs;
    }
    return outcome;
}

EvalReport summarize(std::vector<EpisodeOutcome> outcomes, const std::string& env_name,
                     std::uint64_t seed, int k) {
    EvalReport report;
    report.episodes = static_cast<int>(outcomes.size());
    report.seed = seed;
    report.context_k = k;
    int successes = 0;
    for (const EpisodeOutcome& o : outcomes) {
        report.returns.push_back(o.episode_return);
        report.mean_return += o.episode_return;
        successes += o.success ? 1 : 0;
    }
    report.mean_return /= static_cast<double>(outcomes.size());
    report.success_rate = static_cast<double>(successes) / static_cast<double>(outcomes.size());
    const RefReturns refs = measure_reference_returns(env_name);
    report.normalized_score = normalized_score(report.mean_return, refs);
    return report;
}

double plain_mean_return(const std::string& env_name, int episodes, std::uint64_t base,
                         const std::function<PolicyFn(Env&, std::uint64_t)>& make_policy) {
    auto env = make_env(env_name);
    double total = 0.0;
    for (int i = 0; i < episodes; ++i) {
        PolicyFn policy = make_policy(*env, mix64(base + static_cast<std::uint64_t>(i)));
        std::vector<double> obs = env->reset(mix64(base ^ 0x5eed) + static_cast<std::uint64_t>(i));
        while (!env->done()) {
            StepResult r = env->step(policy(obs));
            total += r.reward;
            obs = r.obs;
        }
    }
    return total / episodes;
}

}  // namespace

RefReturns measure_reference_returns(const std::string& env_name) {
    RefReturns refs;
    refs.random_return = plain_mean_return(
        env_name, kRefRandomEpisodes, kRefBaseSeed,
        [](Env& env, std::uint64_t seed) { return make_random_policy(env, seed); });
    refs.expert_return = plain_mean_return(
        env_name, kRefExpertEpisodes, kRefBaseSeed + 1,
        [](Env& env, std::uint64_t) { return make_expert_policy(env); });
    if (refs.expert_return <= refs.random_return) {
        throw ContractError("degenerate scoring references for " + env_name +
                            ": expert <= random");
    }
    return refs;
}

double normalized_score(double raw, const RefReturns& refs) {
    if (refs.expert_return <= refs.random_return) {
        throw ContractError("normalized_score: degenerate references");
    }
    return 100.0 * (raw - refs.random_return) / (refs.expert_return - refs.random_return);
}

EvalReport rollout_eval_fn(const std::string& env_name, const ActionSource& source,
                           const NormStats& stats, int episodes, std::uint64_t seed, int k,
                           int threads) {
    if (episodes < 1) throw ContractError("rollout_eval: episodes must be >= 1");
    if (k < 1) throw ContractError("rollout_eval: context k must be >= 1");
    threads = std::max(1, threads);

    std::vector<EpisodeOutcome> outcomes(static_cast<std::size_t>(episodes));
    auto worker = [&](int start) {
        NoGradGuard guard;  // rollouts never need the tape
        auto env = make_env(env_name);
        for (int e = start; e < episodes; e += threads) {
            outcomes[static_cast<std::size_t>(e)] =
                run_episode(*env, source, stats, mix64(seed + static_cast<std::uint64_t>(e)), k);
        }
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
        for (std::thread& t : pool) t.join();
    }
    return summarize(std::move(outcomes), env_name, seed, k);
}

EvalReport rollout_eval(const PolicyModel& policy, const Tensor& z, const std::string& env_name,
                        const NormStats& stats, int episodes, std::uint64_t seed, int threads) {
    auto env = make_env(env_name);
    const ActionSpace space = action_space(env->spec());
    ActionSource source = [&policy, &z, space](const Window& window, const std::vector<double>&) {
        return greedy_action(policy, z, window, space);
    };
    return rollout_eval_fn(env_name, source, stats, episodes, seed, policy.config().context_k,
                           threads);
}

PolicyModel train_bc_control(const PolicyConfig& config, const TrainingData& data,
                             const TrainOptions& options, int total_steps,
                             const std::function<void(int, double)>& on_step) {
    if (data.subopt.empty()) throw ContractError("train_bc_control: no sub-optimal episodes");
    PolicyModel control(config, options.seed);
    AdamW optimizer(control.params(), options.adam);
    std::mt19937_64 sampler(options.seed);
    Tensor zero_token = Tensor::zeros({1, config.z_dim});

    for (int step = 0; step < total_steps; ++step) {
        std::vector<Window> batch;
        batch.reserve(static_cast<std::size_t>(options.batch_size));
        std::uniform_int_distribution<std::size_t> pick(0, data.subopt.size() - 1);
        for (int b = 0; b < options.batch_size; ++b) {
            const Window& traj = data.subopt[pick(sampler)];
            std::uniform_int_distribution<int> end_dist(1, static_cast<int>(traj.size()));
            batch.push_back(tail_window(traj, end_dist(sampler), options.context_k));
        }
        std::vector<Tensor> conds(batch.size(), zero_token);
        optimizer.zero_grad();
        RngStream rng(options.seed, static_cast<std::uint64_t>(step));
        Tensor loss = policy_loss_with_conditioning(control, batch, conds, options.loss.norm,
                                                    Mode::kTrain, &rng);
        backward(loss);
        optimizer.step();
        if (on_step) on_step(step, loss.item());
    }
    return control;
}

PolicyConfig policy_config_for(const StitchConfig& config, const EnvSpec& spec) {
    PolicyConfig out;
    out.layers = config.policy_layers;
    out.heads = config.policy_heads;
    out.hidden = config.hidden;
    out.z_dim = config.z_dim;
    out.context_k = config.train.context_k;
    out.max_timestep = spec.horizon + 1;
    out.obs_dim = spec.obs_dim;
    out.action_dim = spec.action_dim;
    out.dropout = config.dropout;
    return out;
}

EncoderConfig encoder_config_for(const StitchConfig& config, const EnvSpec& spec) {
    EncoderConfig out;
    out.layers = config.encoder_layers;
    out.heads = config.encoder_heads;
    out.hidden = config.hidden;
    out.z_dim = config.z_dim;
    out.max_timestep = spec.horizon + 1;
    out.obs_dim = spec.obs_dim;
    out.action_dim = spec.action_dim;
    out.dropout = config.dropout;
    return out;
}

StitchReport stitching_experiment(const StitchConfig& config, const Dataset& dataset) {
    if (dataset.manifest.env.name != config.env_name) {
        throw ContractError("stitching_experiment: dataset is for '" + dataset.manifest.env.name +
                            "', config wants '" + config.env_name + "'");
    }
    if (!stitching_precondition_holds(dataset)) {
        throw ContractError(
            "stitching_experiment: sub-optimal split contains a complete start-to-goal episode; "
            "refusing to run");
    }

    const EnvSpec& spec = dataset.manifest.env;
    TrainingData data = make_training_data(dataset);

    TrainOptions train = config.train;
    train.mode = config.observation_only ? ConditioningMode::kLfO : ConditioningMode::kLfD;

    PolicyModel policy(policy_config_for(config, spec), train.seed);
    EncoderModel encoder(encoder_config_for(config, spec), train.seed + 1);
    LatentEmbedding latent(config.z_dim, train.seed + 2);
    Trainer trainer(policy, encoder, latent, train);

    StitchReport report;
    report.dataset_hash = dataset.manifest.content_hash;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        report.metrics.push_back(trainer.train_epoch(data));
    }
    report.training_steps_conditioned = config.epochs * train.batch_groups;

    // Control arm: identical architecture, seed, and step budget; zero token
    // instead of the learned conditioning; sub-optimal data only.
    report.training_steps_control = report.training_steps_conditioned;
    PolicyModel control = train_bc_control(policy_config_for(config, spec), data, train,
                                           report.training_steps_control);

    const std::uint64_t eval_seed = mix64(train.seed ^ 0xE7A1ull);
    report.conditioned = rollout_eval(policy, latent.z, spec.name, dataset.manifest.stats,
                                      config.eval_episodes, eval_seed, config.threads);
    Tensor zero_token = Tensor::zeros({1, config.z_dim});
    report.control = rollout_eval(control, zero_token, spec.name, dataset.manifest.stats,
                                  config.eval_episodes, eval_seed, config.threads);
    report.gap = report.conditioned.success_rate - report.control.success_rate;
    return report;
}

StitchReport stitching_experiment(const StitchConfig& config) {
    auto env = make_env(config.env_name);
    auto subopt = generate_behavior_dataset(*env, default_segment_plan(config.env_name),
                                            config.subopt_episodes, config.train.seed,
                                            config.behavior_noise);
    auto expert = generate_expert_demos(*env, config.demo_count, config.train.seed + 0x5151,
                                        config.observation_only);
    Dataset dataset = make_dataset(*env, std::move(subopt), std::move(expert));
    return stitching_experiment(config, dataset);
}

std::string eval_report_json(const EvalReport& report) {
    json j;
    j["episodes"] = report.episodes;
    j["mean_return"] = report.mean_return;
    j["success_rate"] = report.success_rate;
    j["normalized_score"] = report.normalized_score;
    j["returns"] = report.returns;
    j["seed"] = report.seed;
    j["context_k"] = report.context_k;
    return j.dump();
}

std::string stitch_report_json(const StitchReport& report) {
    json j;
    j["conditioned"] = json::parse(eval_report_json(report.conditioned));
    j["control"] = json::parse(eval_report_json(report.control));
    j["gap"] = report.gap;
    j["training_steps"]["conditioned"] = report.training_steps_conditioned;
    j["training_steps"]["control"] = report.training_steps_control;
    j["dataset_hash"] = report.dataset_hash;
    json metrics = json::array();
    for (const EpochMetrics& m : report.metrics) metrics.push_back(json::parse(epoch_metrics_json(m)));
    j["metrics"] = std::move(metrics);
    return j.dump();
}

}  // namespace stitchformer

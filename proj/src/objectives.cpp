#include "stitchformer/objectives.hpp"

#include <chrono>

#include <json.hpp>

#include "stitchformer/errors.hpp"

namespace stitchformer {

namespace {

Tensor action_row(const StepData& step) {
    return Tensor::from_data({1, static_cast<int>(step.action.size())}, step.action);
}

Tensor mean_of(const std::vector<Tensor>& scalars) {
    return scalars.size() == 1 ? scalars[0] : mean_all(concat(scalars, 0));
}

}  // namespace

void LossConfig::validate() const {
    if (!(lambda1 > 0.0)) throw ContractError("LossConfig: lambda1 must be > 0");
    if (lambda2 < 0.0) throw ContractError("LossConfig: lambda2 must be >= 0");
    if (!(repulsion_clip > 0.0)) throw ContractError("LossConfig: repulsion_clip must be > 0");
}

void TrainOptions::validate() const {
    loss.validate();
    if (batch_size < 1) throw ContractError("TrainOptions: batch_size must be >= 1");
    if (batch_groups < 1) throw ContractError("TrainOptions: batch_groups must be >= 1");
    if (context_k < 1) throw ContractError("TrainOptions: context_k must be >= 1");
}

Window mask_all_actions(Window window) {
    for (StepData& step : window) step.action_masked = true;
    return window;
}

Window tail_window(const Window& traj, int end, int k) {
    if (end < 1 || end > static_cast<int>(traj.size())) {
        throw ContractError("tail_window: end index out of range");
    }
    const int begin = std::max(0, end - k);
    return Window(traj.begin() + begin, traj.begin() + end);
}

Tensor policy_loss_with_conditioning(const PolicyModel& policy, const std::vector<Window>& batch,
                                     const std::vector<Tensor>& conditioning, NormKind norm,
                                     Mode run_mode, RngStream* rng) {
    if (batch.empty()) throw ContractError("policy_loss: empty batch");
    if (conditioning.size() != batch.size()) {
        throw ContractError("policy_loss: conditioning count does not match batch");
    }

    std::vector<Tensor> window_losses;
    for (std::size_t w = 0; w < batch.size(); ++w) {
        const Window& window = batch[w];
        Tensor preds = policy.forward(conditioning[w], window, run_mode, rng);
        std::vector<Tensor> step_errors;
        for (std::size_t i = 0; i < window.size(); ++i) {
            if (window[i].action_masked) continue;  // no target to regress on
            Tensor pred = embedding_lookup(preds, {static_cast<int>(i)});
            step_errors.push_back(vector_norm(sub(pred, action_row(window[i])), norm));
        }
        if (step_errors.empty()) continue;
        window_losses.push_back(mean_of(step_errors));
    }
    if (window_losses.empty()) {
        throw ContractError("policy_loss: batch has no supervisable step");
    }
    return mean_of(window_losses);
}

Tensor policy_loss(const PolicyModel& policy, const EncoderModel& encoder,
                   const std::vector<Window>& batch, NormKind norm, ConditioningMode mode,
                   Mode run_mode, RngStream* rng) {
    if (batch.empty()) throw ContractError("policy_loss: empty batch");
    std::vector<Tensor> conditioning;
    conditioning.reserve(batch.size());
    for (const Window& window : batch) {
        if (mode == ConditioningMode::kLfO) {
            conditioning.push_back(encoder.forward(mask_all_actions(window), run_mode, rng));
        } else {
            conditioning.push_back(encoder.forward(window, run_mode, rng));
        }
    }
    return policy_loss_with_conditioning(policy, batch, conditioning, norm, run_mode, rng);
}

Tensor contextual_loss(const Tensor& z, const EncoderModel& encoder,
                       const std::vector<Window>& expert_batch,
                       const std::vector<Window>& subopt_batch, const LossConfig& cfg,
                       ConditioningMode mode, Mode run_mode, RngStream* rng, bool detach_encoder) {
    cfg.validate();
    if (expert_batch.empty() || subopt_batch.empty()) {
        throw ContractError("contextual_loss: empty batch");
    }

    auto embed = [&](const Window& traj) {
        const Window* input = &traj;
        Window masked;
        if (mode == ConditioningMode::kLfO) {
            masked = mask_all_actions(traj);
            input = &masked;
        }
        if (detach_encoder) {
            NoGradGuard guard;
            return encoder.forward(*input, Mode::kEval, nullptr);
        }
        return encoder.forward(*input, run_mode, rng);
    };

    std::vector<Tensor> attraction;
    attraction.reserve(expert_batch.size());
    for (const Window& traj : expert_batch) {
        attraction.push_back(vector_norm(sub(z, embed(traj)), cfg.norm));
    }
    std::vector<Tensor> repulsion;
    repulsion.reserve(subopt_batch.size());
    for (const Window& traj : subopt_batch) {
        repulsion.push_back(clamp_max(vector_norm(sub(z, embed(traj)), cfg.norm), cfg.repulsion_clip));
    }
    return sub(scale(mean_of(attraction), cfg.lambda1), scale(mean_of(repulsion), cfg.lambda2));
}

Trainer::Trainer(PolicyModel& policy, EncoderModel& encoder, LatentEmbedding& latent,
                 TrainOptions options)
    : policy_(policy),
      encoder_(encoder),
      latent_(latent),
      options_(options),
      policy_opt_(policy.params(), options.adam),
      encoder_opt_(encoder.params(), options.adam),
      latent_opt_({latent.z}, options.adam),
      sampler_(options.seed) {
    options_.validate();
}

void Trainer::zero_all_grads() {
    policy_opt_.zero_grad();
    encoder_opt_.zero_grad();
    latent_opt_.zero_grad();
}

double Trainer::phase_a_step(const std::vector<Window>& mixed_batch) {
    zero_all_grads();
    RngStream rng(options_.seed, static_cast<std::uint64_t>(global_step_) * 3 + 0);
    Tensor loss = policy_loss(policy_, encoder_, mixed_batch, options_.loss.norm, options_.mode,
                              Mode::kTrain, &rng);
    backward(loss);
    grad_norm_policy_ = policy_opt_.grad_norm();
    grad_norm_encoder_ = encoder_opt_.grad_norm();
    policy_opt_.step();
    encoder_opt_.step();
    return loss.item();
}

double Trainer::phase_b_step(const std::vector<Window>& expert_batch,
                             const std::vector<Window>& subopt_batch) {
    zero_all_grads();
    RngStream rng(options_.seed, static_cast<std::uint64_t>(global_step_) * 3 + 1);
    Tensor loss = contextual_loss(latent_.z, encoder_, expert_batch, subopt_batch, options_.loss,
                                  options_.mode, Mode::kTrain, &rng);
    backward(loss);
    grad_norm_encoder_ = encoder_opt_.grad_norm();
    encoder_opt_.step();
    return loss.item();
}

double Trainer::phase_c_step(const std::vector<Window>& expert_batch,
                             const std::vector<Window>& subopt_batch) {
    zero_all_grads();
    Tensor loss = contextual_loss(latent_.z, encoder_, expert_batch, subopt_batch, options_.loss,
                                  options_.mode, Mode::kEval, nullptr, /*detach_encoder=*/true);
    backward(loss);
    grad_norm_z_ = latent_opt_.grad_norm();
    latent_opt_.step();
    latent_.clamp_unit();
    return loss.item();
}

std::vector<Window> Trainer::sample_policy_batch(const TrainingData& data) {
    // Expert windows join the supervised batch only when they carry actions;
    // the draw is proportional to split sizes.
    const bool use_expert = options_.mode == ConditioningMode::kLfD && !data.expert.empty();
    const std::size_t expert_count = use_expert ? data.expert.size() : 0;
    const std::size_t total = expert_count + data.subopt.size();
    if (total == 0) throw ContractError("sample_policy_batch: no training episodes");

    std::vector<Window> batch;
    batch.reserve(static_cast<std::size_t>(options_.batch_size));
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (int b = 0; b < options_.batch_size; ++b) {
        const std::size_t idx = pick(sampler_);
        const Window& traj = idx < expert_count ? data.expert[idx]
                                                : data.subopt[idx - expert_count];
        std::uniform_int_distribution<int> end_dist(1, static_cast<int>(traj.size()));
        batch.push_back(tail_window(traj, end_dist(sampler_), options_.context_k));
    }
    return batch;
}

std::vector<Window> Trainer::sample_trajectory_batch(const std::vector<Window>& pool) {
    if (pool.empty()) throw ContractError("sample_trajectory_batch: empty pool");
    if (static_cast<int>(pool.size()) <= options_.batch_size) return pool;
    std::vector<Window> batch;
    batch.reserve(static_cast<std::size_t>(options_.batch_size));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int b = 0; b < options_.batch_size; ++b) batch.push_back(pool[pick(sampler_)]);
    return batch;
}

EpochMetrics Trainer::train_epoch(const TrainingData& data, const PhaseObserver& observer) {
    if (data.expert.empty()) throw ContractError("train_epoch: dataset has no expert split");
    if (data.subopt.empty()) throw ContractError("train_epoch: dataset has no sub-optimal split");

    const auto start = std::chrono::steady_clock::now();
    EpochMetrics metrics;
    metrics.epoch = epoch_;
    double sum_gp = 0.0, sum_ge = 0.0, sum_gz = 0.0;
    for (int group = 0; group < options_.batch_groups; ++group) {
        std::vector<Window> mixed = sample_policy_batch(data);
        std::vector<Window> expert_batch = sample_trajectory_batch(data.expert);
        std::vector<Window> subopt_batch = sample_trajectory_batch(data.subopt);

        metrics.loss_a += phase_a_step(mixed);
        if (observer) observer(Phase::kA, group);
        metrics.loss_b += phase_b_step(expert_batch, subopt_batch);
        if (observer) observer(Phase::kB, group);
        metrics.loss_c += phase_c_step(expert_batch, subopt_batch);
        if (observer) observer(Phase::kC, group);

        sum_gp += grad_norm_policy_;
        sum_ge += grad_norm_encoder_;
        sum_gz += grad_norm_z_;
        ++global_step_;
    }
    const double groups = static_cast<double>(options_.batch_groups);
    metrics.loss_a /= groups;
    metrics.loss_b /= groups;
    metrics.loss_c /= groups;
    metrics.grad_norm_policy = sum_gp / groups;
    metrics.grad_norm_encoder = sum_ge / groups;
    metrics.grad_norm_z = sum_gz / groups;
    metrics.lr = policy_opt_.effective_lr();
    metrics.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ++epoch_;
    return metrics;
}

std::string epoch_metrics_json(const EpochMetrics& metrics) {
    nlohmann::json j;
    j["epoch"] = metrics.epoch;
    j["loss_a"] = metrics.loss_a;
    j["loss_b"] = metrics.loss_b;
    j["loss_c"] = metrics.loss_c;
    j["grad_norm_policy"] = metrics.grad_norm_policy;
    j["grad_norm_encoder"] = metrics.grad_norm_encoder;
    j["grad_norm_z"] = metrics.grad_norm_z;
    j["lr"] = metrics.lr;
    j["seconds"] = metrics.seconds;
    return j.dump();
}

EpochMetrics epoch_metrics_from_json(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    EpochMetrics m;
    m.epoch = j.at("epoch").get<int>();
    m.loss_a = j.at("loss_a").get<double>();
    m.loss_b = j.at("loss_b").get<double>();
    m.loss_c = j.at("loss_c").get<double>();
    m.grad_norm_policy = j.at("grad_norm_policy").get<double>();
    m.grad_norm_encoder = j.at("grad_norm_encoder").get<double>();
    m.grad_norm_z = j.at("grad_norm_z").get<double>();
    m.lr = j.at("lr").get<double>();
    m.seconds = j.at("seconds").get<double>();
    return m;
}

}  // namespace stitchformer

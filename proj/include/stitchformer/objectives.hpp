#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stitchformer/models.hpp"
#include "stitchformer/optimizer.hpp"

namespace stitchformer {

struct LossConfig {
    double lambda1 = 1.0;       // attraction weight
    double lambda2 = 0.5;       // repulsion weight
    NormKind norm = NormKind::kL2;
    double repulsion_clip = 10.0;  // per-sample cap M on the repulsion distance

    void validate() const;
};

// LfD trains on demonstrations with actions; LfO sees expert states only, so
// every encoder input is treated as action-masked to keep conditioning
// consistent between training and the state-only demonstrations.
enum class ConditioningMode { kLfD, kLfO };

// Supervised sequence loss: mean over windows of the mean per-step
// ||prediction - action||, conditioning each window on the encoder's summary
// of that same window. Steps without actions are skipped; a batch with no
// supervisable step is a contract violation. Gradients reach both models.
Tensor policy_loss(const PolicyModel& policy, const EncoderModel& encoder,
                   const std::vector<Window>& batch, NormKind norm, ConditioningMode mode,
                   Mode run_mode, RngStream* rng);

// Same loss with caller-supplied conditioning vectors (one per window); used
// by the zero-token control and by tests.
Tensor policy_loss_with_conditioning(const PolicyModel& policy, const std::vector<Window>& batch,
                                     const std::vector<Tensor>& conditioning, NormKind norm,
                                     Mode run_mode, RngStream* rng);

// Divergent matching objective:
//   lambda1 * E[||z - I(expert)||] - lambda2 * E[min(||z - I(subopt)||, M)].
// With detach_encoder the embeddings are computed off-tape in eval mode, so
// gradients reach only z (the frozen-extractor phase).
Tensor contextual_loss(const Tensor& z, const EncoderModel& encoder,
                       const std::vector<Window>& expert_batch,
                       const std::vector<Window>& subopt_batch, const LossConfig& cfg,
                       ConditioningMode mode, Mode run_mode, RngStream* rng,
                       bool detach_encoder = false);

struct TrainOptions {
    LossConfig loss;
    AdamConfig adam;
    int batch_size = 16;
    int batch_groups = 32;  // phase-A/B/C groups per epoch
    int context_k = 20;
    ConditioningMode mode = ConditioningMode::kLfD;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double loss_a = 0.0;
    double loss_b = 0.0;
    double loss_c = 0.0;
    double grad_norm_policy = 0.0;
    double grad_norm_encoder = 0.0;
    double grad_norm_z = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

std::string epoch_metrics_json(const EpochMetrics& metrics);
EpochMetrics epoch_metrics_from_json(const std::string& line);

// Normalized full trajectories ready for training; rewards are already
// stripped by construction of Window.
struct TrainingData {
    std::vector<Window> expert;
    std::vector<Window> subopt;
};

enum class Phase { kA, kB, kC };
using PhaseObserver = std::function<void(Phase, int group)>;

// Owns the three disjoint optimizers (policy, encoder, z*), the batch
// sampler, and the dropout streams. One Trainer is the single writer for its
// models' parameters.
class Trainer {
  public:
    Trainer(PolicyModel& policy, EncoderModel& encoder, LatentEmbedding& latent,
            TrainOptions options);

    // Phase A: one step on policy + encoder against the supervised loss;
    // z* is untouched bitwise.
    double phase_a_step(const std::vector<Window>& mixed_batch);

    // Phase B: one step on the encoder against the matching objective;
    // policy and z* untouched.
    double phase_b_step(const std::vector<Window>& expert_batch,
                        const std::vector<Window>& subopt_batch);

    // Phase C: one step on z* with the extractor frozen (eval mode,
    // off-tape), then re-clamp z* into the unit box.
    double phase_c_step(const std::vector<Window>& expert_batch,
                        const std::vector<Window>& subopt_batch);

    // A -> B -> C once per batch group. Deterministic under a fixed seed.
    EpochMetrics train_epoch(const TrainingData& data, const PhaseObserver& observer = nullptr);

    std::vector<Window> sample_policy_batch(const TrainingData& data);
    std::vector<Window> sample_trajectory_batch(const std::vector<Window>& pool);

    const TrainOptions& options() const { return options_; }
    AdamW& policy_optimizer() { return policy_opt_; }
    AdamW& encoder_optimizer() { return encoder_opt_; }
    AdamW& latent_optimizer() { return latent_opt_; }
    double last_grad_norm_policy() const { return grad_norm_policy_; }
    double last_grad_norm_encoder() const { return grad_norm_encoder_; }
    double last_grad_norm_z() const { return grad_norm_z_; }
    std::int64_t global_step() const { return global_step_; }

  private:
    void zero_all_grads();

    PolicyModel& policy_;
    EncoderModel& encoder_;
    LatentEmbedding& latent_;
    TrainOptions options_;
    AdamW policy_opt_;
    AdamW encoder_opt_;
    AdamW latent_opt_;
    std::mt19937_64 sampler_;
    std::int64_t global_step_ = 0;
    int epoch_ = 0;
    double grad_norm_policy_ = 0.0;
    double grad_norm_encoder_ = 0.0;
    double grad_norm_z_ = 0.0;
};

// Marks every step of a window as action-masked (observation-only view).
Window mask_all_actions(Window window);

// Last <= k steps of a trajectory ending at one-past index `end`.
Window tail_window(const Window& traj, int end, int k);

}  // namespace stitchformer

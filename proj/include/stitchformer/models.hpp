#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stitchformer/checkpoint.hpp"
#include "stitchformer/ops.hpp"
#include "stitchformer/rng.hpp"
#include "stitchformer/tensor.hpp"

namespace stitchformer {

// One trajectory step as the models consume it: normalized observation, the
// action vector (one-hot for discrete environments), and the availability
// flag for observation-only data. Rewards never reach this type.
struct StepData {
    std::vector<double> obs;
    std::vector<double> action;
    bool action_masked = false;
    int timestep = 0;
};
using Window = std::vector<StepData>;

enum class ActionKind { kDiscreteOnehot, kContinuousBox };

struct ActionSpace {
    ActionKind kind = ActionKind::kDiscreteOnehot;
    std::vector<double> low;   // per-dim bounds for continuous boxes
    std::vector<double> high;
};

struct EnvAction {
    std::vector<double> values;  // one-hot for discrete, clipped vector for continuous
    int discrete_index = -1;
};

struct PolicyConfig {
    int layers = 3;
    int heads = 2;
    int hidden = 64;
    int z_dim = 16;
    int context_k = 20;
    int max_timestep = 256;
    int obs_dim = 1;
    int action_dim = 2;
    int mlp_mult = 4;
    double dropout = 0.1;

    std::map<std::string, std::string> meta(const std::string& arch) const;
    void validate_meta(const std::map<std::string, std::string>& meta,
                       const std::string& arch) const;
};

// Shared pre-norm transformer block; causal when given an attention mask.
struct TransformerBlock {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
    int heads = 1;
    double dropout_p = 0.0;

    Tensor forward(const Tensor& x, const Tensor* attn_mask, Mode mode, RngStream* rng) const;
};

// Causal latent-conditioned sequence policy. Input token order per step is
// {z, s_i, a_i}; predictions are read at observation-token positions, so the
// action prediction for step i only sees tokens up to and including s_i.
class PolicyModel {
  public:
    PolicyModel(PolicyConfig config, std::uint64_t seed);

    // window of 1..k steps -> one predicted action row per step, [L, action_dim].
    Tensor forward(const Tensor& z, const Window& window, Mode mode, RngStream* rng) const;

    const PolicyConfig& config() const { return config_; }
    std::vector<Tensor> params() const;
    std::vector<NamedParam> named_params(const std::string& prefix) const;

  private:
    PolicyConfig config_;
    Tensor embed_z_w_, embed_z_b_;
    Tensor embed_obs_w_, embed_obs_b_;
    Tensor embed_act_w_, embed_act_b_;
    Tensor timestep_table_;
    std::vector<TransformerBlock> blocks_;
    Tensor final_gain_, final_bias_;
    Tensor head_w_, head_b_;
};

struct EncoderConfig {
    int layers = 3;
    int heads = 8;
    int hidden = 64;
    int z_dim = 16;
    int max_timestep = 256;
    int obs_dim = 1;
    int action_dim = 2;
    int mlp_mult = 4;
    double dropout = 0.1;

    std::map<std::string, std::string> meta(const std::string& arch) const;
    void validate_meta(const std::map<std::string, std::string>& meta,
                       const std::string& arch) const;
};

// Bidirectional trajectory summarizer: one token per step combining
// observation, action, and availability-flag embeddings; mean-pooled and
// squashed so the output always lies strictly inside (-1,1)^z_dim. Masked
// steps contribute no action information regardless of the action values
// the caller left in place.
class EncoderModel {
  public:
    EncoderModel(EncoderConfig config, std::uint64_t seed);

    Tensor forward(const Window& traj, Mode mode, RngStream* rng) const;  // [1, z_dim]

    const EncoderConfig& config() const { return config_; }
    std::vector<Tensor> params() const;
    std::vector<NamedParam> named_params(const std::string& prefix) const;

  private:
    EncoderConfig config_;
    Tensor embed_obs_w_, embed_obs_b_;
    Tensor embed_act_w_;
    Tensor embed_flag_w_;
    Tensor timestep_table_;
    std::vector<TransformerBlock> blocks_;
    Tensor final_gain_, final_bias_;
    Tensor pool_w_, pool_b_;
};

// The learnable conditioning vector, kept inside [-1,1]^dim.
struct LatentEmbedding {
    Tensor z;  // [1, dim]

    LatentEmbedding() = default;
    LatentEmbedding(int dim, std::uint64_t seed);
    void clamp_unit();
};

// Greedy action for the last window step: argmax index (as one-hot) for
// discrete environments, bound-clipped raw vector for continuous ones.
EnvAction greedy_action(const PolicyModel& policy, const Tensor& z, const Window& window,
                        const ActionSpace& space);

// Both models plus the conditioning vector in one checkpoint; architecture
// configs ride along in the manifest metadata and are validated on load.
struct ModelBundle {
    PolicyModel policy;
    EncoderModel encoder;
    LatentEmbedding latent;
    std::map<std::string, std::string> meta;
};

void save_model_bundle(const std::string& path, const PolicyModel& policy,
                       const EncoderModel& encoder, const LatentEmbedding& latent,
                       const std::map<std::string, std::string>& extra_meta = {});
ModelBundle load_model_bundle(const std::string& path);

}  // namespace stitchformer

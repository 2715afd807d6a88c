#include "stitchformer/models.hpp"

#include <cmath>
#include <random>

#include "stitchformer/errors.hpp"

namespace stitchformer {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kSquashMargin = 1e-6;  // keeps tanh output strictly inside (-1,1)
constexpr double kMaskedScore = -1e9;   // finite stand-in for -inf in causal masks

class ParamInit {
  public:
    explicit ParamInit(std::uint64_t seed) : rng_(seed), normal_(0.0, kInitStd) {}

    Tensor normal(std::vector<int> shape) {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        std::vector<double> values(static_cast<std::size_t>(n));
        for (double& v : values) v = normal_(rng_);
        return Tensor::from_data(std::move(shape), std::move(values), true);
    }

    Tensor zeros(std::vector<int> shape) { return Tensor::zeros(std::move(shape), true); }
    Tensor ones(std::vector<int> shape) { return Tensor::full(std::move(shape), 1.0, true); }

  private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_;
};

TransformerBlock make_block(ParamInit& init, int hidden, int heads, int mlp_mult, double dropout) {
    TransformerBlock b;
    b.ln1_gain = init.ones({hidden});
    b.ln1_bias = init.zeros({hidden});
    b.wq = init.normal({hidden, hidden});
    b.bq = init.zeros({hidden});
    b.wk = init.normal({hidden, hidden});
    b.bk = init.zeros({hidden});
    b.wv = init.normal({hidden, hidden});
    b.bv = init.zeros({hidden});
    b.wo = init.normal({hidden, hidden});
    b.bo = init.zeros({hidden});
    b.ln2_gain = init.ones({hidden});
    b.ln2_bias = init.zeros({hidden});
    b.w1 = init.normal({hidden, hidden * mlp_mult});
    b.b1 = init.zeros({hidden * mlp_mult});
    b.w2 = init.normal({hidden * mlp_mult, hidden});
    b.b2 = init.zeros({hidden});
    b.heads = heads;
    b.dropout_p = dropout;
    return b;
}

void append_block_params(std::vector<NamedParam>& out, const std::string& prefix,
                         const TransformerBlock& b) {
    out.push_back({prefix + "/ln1_gain", b.ln1_gain});
    out.push_back({prefix + "/ln1_bias", b.ln1_bias});
    out.push_back({prefix + "/wq", b.wq});
    out.push_back({prefix + "/bq", b.bq});
    out.push_back({prefix + "/wk", b.wk});
    out.push_back({prefix + "/bk", b.bk});
    out.push_back({prefix + "/wv", b.wv});
    out.push_back({prefix + "/bv", b.bv});
    out.push_back({prefix + "/wo", b.wo});
    out.push_back({prefix + "/bo", b.bo});
    out.push_back({prefix + "/ln2_gain", b.ln2_gain});
    out.push_back({prefix + "/ln2_bias", b.ln2_bias});
    out.push_back({prefix + "/w1", b.w1});
    out.push_back({prefix + "/b1", b.b1});
    out.push_back({prefix + "/w2", b.w2});
    out.push_back({prefix + "/b2", b.b2});
}

Tensor causal_mask(int tokens) {
    std::vector<double> mask(static_cast<std::size_t>(tokens) * tokens, 0.0);
    for (int i = 0; i < tokens; ++i) {
        for (int j = i + 1; j < tokens; ++j) {
            mask[static_cast<std::size_t>(i) * tokens + j] = kMaskedScore;
        }
    }
    return Tensor::from_data({tokens, tokens}, std::move(mask));
}

// Rows of raw window data as non-grad input tensors.
Tensor window_matrix(const Window& window, int dim, bool use_obs, bool zero_masked_actions) {
    std::vector<double> values;
    values.reserve(window.size() * static_cast<std::size_t>(dim));
    for (const StepData& step : window) {
        const std::vector<double>& src = use_obs ? step.obs : step.action;
        if (static_cast<int>(src.size()) != dim) {
            throw ContractError(std::string(use_obs ? "observation" : "action") +
                                " dim mismatch: got " + std::to_string(src.size()) + ", expected " +
                                std::to_string(dim));
        }
        if (!use_obs && zero_masked_actions && step.action_masked) {
            values.insert(values.end(), static_cast<std::size_t>(dim), 0.0);
        } else {
            values.insert(values.end(), src.begin(), src.end());
        }
    }
    return Tensor::from_data({static_cast<int>(window.size()), dim}, std::move(values));
}

std::vector<int> window_timesteps(const Window& window, int max_timestep) {
    std::vector<int> ts;
    ts.reserve(window.size());
    for (const StepData& step : window) {
        if (step.timestep < 0) throw ContractError("negative timestep in window");
        ts.push_back(std::min(step.timestep, max_timestep - 1));
    }
    return ts;
}

void put_meta(std::map<std::string, std::string>& meta, const std::string& key, int value) {
    meta[key] = std::to_string(value);
}

void check_meta(const std::map<std::string, std::string>& meta, const std::string& key,
                int expected, const std::string& arch) {
    auto it = meta.find(key);
    if (it == meta.end() || it->second != std::to_string(expected)) {
        throw ContractError("checkpoint architecture mismatch for " + arch + ": field '" + key +
                            "' is " + (it == meta.end() ? std::string("absent") : it->second) +
                            ", expected " + std::to_string(expected));
    }
}

}  // namespace

Tensor TransformerBlock::forward(const Tensor& x, const Tensor* attn_mask, Mode mode,
                                 RngStream* rng) const {
    const int hidden = x.cols();
    const int head_dim = hidden / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Tensor h = layer_norm(x, ln1_gain, ln1_bias);
    Tensor q = add_bias(matmul(h, wq), bq);
    Tensor k = add_bias(matmul(h, wk), bk);
    Tensor v = add_bias(matmul(h, wv), bv);

    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (int hd = 0; hd < heads; ++hd) {
        const int c0 = hd * head_dim;
        const int c1 = c0 + head_dim;
        Tensor qh = slice_cols(q, c0, c1);
        Tensor kh = slice_cols(k, c0, c1);
        Tensor vh = slice_cols(v, c0, c1);
        Tensor scores = scale(matmul(qh, kh, /*transpose_b=*/true), inv_sqrt);
        if (attn_mask != nullptr) scores = add(scores, *attn_mask);
        Tensor probs = dropout(softmax_rows(scores), dropout_p, mode, rng);
        head_outs.push_back(matmul(probs, vh));
    }
    Tensor att = heads == 1 ? head_outs[0] : concat(head_outs, 1);
    att = dropout(add_bias(matmul(att, wo), bo), dropout_p, mode, rng);
    Tensor x1 = add(x, att);

    Tensor h2 = layer_norm(x1, ln2_gain, ln2_bias);
    Tensor m = relu(add_bias(matmul(h2, w1), b1));
    m = dropout(add_bias(matmul(m, w2), b2), dropout_p, mode, rng);
    return add(x1, m);
}

std::map<std::string, std::string> PolicyConfig::meta(const std::string& arch) const {
    std::map<std::string, std::string> m;
    m["arch"] = arch;
    put_meta(m, "layers", layers);
    put_meta(m, "heads", heads);
    put_meta(m, "hidden", hidden);
    put_meta(m, "z_dim", z_dim);
    put_meta(m, "context_k", context_k);
    put_meta(m, "max_timestep", max_timestep);
    put_meta(m, "obs_dim", obs_dim);
    put_meta(m, "action_dim", action_dim);
    put_meta(m, "mlp_mult", mlp_mult);
    return m;
}

void PolicyConfig::validate_meta(const std::map<std::string, std::string>& m,
                                 const std::string& arch) const {
    auto it = m.find("arch");
    if (it == m.end() || it->second != arch) {
        throw ContractError("checkpoint is not a '" + arch + "' checkpoint");
    }
    check_meta(m, "layers", layers, arch);
    check_meta(m, "heads", heads, arch);
    check_meta(m, "hidden", hidden, arch);
    check_meta(m, "z_dim", z_dim, arch);
    check_meta(m, "context_k", context_k, arch);
    check_meta(m, "max_timestep", max_timestep, arch);
    check_meta(m, "obs_dim", obs_dim, arch);
    check_meta(m, "action_dim", action_dim, arch);
    check_meta(m, "mlp_mult", mlp_mult, arch);
}

PolicyModel::PolicyModel(PolicyConfig config, std::uint64_t seed) : config_(config) {
    if (config_.hidden % config_.heads != 0) {
        throw ContractError("PolicyModel: hidden must be divisible by heads");
    }
    ParamInit init(seed);
    embed_z_w_ = init.normal({config_.z_dim, config_.hidden});
    embed_z_b_ = init.zeros({config_.hidden});
    embed_obs_w_ = init.normal({config_.obs_dim, config_.hidden});
    embed_obs_b_ = init.zeros({config_.hidden});
    embed_act_w_ = init.normal({config_.action_dim, config_.hidden});
    embed_act_b_ = init.zeros({config_.hidden});
    timestep_table_ = init.normal({config_.max_timestep, config_.hidden});
    for (int i = 0; i < config_.layers; ++i) {
        blocks_.push_back(
            make_block(init, config_.hidden, config_.heads, config_.mlp_mult, config_.dropout));
    }
    final_gain_ = init.ones({config_.hidden});
    final_bias_ = init.zeros({config_.hidden});
    head_w_ = init.normal({config_.hidden, config_.action_dim});
    head_b_ = init.zeros({config_.action_dim});
}

Tensor PolicyModel::forward(const Tensor& z, const Window& window, Mode mode,
                            RngStream* rng) const {
    if (window.empty()) throw ContractError("policy forward: empty window");
    const int len = static_cast<int>(window.size());
    if (len > config_.context_k) {
        throw ContractError("policy forward: window of " + std::to_string(len) +
                            " steps exceeds context k=" + std::to_string(config_.context_k));
    }
    if (z.shape() != std::vector<int>{1, config_.z_dim}) {
        throw ContractError("policy forward: z must be [1," + std::to_string(config_.z_dim) +
                            "], got " + shape_str(z.shape()));
    }
    if (mode == Mode::kTrain && config_.dropout > 0.0 && rng == nullptr) {
        throw ContractError("policy forward: train mode needs an rng stream");
    }

    Tensor obs = window_matrix(window, config_.obs_dim, /*use_obs=*/true, false);
    Tensor act = window_matrix(window, config_.action_dim, /*use_obs=*/false, false);
    Tensor t_emb = embedding_lookup(timestep_table_, window_timesteps(window, config_.max_timestep));

    Tensor z_row = add_bias(matmul(z, embed_z_w_), embed_z_b_);          // [1, hidden]
    Tensor z_tile = matmul(Tensor::full({len, 1}, 1.0), z_row);          // [L, hidden]
    Tensor s_tok = add_bias(matmul(obs, embed_obs_w_), embed_obs_b_);    // [L, hidden]
    Tensor a_tok = add_bias(matmul(act, embed_act_w_), embed_act_b_);    // [L, hidden]

    Tensor x = interleave_rows({add(z_tile, t_emb), add(s_tok, t_emb), add(a_tok, t_emb)});
    x = dropout(x, config_.dropout, mode, rng);

    Tensor mask = causal_mask(3 * len);
    for (const TransformerBlock& block : blocks_) {
        x = block.forward(x, &mask, mode, rng);
    }
    x = layer_norm(x, final_gain_, final_bias_);

    std::vector<int> obs_positions(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) obs_positions[static_cast<std::size_t>(i)] = 3 * i + 1;
    Tensor at_obs = embedding_lookup(x, obs_positions);
    return add_bias(matmul(at_obs, head_w_), head_b_);
}

std::vector<NamedParam> PolicyModel::named_params(const std::string& prefix) const {
    std::vector<NamedParam> out;
    out.push_back({prefix + "/embed_z/w", embed_z_w_});
    out.push_back({prefix + "/embed_z/b", embed_z_b_});
    out.push_back({prefix + "/embed_obs/w", embed_obs_w_});
    out.push_back({prefix + "/embed_obs/b", embed_obs_b_});
    out.push_back({prefix + "/embed_act/w", embed_act_w_});
    out.push_back({prefix + "/embed_act/b", embed_act_b_});
    out.push_back({prefix + "/timestep_table", timestep_table_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        append_block_params(out, prefix + "/block" + std::to_string(i), blocks_[i]);
    }
    out.push_back({prefix + "/final_gain", final_gain_});
    out.push_back({prefix + "/final_bias", final_bias_});
    out.push_back({prefix + "/head/w", head_w_});
    out.push_back({prefix + "/head/b", head_b_});
    return out;
}

std::vector<Tensor> PolicyModel::params() const {
    std::vector<Tensor> out;
    for (const NamedParam& p : named_params("p")) out.push_back(p.tensor);
    return out;
}

std::map<std::string, std::string> EncoderConfig::meta(const std::string& arch) const {
    std::map<std::string, std::string> m;
    m["arch"] = arch;
    put_meta(m, "layers", layers);
    put_meta(m, "heads", heads);
    put_meta(m, "hidden", hidden);
    put_meta(m, "z_dim", z_dim);
    put_meta(m, "max_timestep", max_timestep);
    put_meta(m, "obs_dim", obs_dim);
    put_meta(m, "action_dim", action_dim);
    put_meta(m, "mlp_mult", mlp_mult);
    return m;
}

void EncoderConfig::validate_meta(const std::map<std::string, std::string>& m,
                                  const std::string& arch) const {
    auto it = m.find("arch");
    if (it == m.end() || it->second != arch) {
        throw ContractError("checkpoint is not a '" + arch + "' checkpoint");
    }
    check_meta(m, "layers", layers, arch);
    check_meta(m, "heads", heads, arch);
    check_meta(m, "hidden", hidden, arch);
    check_meta(m, "z_dim", z_dim, arch);
    check_meta(m, "max_timestep", max_timestep, arch);
    check_meta(m, "obs_dim", obs_dim, arch);
    check_meta(m, "action_dim", action_dim, arch);
    check_meta(m, "mlp_mult", mlp_mult, arch);
}

EncoderModel::EncoderModel(EncoderConfig config, std::uint64_t seed) : config_(config) {
    if (config_.hidden % config_.heads != 0) {
        throw ContractError("EncoderModel: hidden must be divisible by heads");
    }
    ParamInit init(seed);
    embed_obs_w_ = init.normal({config_.obs_dim, config_.hidden});
    embed_obs_b_ = init.zeros({config_.hidden});
    embed_act_w_ = init.normal({config_.action_dim, config_.hidden});
    embed_flag_w_ = init.normal({1, config_.hidden});
    timestep_table_ = init.normal({config_.max_timestep, config_.hidden});
    for (int i = 0; i < config_.layers; ++i) {
        blocks_.push_back(
            make_block(init, config_.hidden, config_.heads, config_.mlp_mult, config_.dropout));
    }
    final_gain_ = init.ones({config_.hidden});
    final_bias_ = init.zeros({config_.hidden});
    pool_w_ = init.normal({config_.hidden, config_.z_dim});
    pool_b_ = init.zeros({config_.z_dim});
}

Tensor EncoderModel::forward(const Window& traj, Mode mode, RngStream* rng) const {
    if (traj.empty()) throw ContractError("encoder forward: empty trajectory");
    if (mode == Mode::kTrain && config_.dropout > 0.0 && rng == nullptr) {
        throw ContractError("encoder forward: train mode needs an rng stream");
    }
    const int len = static_cast<int>(traj.size());

    Tensor obs = window_matrix(traj, config_.obs_dim, /*use_obs=*/true, false);
    // Masked steps contribute zero action values no matter what the caller
    // stored; the flag embedding carries the fact that the action is absent.
    // Flags are encoded +1/-1 so the flag embedder participates in every
    // token and never sits dead at init.
    Tensor act = window_matrix(traj, config_.action_dim, /*use_obs=*/false,
                               /*zero_masked_actions=*/true);
    std::vector<double> flags(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) flags[static_cast<std::size_t>(i)] = traj[static_cast<std::size_t>(i)].action_masked ? 1.0 : -1.0;
    Tensor flag_col = Tensor::from_data({len, 1}, std::move(flags));
    Tensor t_emb = embedding_lookup(timestep_table_, window_timesteps(traj, config_.max_timestep));

    Tensor x = add_bias(matmul(obs, embed_obs_w_), embed_obs_b_);
    x = add(x, matmul(act, embed_act_w_));
    x = add(x, matmul(flag_col, embed_flag_w_));
    x = add(x, t_emb);
    x = dropout(x, config_.dropout, mode, rng);

    for (const TransformerBlock& block : blocks_) {
        x = block.forward(x, nullptr, mode, rng);
    }
    x = layer_norm(x, final_gain_, final_bias_);

    Tensor pooled = mean_rows(x);
    Tensor z = tanh_squash(add_bias(matmul(pooled, pool_w_), pool_b_));
    return scale(z, 1.0 - kSquashMargin);
}

std::vector<NamedParam> EncoderModel::named_params(const std::string& prefix) const {
    std::vector<NamedParam> out;
    out.push_back({prefix + "/embed_obs/w", embed_obs_w_});
    out.push_back({prefix + "/embed_obs/b", embed_obs_b_});
    out.push_back({prefix + "/embed_act/w", embed_act_w_});
    out.push_back({prefix + "/embed_flag/w", embed_flag_w_});
    out.push_back({prefix + "/timestep_table", timestep_table_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        append_block_params(out, prefix + "/block" + std::to_string(i), blocks_[i]);
    }
    out.push_back({prefix + "/final_gain", final_gain_});
    out.push_back({prefix + "/final_bias", final_bias_});
    out.push_back({prefix + "/pool/w", pool_w_});
    out.push_back({prefix + "/pool/b", pool_b_});
    return out;
}

std::vector<Tensor> EncoderModel::params() const {
    std::vector<Tensor> out;
    for (const NamedParam& p : named_params("e")) out.push_back(p.tensor);
    return out;
}

LatentEmbedding::LatentEmbedding(int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    std::vector<double> values(static_cast<std::size_t>(dim));
    for (double& v : values) v = dist(rng);
    z = Tensor::from_data({1, dim}, std::move(values), true);
}

void LatentEmbedding::clamp_unit() {
    for (double& v : z.values()) {
        v = round_to_precision(std::min(1.0, std::max(-1.0, v)));
    }
}

namespace {

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw ContractError("model bundle: missing meta field '" + key + "'");
    return std::stoi(it->second);
}

}  // namespace

void save_model_bundle(const std::string& path, const PolicyModel& policy,
                       const EncoderModel& encoder, const LatentEmbedding& latent,
                       const std::map<std::string, std::string>& extra_meta) {
    std::vector<NamedParam> params = policy.named_params("policy");
    for (NamedParam& p : encoder.named_params("encoder")) params.push_back(std::move(p));
    params.push_back({"latent/z", latent.z});

    std::map<std::string, std::string> meta = extra_meta;
    for (const auto& [key, value] : policy.config().meta("policy")) meta["policy." + key] = value;
    for (const auto& [key, value] : encoder.config().meta("encoder")) meta["encoder." + key] = value;
    save_checkpoint(path, params, meta);
}

ModelBundle load_model_bundle(const std::string& path) {
    const CheckpointLoadResult peek = peek_checkpoint(path);

    std::map<std::string, std::string> policy_meta, encoder_meta;
    for (const auto& [key, value] : peek.meta) {
        if (key.rfind("policy.", 0) == 0) policy_meta[key.substr(7)] = value;
        if (key.rfind("encoder.", 0) == 0) encoder_meta[key.substr(8)] = value;
    }

    PolicyConfig pcfg;
    pcfg.layers = meta_int(policy_meta, "layers");
    pcfg.heads = meta_int(policy_meta, "heads");
    pcfg.hidden = meta_int(policy_meta, "hidden");
    pcfg.z_dim = meta_int(policy_meta, "z_dim");
    pcfg.context_k = meta_int(policy_meta, "context_k");
    pcfg.max_timestep = meta_int(policy_meta, "max_timestep");
    pcfg.obs_dim = meta_int(policy_meta, "obs_dim");
    pcfg.action_dim = meta_int(policy_meta, "action_dim");
    pcfg.mlp_mult = meta_int(policy_meta, "mlp_mult");
    pcfg.validate_meta(policy_meta, "policy");

    EncoderConfig ecfg;
    ecfg.layers = meta_int(encoder_meta, "layers");
    ecfg.heads = meta_int(encoder_meta, "heads");
    ecfg.hidden = meta_int(encoder_meta, "hidden");
    ecfg.z_dim = meta_int(encoder_meta, "z_dim");
    ecfg.max_timestep = meta_int(encoder_meta, "max_timestep");
    ecfg.obs_dim = meta_int(encoder_meta, "obs_dim");
    ecfg.action_dim = meta_int(encoder_meta, "action_dim");
    ecfg.mlp_mult = meta_int(encoder_meta, "mlp_mult");
    ecfg.validate_meta(encoder_meta, "encoder");

    ModelBundle bundle{PolicyModel(pcfg, 0), EncoderModel(ecfg, 0), LatentEmbedding(pcfg.z_dim, 0),
                       peek.meta};
    std::vector<NamedParam> params = bundle.policy.named_params("policy");
    for (NamedParam& p : bundle.encoder.named_params("encoder")) params.push_back(std::move(p));
    params.push_back({"latent/z", bundle.latent.z});
    load_checkpoint(path, params);
    return bundle;
}

EnvAction greedy_action(const PolicyModel& policy, const Tensor& z, const Window& window,
                        const ActionSpace& space) {
    NoGradGuard guard;
    Tensor preds = policy.forward(z, window, Mode::kEval, nullptr);
    const int action_dim = preds.cols();
    const int last = preds.rows() - 1;
    std::vector<double> raw(preds.values().begin() + static_cast<std::size_t>(last) * action_dim,
                            preds.values().end());

    EnvAction action;
    if (space.kind == ActionKind::kDiscreteOnehot) {
        int best = 0;
        for (int i = 1; i < action_dim; ++i) {
            if (raw[static_cast<std::size_t>(i)] > raw[static_cast<std::size_t>(best)]) best = i;
        }
        action.values.assign(static_cast<std::size_t>(action_dim), 0.0);
        action.values[static_cast<std::size_t>(best)] = 1.0;
        action.discrete_index = best;
    } else {
        if (space.low.size() != raw.size() || space.high.size() != raw.size()) {
            throw ContractError("greedy_action: action bounds do not match action dim");
        }
        for (std::size_t i = 0; i < raw.size(); ++i) {
            raw[i] = std::min(space.high[i], std::max(space.low[i], raw[i]));
        }
        action.values = std::move(raw);
    }
    return action;
}

}  // namespace stitchformer

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "stitchformer/errors.hpp"
#include "stitchformer/models.hpp"
#include "support/reference_forward.hpp"

using namespace stitchformer;

namespace {

// Small dims keep the suite quick; architecture logic is size-agnostic.
PolicyConfig small_policy_config() {
    PolicyConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.hidden = 16;
    cfg.z_dim = 4;
    cfg.context_k = 6;
    cfg.max_timestep = 32;
    cfg.obs_dim = 2;
    cfg.action_dim = 3;
    cfg.dropout = 0.1;
    return cfg;
}

EncoderConfig small_encoder_config() {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.hidden = 16;
    cfg.z_dim = 4;
    cfg.max_timestep = 32;
    cfg.obs_dim = 2;
    cfg.action_dim = 3;
    cfg.dropout = 0.1;
    return cfg;
}

Window random_window(std::mt19937_64& rng, int steps, int obs_dim, int action_dim,
                     bool masked = false, int t0 = 0) {
    std::uniform_real_distribution<double> dist(-1, 1);
    Window w;
    for (int i = 0; i < steps; ++i) {
        StepData s;
        s.obs.resize(static_cast<std::size_t>(obs_dim));
        for (double& v : s.obs) v = dist(rng);
        s.action.resize(static_cast<std::size_t>(action_dim));
        for (double& v : s.action) v = dist(rng);
        s.action_masked = masked;
        s.timestep = t0 + i;
        w.push_back(std::move(s));
    }
    return w;
}

Tensor z_of(std::initializer_list<double> values) {
    return Tensor::from_data({1, static_cast<int>(values.size())}, values);
}

}  // namespace

TEST_CASE("length-1 window produces exactly one predicted action") {
    auto cfg = small_policy_config();
    PolicyModel policy(cfg, 1);
    std::mt19937_64 rng(2);
    Window w = random_window(rng, 1, cfg.obs_dim, cfg.action_dim);
    Tensor out = policy.forward(z_of({0.1, -0.2, 0.3, 0.0}), w, Mode::kEval, nullptr);
    CHECK(out.shape() == std::vector<int>{1, cfg.action_dim});
}

TEST_CASE("policy forward contract violations") {
    auto cfg = small_policy_config();
    PolicyModel policy(cfg, 1);
    std::mt19937_64 rng(3);
    Window too_long = random_window(rng, cfg.context_k + 1, cfg.obs_dim, cfg.action_dim);
    CHECK_THROWS_AS(policy.forward(z_of({0, 0, 0, 0}), too_long, Mode::kEval, nullptr),
                    ContractError);
    Window ok = random_window(rng, 2, cfg.obs_dim, cfg.action_dim);
    CHECK_THROWS_AS(policy.forward(z_of({0, 0}), ok, Mode::kEval, nullptr), ContractError);
    Window bad_obs = random_window(rng, 2, cfg.obs_dim + 1, cfg.action_dim);
    CHECK_THROWS_AS(policy.forward(z_of({0, 0, 0, 0}), bad_obs, Mode::kEval, nullptr),
                    ContractError);
    CHECK_THROWS_AS(policy.forward(z_of({0, 0, 0, 0}), Window{}, Mode::kEval, nullptr),
                    ContractError);
}

TEST_CASE("causality: prediction at t ignores the action token at t") {
    auto cfg = small_policy_config();
    PolicyModel policy(cfg, 5);
    std::mt19937_64 rng(7);
    Window w = random_window(rng, 4, cfg.obs_dim, cfg.action_dim);
    Tensor z = z_of({0.3, 0.1, -0.4, 0.2});
    Tensor base = policy.forward(z, w, Mode::kEval, nullptr);

    // Perturb the final step's action; its prediction must not move.
    Window w2 = w;
    for (double& v : w2.back().action) v += 10.0;
    Tensor perturbed = policy.forward(z, w2, Mode::kEval, nullptr);
    const int last = base.rows() - 1;
    for (int j = 0; j < cfg.action_dim; ++j) {
        CHECK(base.values()[static_cast<std::size_t>(last) * cfg.action_dim + j] ==
              perturbed.values()[static_cast<std::size_t>(last) * cfg.action_dim + j]);
    }
}

TEST_CASE("causality: prediction at t invariant to any later token") {
    auto cfg = small_policy_config();
    PolicyModel policy(cfg, 5);
    std::mt19937_64 rng(8);
    Window w = random_window(rng, 5, cfg.obs_dim, cfg.action_dim);
    Tensor z = z_of({0.3, 0.1, -0.4, 0.2});
    Tensor base = policy.forward(z, w, Mode::kEval, nullptr);

    for (int t = 0; t < 4; ++t) {
        Window w2 = w;
        for (std::size_t later = static_cast<std::size_t>(t) + 1; later < w2.size(); ++later) {
            for (double& v : w2[later].obs) v = -v + 0.5;
            for (double& v : w2[later].action) v = -v - 0.5;
        }
        for (double& v : w2[static_cast<std::size_t>(t)].action) v += 3.0;  // same-step action is also later
        Tensor perturbed = policy.forward(z, w2, Mode::kEval, nullptr);
        for (int j = 0; j < cfg.action_dim; ++j) {
            CHECK(base.values()[static_cast<std::size_t>(t) * cfg.action_dim + j] ==
                  doctest::Approx(perturbed.values()[static_cast<std::size_t>(t) * cfg.action_dim + j])
                      .epsilon(1e-12));
        }
    }
}

TEST_CASE("window truncation: identical last-k steps give identical outputs") {
    auto cfg = small_policy_config();
    PolicyModel policy(cfg, 9);
    std::mt19937_64 rng(9);
    Window history_a = random_window(rng, 12, cfg.obs_dim, cfg.action_dim);
    Window history_b = random_window(rng, 20, cfg.obs_dim, cfg.action_dim);
    // Same trailing k steps, different earlier history.
    Window tail(history_a.end() - cfg.context_k, history_a.end());
    std::copy(tail.begin(), tail.end(), history_b.end() - cfg.context_k);

    Window wa(history_a.end() - cfg.context_k, history_a.end());
    Window wb(history_b.end() - cfg.context_k, history_b.end());
    Tensor z = z_of({0.1, 0.2, 0.3, 0.4});
    Tensor oa = policy.forward(z, wa, Mode::kEval, nullptr);
    Tensor ob = policy.forward(z, wb, Mode::kEval, nullptr);
    CHECK(oa.values() == ob.values());
}

TEST_CASE("encoder determinism in eval mode") {
    auto cfg = small_encoder_config();
    EncoderModel encoder(cfg, 11);
    std::mt19937_64 rng(12);
    Window traj = random_window(rng, 7, cfg.obs_dim, cfg.action_dim);
    Tensor a = encoder.forward(traj, Mode::kEval, nullptr);
    Tensor b = encoder.forward(traj, Mode::kEval, nullptr);
    CHECK(a.values() == b.values());
    CHECK(a.shape() == std::vector<int>{1, cfg.z_dim});
    CHECK_THROWS_AS(encoder.forward(Window{}, Mode::kEval, nullptr), ContractError);
}

TEST_CASE("masked actions cannot influence the encoder output") {
    auto cfg = small_encoder_config();
    EncoderModel encoder(cfg, 13);
    std::mt19937_64 rng(14);
    Window noisy = random_window(rng, 6, cfg.obs_dim, cfg.action_dim, /*masked=*/true);
    Window zeroed = noisy;
    for (auto& step : zeroed) step.action.assign(step.action.size(), 0.0);

    Tensor a = encoder.forward(noisy, Mode::kEval, nullptr);
    Tensor b = encoder.forward(zeroed, Mode::kEval, nullptr);
    CHECK(a.values() == b.values());
}

TEST_CASE("encoder output stays strictly inside the unit box on 1000 random trajectories") {
    auto cfg = small_encoder_config();
    EncoderModel encoder(cfg, 15);
    std::mt19937_64 rng(16);
    std::uniform_int_distribution<int> len_dist(1, 12);
    for (int i = 0; i < 1000; ++i) {
        Window traj = random_window(rng, len_dist(rng), cfg.obs_dim, cfg.action_dim);
        for (auto& step : traj) {
            for (double& v : step.obs) v *= 50.0;  // exaggerated inputs
            for (double& v : step.action) v *= 50.0;
        }
        Tensor z = encoder.forward(traj, Mode::kEval, nullptr);
        for (double v : z.values()) {
            CHECK(v > -1.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("greedy action argmax and clipping") {
    auto cfg = small_policy_config();
    cfg.action_dim = 2;
    PolicyModel policy(cfg, 17);
    std::mt19937_64 rng(18);
    Window w = random_window(rng, 2, cfg.obs_dim, cfg.action_dim);
    Tensor z = z_of({0, 0, 0, 0});

    ActionSpace discrete{ActionKind::kDiscreteOnehot, {}, {}};
    EnvAction a = greedy_action(policy, z, w, discrete);
    Tensor preds = policy.forward(z, w, Mode::kEval, nullptr);
    const std::size_t off = static_cast<std::size_t>(preds.rows() - 1) * cfg.action_dim;
    const int expect =
        preds.values()[off] >= preds.values()[off + 1] ? 0 : 1;
    CHECK(a.discrete_index == expect);
    CHECK(a.values[static_cast<std::size_t>(expect)] == 1.0);

    ActionSpace box{ActionKind::kContinuousBox, {-1.0, -1.0}, {1.0, 1.0}};
    EnvAction b = greedy_action(policy, z, w, box);
    for (std::size_t i = 0; i < b.values.size(); ++i) {
        CHECK(b.values[i] <= 1.0);
        CHECK(b.values[i] >= -1.0);
        const double raw = preds.values()[off + i];
        CHECK(b.values[i] == std::min(1.0, std::max(-1.0, raw)));
    }
}

TEST_CASE("every parameter of both models receives gradient on a random batch") {
    auto pcfg = small_policy_config();
    auto ecfg = small_encoder_config();
    PolicyModel policy(pcfg, 19);
    EncoderModel encoder(ecfg, 20);
    std::mt19937_64 rng(21);

    Tensor total;
    RngStream drop(5, 0);
    for (int b = 0; b < 4; ++b) {
        // Long windows make every timestep row reachable across the batch.
        Window w = random_window(rng, pcfg.context_k, pcfg.obs_dim, pcfg.action_dim, false,
                                 b * pcfg.context_k % (pcfg.max_timestep - pcfg.context_k));
        Tensor cond = encoder.forward(w, Mode::kTrain, &drop);
        Tensor preds = policy.forward(cond, w, Mode::kTrain, &drop);
        Tensor err = vector_norm(preds, NormKind::kL2);
        total = total.defined() ? add(total, err) : err;
    }
    backward(total);

    for (const auto& p : policy.named_params("policy")) {
        double norm = 0;
        for (double g : p.tensor.grad()) norm += g * g;
        INFO("policy param " << p.name);
        CHECK(norm > 0.0);
    }
    for (const auto& p : encoder.named_params("encoder")) {
        double norm = 0;
        for (double g : p.tensor.grad()) norm += g * g;
        INFO("encoder param " << p.name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("policy forward matches the straight-line reference") {
    auto cfg = small_policy_config();
    PolicyModel policy(cfg, 23);
    std::mt19937_64 rng(24);
    for (int i = 0; i < 5; ++i) {
        Window w = random_window(rng, 1 + i, cfg.obs_dim, cfg.action_dim);
        std::vector<double> z{0.2, -0.1, 0.4, static_cast<double>(i) / 10};
        Tensor out = policy.forward(Tensor::from_data({1, cfg.z_dim}, z), w, Mode::kEval, nullptr);
        auto ref = refimpl::ref_policy_forward(policy, z, w);
        for (std::size_t r = 0; r < ref.size(); ++r) {
            for (std::size_t c = 0; c < ref[r].size(); ++c) {
                CHECK(std::abs(out.values()[r * ref[r].size() + c] - ref[r][c]) < 1e-10);
            }
        }
    }
}

TEST_CASE("encoder forward matches the straight-line reference") {
    auto cfg = small_encoder_config();
    EncoderModel encoder(cfg, 25);
    std::mt19937_64 rng(26);
    for (int i = 0; i < 5; ++i) {
        Window traj = random_window(rng, 2 + 2 * i, cfg.obs_dim, cfg.action_dim, i % 2 == 1);
        Tensor out = encoder.forward(traj, Mode::kEval, nullptr);
        auto ref = refimpl::ref_encoder_forward(encoder, traj);
        for (std::size_t c = 0; c < ref.size(); ++c) {
            CHECK(std::abs(out.values()[c] - ref[c]) < 1e-10);
        }
    }
}

TEST_CASE("latent embedding stays clamped") {
    LatentEmbedding latent(8, 31);
    CHECK(latent.z.shape() == std::vector<int>{1, 8});
    for (double v : latent.z.values()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    latent.z.values()[0] = 3.0;
    latent.z.values()[1] = -2.5;
    latent.clamp_unit();
    CHECK(latent.z.values()[0] == 1.0);
    CHECK(latent.z.values()[1] == -1.0);
}

TEST_CASE("model checkpoints round trip and validate architecture") {
    auto cfg = small_policy_config();
    PolicyModel policy(cfg, 33);
    auto params = policy.named_params("policy");
    auto dir = std::filesystem::temp_directory_path() / "stitchformer_tests";
    std::filesystem::create_directories(dir);
    auto path = (dir / "policy.ckpt").string();
    save_checkpoint(path, params, cfg.meta("policy"));

    PolicyModel restored(cfg, 99);  // different init, then overwritten by load
    auto targets = restored.named_params("policy");
    auto result = load_checkpoint(path, targets);
    cfg.validate_meta(result.meta, "policy");
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(targets[i].tensor.values() == params[i].tensor.values());
    }

    PolicyConfig other = cfg;
    other.hidden = 32;
    CHECK_THROWS_AS(other.validate_meta(result.meta, "policy"), ContractError);
}

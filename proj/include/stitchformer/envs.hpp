#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stitchformer/models.hpp"

namespace stitchformer {

struct EnvSpec {
    std::string name;
    int obs_dim = 1;
    int action_dim = 2;
    ActionKind action_kind = ActionKind::kDiscreteOnehot;
    int horizon = 30;
    std::string goal_desc;
    std::string reward_desc;  // scoring only; never shown to the learner
    std::vector<double> action_low, action_high;
};

struct StepResult {
    std::vector<double> obs;
    bool done = false;
    double reward = 0.0;
    bool reached_goal = false;
};

// Deterministic episodic environment. reset(seed) draws the start state from
// the env's start region; transitions are a pure function of (state, action).
// Stepping a finished episode is a contract violation.
class Env {
  public:
    virtual ~Env() = default;
    virtual const EnvSpec& spec() const = 0;
    virtual std::vector<double> reset(std::uint64_t seed) = 0;
    // Generation hook: place the agent at an explicit valid observation.
    virtual std::vector<double> reset_to(const std::vector<double>& obs) = 0;
    virtual StepResult step(const std::vector<double>& action) = 0;
    virtual bool done() const = 0;
    virtual int t() const = 0;
};

std::vector<std::string> env_names();
std::unique_ptr<Env> make_env(const std::string& name);

ActionSpace action_space(const EnvSpec& spec);

// Stateless behavior: observation -> action values (one-hot for discrete).
using PolicyFn = std::function<std::vector<double>(const std::vector<double>& obs)>;

// Scripted shortest-route expert for the named environment.
PolicyFn make_expert_policy(const Env& env);

// Seeded uniform-random policy (per-call stream; deterministic given seed).
PolicyFn make_random_policy(const Env& env, std::uint64_t seed);

// Grid geometry shared by the discrete environments and their tests.
namespace fourrooms {
constexpr int kSize = 11;
bool is_wall(int row, int col);
}  // namespace fourrooms

}  // namespace stitchformer

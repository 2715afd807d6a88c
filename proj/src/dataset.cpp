#include "stitchformer/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <queue>
#include <random>
#include <sstream>

#include <json.hpp>

#include "stitchformer/digest.hpp"
#include "stitchformer/errors.hpp"

namespace stitchformer {

namespace {

using nlohmann::json;

constexpr double kStdFloor = 1e-8;
constexpr double kPointGoalX = 0.9;
constexpr double kPointGoalY = 0.1;
constexpr double kPointGoalRadius = 0.07;

// ---------------------------------------------------------------------------
// Env route probes used by plan validation and the completeness scan.

Region env_start_region(const std::string& env_name) {
    if (env_name == "chain-stitch") return {{{{0.0}, {2.0}}}};
    if (env_name == "four-rooms") return {{{{0.0, 0.0}, {2.0, 2.0}}}};
    if (env_name == "point-mass") return {{{{0.055, 0.055}, {0.145, 0.145}}}};
    throw ContractError("unknown environment '" + env_name + "'");
}

std::vector<double> goal_probe(const std::string& env_name) {
    if (env_name == "chain-stitch") return {9.0};
    if (env_name == "four-rooms") return {10.0, 10.0};
    if (env_name == "point-mass") return {kPointGoalX, kPointGoalY};
    throw ContractError("unknown environment '" + env_name + "'");
}

Region whole_space(const std::string& env_name) {
    if (env_name == "chain-stitch") return {{{{0.0}, {9.0}}}};
    if (env_name == "four-rooms") return {{{{0.0, 0.0}, {10.0, 10.0}}}};
    if (env_name == "point-mass") return {{{{0.02, 0.02}, {0.98, 0.98}}}};
    throw ContractError("unknown environment '" + env_name + "'");
}

bool is_goal_obs(const std::string& env_name, const std::vector<double>& obs) {
    const std::vector<double> goal = goal_probe(env_name);
    if (env_name == "point-mass") {
        return std::hypot(obs[0] - goal[0], obs[1] - goal[1]) <= kPointGoalRadius;
    }
    for (std::size_t i = 0; i < obs.size(); ++i) {
        if (std::lround(obs[i]) != std::lround(goal[i])) return false;
    }
    return true;
}

bool grid_env(const std::string& env_name) { return env_name != "point-mass"; }

bool cell_blocked(const std::string& env_name, const std::vector<double>& obs) {
    if (env_name == "four-rooms") {
        return fourrooms::is_wall(static_cast<int>(std::lround(obs[0])),
                                  static_cast<int>(std::lround(obs[1])));
    }
    return false;
}

}  // namespace

// ---------------------------------------------------------------------------

bool Region::contains(const std::vector<double>& obs) const {
    for (const Box& box : boxes) {
        bool inside = true;
        for (std::size_t i = 0; i < obs.size(); ++i) {
            if (obs[i] < box.low[i] - 1e-9 || obs[i] > box.high[i] + 1e-9) {
                inside = false;
                break;
            }
        }
        if (inside) return true;
    }
    return false;
}

bool Region::overlaps(const Region& other) const {
    for (const Box& a : boxes) {
        for (const Box& b : other.boxes) {
            bool meet = true;
            for (std::size_t i = 0; i < a.low.size(); ++i) {
                if (a.high[i] < b.low[i] - 1e-9 || b.high[i] < a.low[i] - 1e-9) {
                    meet = false;
                    break;
                }
            }
            if (meet) return true;
        }
    }
    return false;
}

void SegmentPlan::validate(const Env& env) const {
    const std::string& name = env.spec().name;
    if (segments.empty()) throw GenerationError("segment plan has no segments");
    if (noise_fraction < 0.0 || noise_fraction >= 1.0) {
        throw GenerationError("noise fraction must lie in [0,1)");
    }
    const Region start = env_start_region(name);
    const std::vector<double> goal = goal_probe(name);

    bool start_covered = false;
    bool goal_covered = false;
    for (const Segment& seg : segments) {
        const bool has_start = seg.region.overlaps(start);
        const bool has_goal = seg.region.contains(goal);
        if (has_start && has_goal) {
            throw GenerationError("segment '" + seg.name +
                                  "' spans the full start-to-goal route; no stitching is left");
        }
        if (seg.fraction <= 0.0) throw GenerationError("segment fraction must be positive");
        if (seg.step_cap < 1) throw GenerationError("segment step cap must be >= 1");
        if (!seg.forward_target.empty() && !seg.region.contains(seg.forward_target)) {
            throw GenerationError("segment '" + seg.name + "': forward target outside region");
        }
        if (!seg.backward_target.empty() && !seg.region.contains(seg.backward_target)) {
            throw GenerationError("segment '" + seg.name + "': backward target outside region");
        }
        start_covered = start_covered || has_start;
        goal_covered = goal_covered || has_goal;
    }
    if (!start_covered) throw GenerationError("no segment covers the start region");
    if (!goal_covered) throw GenerationError("no segment covers the goal");
    for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
        if (!segments[i].region.overlaps(segments[i + 1].region)) {
            throw GenerationError("segments '" + segments[i].name + "' and '" +
                                  segments[i + 1].name + "' do not overlap; route is broken");
        }
    }
}

SegmentPlan default_segment_plan(const std::string& env_name) {
    SegmentPlan plan;
    if (env_name == "chain-stitch") {
        plan.segments.push_back({"seg-left", {{{{0.0}, {5.0}}}}, {{{{0.0}, {2.0}}}}, 0.5, 15,
                                 {5.0}, {0.0}});
        plan.segments.push_back({"seg-right", {{{{4.0}, {9.0}}}}, {{{{4.0}, {6.0}}}}, 0.5, 15,
                                 {9.0}, {4.0}});
        plan.noise_fraction = 0.0;
        return plan;
    }
    if (env_name == "four-rooms") {
        Region leg1{{
            {{0.0, 0.0}, {4.0, 4.0}},    // first room
            {{5.0, 2.0}, {5.0, 2.0}},    // doorway down
            {{6.0, 0.0}, {10.0, 4.0}},   // third room
            {{8.0, 5.0}, {8.0, 5.0}},    // doorway east
        }};
        Region leg2{{
            {{6.0, 0.0}, {10.0, 4.0}},
            {{8.0, 5.0}, {8.0, 5.0}},
            {{6.0, 6.0}, {10.0, 10.0}},  // goal room
        }};
        plan.segments.push_back({"leg-start", leg1, {{{{0.0, 0.0}, {2.0, 2.0}}}}, 0.45, 40,
                                 {8.0, 5.0}, {0.0, 0.0}});
        plan.segments.push_back({"leg-goal", leg2, {{{{6.0, 0.0}, {10.0, 4.0}}}}, 0.45, 40,
                                 {10.0, 10.0}, {6.0, 0.0}});
        plan.noise_fraction = 0.1;
        plan.noise_step_cap = 40;
        return plan;
    }
    if (env_name == "point-mass") {
        Region left{{
            {{0.02, 0.02}, {0.55, 0.98}},
            {{0.02, 0.72}, {0.98, 0.98}},  // strip above the wall
        }};
        Region right{{
            {{0.45, 0.02}, {0.98, 0.98}},
        }};
        plan.segments.push_back({"seg-left", left, {{{{0.055, 0.055}, {0.145, 0.145}}}}, 0.5, 30,
                                 {0.55, 0.8}, {0.1, 0.1}});
        plan.segments.push_back({"seg-right", right, {{{{0.45, 0.55}, {0.65, 0.9}}}}, 0.5, 30,
                                 {kPointGoalX, kPointGoalY}, {0.55, 0.85}});
        plan.noise_fraction = 0.0;
        return plan;
    }
    throw ContractError("unknown environment '" + env_name + "'");
}

// ---------------------------------------------------------------------------
// Behavior walks.

namespace {

std::vector<double> sample_in_region(const std::string& env_name, const Region& region,
                                     std::mt19937_64& rng, const Region* exclude = nullptr) {
    std::uniform_int_distribution<std::size_t> box_pick(0, region.boxes.size() - 1);
    for (int attempt = 0; attempt < 2000; ++attempt) {
        const Region::Box& box = region.boxes[box_pick(rng)];
        std::vector<double> obs(box.low.size());
        for (std::size_t i = 0; i < obs.size(); ++i) {
            if (grid_env(env_name)) {
                std::uniform_int_distribution<int> cell(static_cast<int>(box.low[i]),
                                                        static_cast<int>(box.high[i]));
                obs[i] = cell(rng);
            } else {
                std::uniform_real_distribution<double> point(box.low[i], box.high[i]);
                obs[i] = point(rng);
            }
        }
        if (cell_blocked(env_name, obs)) continue;
        if (is_goal_obs(env_name, obs)) continue;
        if (exclude != nullptr && exclude->contains(obs)) continue;
        return obs;
    }
    throw GenerationError("could not sample a valid start in region for " + env_name);
}

std::vector<double> onehot_action(int index, int dim) {
    std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
    v[static_cast<std::size_t>(index)] = 1.0;
    return v;
}

// Region-restricted BFS distances to the target cell (four-rooms walks).
std::vector<int> region_bfs(const Region& region, int target_row, int target_col) {
    constexpr int n = fourrooms::kSize;
    std::vector<int> dist(n * n, -1);
    auto inside = [&](int r, int c) {
        return !fourrooms::is_wall(r, c) &&
               region.contains({static_cast<double>(r), static_cast<double>(c)});
    };
    if (!inside(target_row, target_col)) return dist;
    std::queue<std::pair<int, int>> queue;
    dist[static_cast<std::size_t>(target_row * n + target_col)] = 0;
    queue.push({target_row, target_col});
    const int moves[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    while (!queue.empty()) {
        auto [r, c] = queue.front();
        queue.pop();
        for (const auto& mv : moves) {
            const int nr = r + mv[0];
            const int nc = c + mv[1];
            if (nr < 0 || nr >= n || nc < 0 || nc >= n || !inside(nr, nc)) continue;
            int& d = dist[static_cast<std::size_t>(nr * n + nc)];
            if (d < 0) {
                d = dist[static_cast<std::size_t>(r * n + c)] + 1;
                queue.push({nr, nc});
            }
        }
    }
    return dist;
}

struct WalkPolicy {
    std::string env_name;
    Region region;
    std::vector<double> target;
    double drift_p;
    std::vector<int> bfs;  // four-rooms only

    std::vector<double> act(const std::vector<double>& obs, std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        const bool drift = coin(rng) < drift_p;

        if (env_name == "chain-stitch") {
            const int cell = static_cast<int>(std::lround(obs[0]));
            const int target_cell = static_cast<int>(std::lround(target[0]));
            int dir;
            if (drift) {
                dir = target_cell >= cell ? 1 : 0;
            } else {
                dir = static_cast<int>(rng() % 2);
            }
            // Stay inside the segment: flip a move that would leave it.
            const int next = cell + (dir == 1 ? 1 : -1);
            if (!region.contains({static_cast<double>(next)})) dir = 1 - dir;
            return onehot_action(dir, 2);
        }

        if (env_name == "four-rooms") {
            const int row = static_cast<int>(std::lround(obs[0]));
            const int col = static_cast<int>(std::lround(obs[1]));
            const int moves[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
            std::vector<int> valid;
            for (int a = 0; a < 4; ++a) {
                const int nr = row + moves[a][0];
                const int nc = col + moves[a][1];
                if (fourrooms::is_wall(nr, nc)) continue;
                if (!region.contains({static_cast<double>(nr), static_cast<double>(nc)})) continue;
                valid.push_back(a);
            }
            if (valid.empty()) return onehot_action(0, 4);  // env blocks; effectively stay
            if (drift && !bfs.empty()) {
                int best = valid[0];
                int best_d = std::numeric_limits<int>::max();
                for (int a : valid) {
                    const int nr = row + moves[a][0];
                    const int nc = col + moves[a][1];
                    const int d = bfs[static_cast<std::size_t>(nr * fourrooms::kSize + nc)];
                    if (d >= 0 && d < best_d) {
                        best_d = d;
                        best = a;
                    }
                }
                return onehot_action(best, 4);
            }
            return onehot_action(valid[rng() % valid.size()], 4);
        }

        // point-mass
        double tx = target[0];
        double ty = target[1];
        if (drift) {
            // Route around the inner wall the same way any sensible walker
            // would: cross sides through the strip above it.
            const double x = obs[0], y = obs[1];
            const bool crossing = (x < 0.5 && tx > 0.5) || (x > 0.5 && tx < 0.5);
            if (crossing && y < 0.72) {
                tx = x < 0.5 ? 0.4 : 0.6;
                ty = 0.8;
            }
            std::vector<double> action{std::clamp(tx - obs[0], -0.1, 0.1),
                                       std::clamp(ty - obs[1], -0.1, 0.1)};
            return action;
        }
        std::uniform_real_distribution<double> vel(-0.1, 0.1);
        std::vector<double> action{vel(rng), vel(rng)};
        // Keep the random motion inside the segment.
        std::vector<double> next{obs[0] + action[0], obs[1] + action[1]};
        if (!region.contains(next)) {
            action[0] = -action[0];
            action[1] = -action[1];
        }
        return action;
    }

    bool reached(const std::vector<double>& obs) const {
        if (env_name == "point-mass") {
            return std::hypot(obs[0] - target[0], obs[1] - target[1]) <= 0.07;
        }
        for (std::size_t i = 0; i < obs.size(); ++i) {
            if (std::lround(obs[i]) != std::lround(target[i])) return false;
        }
        return true;
    }
};

Trajectory roll_behavior(Env& env, const WalkPolicy& policy, const std::vector<double>& start,
                         int step_cap, std::uint64_t episode_seed, const std::string& behavior_id,
                         std::mt19937_64& rng) {
    Trajectory traj;
    traj.env_name = env.spec().name;
    traj.seed = episode_seed;
    traj.behavior_id = behavior_id;

    std::vector<double> obs = env.reset_to(start);
    for (int step = 0; step < step_cap; ++step) {
        const std::vector<double> action = policy.act(obs, rng);
        TrajStep record;
        record.obs = obs;
        record.action = action;
        record.action_masked = false;
        StepResult result = env.step(action);
        record.reward = result.reward;
        traj.episode_return += result.reward;
        traj.steps.push_back(std::move(record));
        obs = result.obs;
        if (result.done || policy.reached(obs)) break;
    }
    return traj;
}

}  // namespace

std::vector<Trajectory> generate_behavior_dataset(Env& env, const SegmentPlan& plan, int episodes,
                                                  std::uint64_t seed, double behavior_noise) {
    if (episodes < 1) throw ContractError("generate_behavior_dataset: episodes must be >= 1");
    if (behavior_noise < 0.0 || behavior_noise > 1.0) {
        throw ContractError("generate_behavior_dataset: behavior_noise must lie in [0,1]");
    }
    plan.validate(env);
    const std::string& name = env.spec().name;
    std::mt19937_64 rng(seed);

    // Cumulative segment pick table over the non-noise share.
    double total_fraction = 0.0;
    for (const Segment& seg : plan.segments) total_fraction += seg.fraction;

    const Region start_region = env_start_region(name);
    const Region noise_region = whole_space(name);
    const double drift_lo = std::max(0.05, 0.9 - 1.2 * behavior_noise);
    const double drift_hi = std::min(0.95, 1.0 - 0.3 * behavior_noise);

    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(episodes));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int e = 0; e < episodes; ++e) {
        const std::uint64_t episode_seed = mix64(seed ^ static_cast<std::uint64_t>(e) * 0x51ed);
        std::uniform_real_distribution<double> drift_dist(drift_lo, drift_hi);
        const double drift_p = drift_dist(rng);

        if (coin(rng) < plan.noise_fraction) {
            // Free-roaming noise walks; never started at the environment start.
            WalkPolicy policy{name, noise_region, goal_probe(name), 0.0, {}};
            const std::vector<double> start =
                sample_in_region(name, noise_region, rng, &start_region);
            out.push_back(roll_behavior(env, policy, start, plan.noise_step_cap, episode_seed,
                                        "noise", rng));
            continue;
        }

        double pick = coin(rng) * total_fraction;
        const Segment* segment = &plan.segments.back();
        for (const Segment& seg : plan.segments) {
            if (pick < seg.fraction) {
                segment = &seg;
                break;
            }
            pick -= seg.fraction;
        }

        // Forward episodes progress along the route from the segment entry;
        // backward episodes retreat from anywhere in the segment. A small
        // share of targets is resampled freely for coverage.
        const bool forward = coin(rng) < plan.forward_fraction;
        const std::vector<double> start =
            forward ? sample_in_region(name, segment->start_region, rng)
                    : sample_in_region(name, segment->region, rng);
        std::vector<double> target = forward ? segment->forward_target : segment->backward_target;
        if (target.empty() || coin(rng) < 0.2) {
            target = sample_in_region(name, segment->region, rng);
        }
        WalkPolicy policy{name, segment->region, target, drift_p, {}};
        if (name == "four-rooms") {
            policy.bfs = region_bfs(segment->region, static_cast<int>(std::lround(target[0])),
                                    static_cast<int>(std::lround(target[1])));
        }
        std::ostringstream id;
        id << segment->name << (forward ? "|fwd" : "|bwd")
           << "|drift=" << std::round(drift_p * 100) / 100;
        out.push_back(roll_behavior(env, policy, start, segment->step_cap, episode_seed, id.str(), rng));
    }

    // Machine-check the stitching precondition rather than assuming it.
    for (const Trajectory& traj : out) {
        if (is_start_to_goal_complete(env, traj)) {
            throw GenerationError("generated episode covers the full start-to-goal route");
        }
    }
    return out;
}

std::vector<Trajectory> generate_expert_demos(Env& env, int count, std::uint64_t seed,
                                              bool observation_only) {
    if (count < 1) throw ContractError("generate_expert_demos: count must be >= 1");
    PolicyFn expert = make_expert_policy(env);
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const std::uint64_t episode_seed = mix64(seed + static_cast<std::uint64_t>(i));
        Trajectory traj;
        traj.env_name = env.spec().name;
        traj.seed = episode_seed;
        traj.behavior_id = observation_only ? "expert-obs" : "expert";
        std::vector<double> obs = env.reset(episode_seed);
        while (!env.done()) {
            const std::vector<double> action = expert(obs);
            TrajStep record;
            record.obs = obs;
            record.action = action;
            record.action_masked = observation_only;
            StepResult result = env.step(action);
            record.reward = result.reward;
            traj.episode_return += result.reward;
            traj.steps.push_back(std::move(record));
            obs = result.obs;
        }
        out.push_back(std::move(traj));
    }
    return out;
}

bool is_start_to_goal_complete(const Env& env, const Trajectory& episode) {
    if (episode.steps.empty()) return false;
    const std::string& name = env.spec().name;
    if (!env_start_region(name).contains(episode.steps.front().obs)) return false;
    for (const TrajStep& step : episode.steps) {
        if (step.reward >= 1.0) return true;
    }
    return false;
}

bool stitching_precondition_holds(const Dataset& dataset) {
    auto env = make_env(dataset.manifest.env.name);
    for (const Trajectory& traj : dataset.subopt) {
        if (is_start_to_goal_complete(*env, traj)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Manifest, persistence, and training views.

std::vector<double> NormStats::apply(const std::vector<double>& obs) const {
    std::vector<double> out(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
        out[i] = (obs[i] - mean[i]) / stddev[i];
    }
    return out;
}

std::string decimal_string(double value) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) throw NumericError("decimal_string: conversion failed");
    return std::string(buf, ptr);
}

double parse_decimal(const std::string& text) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw FormatError("bad decimal number '" + text + "'");
    }
    return value;
}

namespace {

json numbers_to_json(const std::vector<double>& values) {
    json arr = json::array();
    for (double v : values) arr.push_back(decimal_string(v));
    return arr;
}

std::vector<double> numbers_from_json(const json& arr) {
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& v : arr) out.push_back(round_to_precision(parse_decimal(v.get<std::string>())));
    return out;
}

std::string episode_line(const Trajectory& traj, const char* split) {
    json j;
    j["split"] = split;
    j["behavior"] = traj.behavior_id;
    j["seed"] = traj.seed;
    j["return"] = decimal_string(traj.episode_return);
    json steps = json::array();
    for (const TrajStep& step : traj.steps) {
        json s;
        s["o"] = numbers_to_json(step.obs);
        s["a"] = numbers_to_json(step.action);
        s["m"] = step.action_masked;
        s["r"] = decimal_string(step.reward);
        steps.push_back(std::move(s));
    }
    j["steps"] = std::move(steps);
    return j.dump();
}

Trajectory episode_from_line(const std::string& line, const std::string& env_name,
                             std::string* split_out) {
    json j = json::parse(line);
    Trajectory traj;
    traj.env_name = env_name;
    traj.behavior_id = j.at("behavior").get<std::string>();
    traj.seed = j.at("seed").get<std::uint64_t>();
    traj.episode_return = round_to_precision(parse_decimal(j.at("return").get<std::string>()));
    for (const auto& s : j.at("steps")) {
        TrajStep step;
        step.obs = numbers_from_json(s.at("o"));
        step.action = numbers_from_json(s.at("a"));
        step.action_masked = s.at("m").get<bool>();
        step.reward = round_to_precision(parse_decimal(s.at("r").get<std::string>()));
        traj.steps.push_back(std::move(step));
    }
    *split_out = j.at("split").get<std::string>();
    return traj;
}

std::string hash_episode_lines(const std::vector<std::string>& lines) {
    std::string payload;
    for (const std::string& line : lines) {
        payload += line;
        payload += '\n';
    }
    return sha256_hex(payload);
}

std::vector<std::string> dataset_episode_lines(const Dataset& dataset) {
    std::vector<std::string> lines;
    lines.reserve(dataset.subopt.size() + dataset.expert.size());
    for (const Trajectory& traj : dataset.subopt) lines.push_back(episode_line(traj, "subopt"));
    for (const Trajectory& traj : dataset.expert) lines.push_back(episode_line(traj, "expert"));
    return lines;
}

json env_spec_to_json(const EnvSpec& spec) {
    json j;
    j["name"] = spec.name;
    j["obs_dim"] = spec.obs_dim;
    j["action_dim"] = spec.action_dim;
    j["action_kind"] = spec.action_kind == ActionKind::kDiscreteOnehot ? "discrete-onehot"
                                                                       : "continuous-box";
    j["horizon"] = spec.horizon;
    j["goal"] = spec.goal_desc;
    j["reward"] = spec.reward_desc;
    j["action_low"] = numbers_to_json(spec.action_low);
    j["action_high"] = numbers_to_json(spec.action_high);
    return j;
}

}  // namespace

Dataset make_dataset(const Env& env, std::vector<Trajectory> subopt,
                     std::vector<Trajectory> expert) {
    if (subopt.empty()) throw ContractError("make_dataset: sub-optimal split is empty");
    const EnvSpec& spec = env.spec();

    NormStats stats;
    stats.mean.assign(static_cast<std::size_t>(spec.obs_dim), 0.0);
    stats.stddev.assign(static_cast<std::size_t>(spec.obs_dim), 0.0);
    std::int64_t n = 0;
    for (const Trajectory& traj : subopt) {
        for (const TrajStep& step : traj.steps) {
            for (int d = 0; d < spec.obs_dim; ++d) stats.mean[static_cast<std::size_t>(d)] += step.obs[static_cast<std::size_t>(d)];
            ++n;
        }
    }
    if (n == 0) throw ContractError("make_dataset: sub-optimal split has no steps");
    for (double& m : stats.mean) m /= static_cast<double>(n);
    for (const Trajectory& traj : subopt) {
        for (const TrajStep& step : traj.steps) {
            for (int d = 0; d < spec.obs_dim; ++d) {
                const double delta = step.obs[static_cast<std::size_t>(d)] - stats.mean[static_cast<std::size_t>(d)];
                stats.stddev[static_cast<std::size_t>(d)] += delta * delta;
            }
        }
    }
    for (double& s : stats.stddev) s = std::max(std::sqrt(s / static_cast<double>(n)), kStdFloor);

    Dataset dataset;
    dataset.manifest.format_version = 1;
    dataset.manifest.env = spec;
    dataset.manifest.stats = stats;
    dataset.manifest.subopt_count = static_cast<int>(subopt.size());
    dataset.manifest.expert_count = static_cast<int>(expert.size());
    dataset.subopt = std::move(subopt);
    dataset.expert = std::move(expert);
    dataset.manifest.content_hash = hash_episode_lines(dataset_episode_lines(dataset));
    return dataset;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
    json manifest;
    manifest["format_version"] = dataset.manifest.format_version;
    manifest["env"] = env_spec_to_json(dataset.manifest.env);
    manifest["stats"]["mean"] = numbers_to_json(dataset.manifest.stats.mean);
    manifest["stats"]["std"] = numbers_to_json(dataset.manifest.stats.stddev);
    manifest["counts"]["subopt"] = dataset.manifest.subopt_count;
    manifest["counts"]["expert"] = dataset.manifest.expert_count;
    manifest["content_hash"] = dataset.manifest.content_hash;

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("dataset " + path + ": cannot open for writing");
    out << manifest.dump() << "\n";
    for (const std::string& line : dataset_episode_lines(dataset)) out << line << "\n";
    if (!out) throw FormatError("dataset " + path + ": write failed");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("dataset " + path + ": cannot open");
    std::string manifest_line;
    if (!std::getline(in, manifest_line)) {
        throw CorruptionError("dataset " + path + ": missing manifest line");
    }
    json manifest;
    try {
        manifest = json::parse(manifest_line);
    } catch (const json::exception&) {
        throw FormatError("dataset " + path + ": manifest is not valid JSON");
    }
    const int version = manifest.at("format_version").get<int>();
    if (version != 1) {
        throw FormatError("dataset " + path + ": unsupported format version " +
                          std::to_string(version));
    }

    Dataset dataset;
    dataset.manifest.format_version = version;
    const json& env_json = manifest.at("env");
    const std::string env_name = env_json.at("name").get<std::string>();
    auto env = make_env(env_name);  // throws for unknown names
    dataset.manifest.env = env->spec();
    if (env_json.at("obs_dim").get<int>() != dataset.manifest.env.obs_dim ||
        env_json.at("action_dim").get<int>() != dataset.manifest.env.action_dim ||
        env_json.at("horizon").get<int>() != dataset.manifest.env.horizon) {
        throw FormatError("dataset " + path + ": env spec does not match '" + env_name + "'");
    }
    dataset.manifest.stats.mean = numbers_from_json(manifest.at("stats").at("mean"));
    dataset.manifest.stats.stddev = numbers_from_json(manifest.at("stats").at("std"));
    dataset.manifest.subopt_count = manifest.at("counts").at("subopt").get<int>();
    dataset.manifest.expert_count = manifest.at("counts").at("expert").get<int>();
    dataset.manifest.content_hash = manifest.at("content_hash").get<std::string>();

    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    const std::size_t expected =
        static_cast<std::size_t>(dataset.manifest.subopt_count) +
        static_cast<std::size_t>(dataset.manifest.expert_count);
    if (lines.size() != expected) {
        throw CorruptionError("dataset " + path + ": expected " + std::to_string(expected) +
                              " episodes, found " + std::to_string(lines.size()));
    }
    if (hash_episode_lines(lines) != dataset.manifest.content_hash) {
        throw CorruptionError("dataset " + path + ": content hash mismatch");
    }

    for (const std::string& episode : lines) {
        std::string split;
        Trajectory traj = episode_from_line(episode, env_name, &split);
        if (split == "subopt") {
            dataset.subopt.push_back(std::move(traj));
        } else if (split == "expert") {
            dataset.expert.push_back(std::move(traj));
        } else {
            throw FormatError("dataset " + path + ": unknown split '" + split + "'");
        }
    }
    if (global_precision() == Precision::kF32) {
        dataset.manifest.precision_note = "values converted from decimal to f32 on load";
    }
    return dataset;
}

TrainingData make_training_data(const Dataset& dataset) {
    const NormStats& stats = dataset.manifest.stats;
    auto to_window = [&](const Trajectory& traj) {
        Window window;
        window.reserve(traj.steps.size());
        for (std::size_t i = 0; i < traj.steps.size(); ++i) {
            StepData step;
            step.obs = stats.apply(traj.steps[i].obs);
            step.action = traj.steps[i].action;
            step.action_masked = traj.steps[i].action_masked;
            step.timestep = static_cast<int>(i);
            window.push_back(std::move(step));
        }
        return window;
    };
    TrainingData data;
    for (const Trajectory& traj : dataset.expert) data.expert.push_back(to_window(traj));
    for (const Trajectory& traj : dataset.subopt) data.subopt.push_back(to_window(traj));
    return data;
}

}  // namespace stitchformer

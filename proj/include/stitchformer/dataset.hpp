#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stitchformer/envs.hpp"
#include "stitchformer/objectives.hpp"

namespace stitchformer {

struct TrajStep {
    std::vector<double> obs;
    std::vector<double> action;
    bool action_masked = false;
    double reward = 0.0;  // kept on disk for scoring; stripped before training
};

struct Trajectory {
    std::vector<TrajStep> steps;
    std::string env_name;
    std::uint64_t seed = 0;
    std::string behavior_id;
    double episode_return = 0.0;
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    std::vector<double> apply(const std::vector<double>& obs) const;
};

struct DatasetManifest {
    int format_version = 1;
    EnvSpec env;
    NormStats stats;  // computed over the sub-optimal split only
    int subopt_count = 0;
    int expert_count = 0;
    std::string content_hash;
    std::string precision_note;  // set when values were converted on load
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Trajectory> subopt;
    std::vector<Trajectory> expert;
};

// Axis-aligned region in raw observation space (union of boxes, inclusive).
struct Region {
    struct Box {
        std::vector<double> low, high;
    };
    std::vector<Box> boxes;

    bool contains(const std::vector<double>& obs) const;
    bool overlaps(const Region& other) const;
};

struct Segment {
    std::string name;
    Region region;        // the walk never leaves this region
    Region start_region;  // forward-mode episode starts are drawn here
    double fraction = 0.5;
    int step_cap = 40;
    // Directional modes: forward walks head toward the goal side of the
    // segment, backward walks retreat toward its entry side (starting
    // anywhere in the region). The backward majority keeps the marginal
    // action distribution from encoding the route.
    std::vector<double> forward_target;
    std::vector<double> backward_target;
};

// Route plan: overlapping segments none of which spans start-to-goal, plus an
// optional fraction of free-roaming noise episodes.
struct SegmentPlan {
    std::vector<Segment> segments;
    double noise_fraction = 0.0;
    int noise_step_cap = 40;
    double forward_fraction = 0.35;  // share of goal-directed episodes

    void validate(const Env& env) const;  // throws GenerationError when unsatisfiable
};

SegmentPlan default_segment_plan(const std::string& env_name);

// Segment-confined drift walks with a per-episode quality mode drawn from the
// behavior-noise knob. Verifies at generation time that no episode both
// starts in the environment's start region and reaches the goal.
std::vector<Trajectory> generate_behavior_dataset(Env& env, const SegmentPlan& plan, int episodes,
                                                  std::uint64_t seed, double behavior_noise = 0.5);

// Scripted shortest-route demonstrations; with observation_only the actions
// are recorded but masked (LfO).
std::vector<Trajectory> generate_expert_demos(Env& env, int count, std::uint64_t seed,
                                              bool observation_only);

// Assembles the manifest (normalization stats over the sub-optimal split,
// counts, content hash) for the given splits.
Dataset make_dataset(const Env& env, std::vector<Trajectory> subopt, std::vector<Trajectory> expert);

// JSON-lines file: manifest line followed by one episode per line, numbers
// as decimal strings. Content hash is the SHA-256 of the episode lines.
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

// True when no sub-optimal episode both starts at the environment start and
// reaches the goal.
bool stitching_precondition_holds(const Dataset& dataset);

// Whether this episode violates the precondition.
bool is_start_to_goal_complete(const Env& env, const Trajectory& episode);

// Normalized, reward-free training views (expert + sub-optimal windows).
TrainingData make_training_data(const Dataset& dataset);

// Decimal-string number round-trip helpers used by the file format.
std::string decimal_string(double value);
double parse_decimal(const std::string& text);

}  // namespace stitchformer

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stitchformer/objectives.hpp"

namespace stitchformer {

// Fully resolved run configuration. Resolution order: built-in defaults,
// then the config file, then command-line flags. Unknown keys are rejected
// with the field name.
struct RunConfig {
    std::string command;

    std::string env_name = "chain-stitch";
    std::string dataset_path;
    std::string out_dir = "out";
    std::string checkpoint_path;
    std::string input_path;   // export-metrics source
    std::string config_path;  // where this config came from, if any

    int demo_count = 5;
    std::string mode = "lfd";  // lfd | lfo
    double lambda1 = 1.0;
    double lambda2 = 0.5;
    std::string norm = "l2";  // l1 | l2
    double clip_m = 10.0;

    int policy_layers = 3;
    int policy_heads = 2;
    int encoder_layers = 3;
    int encoder_heads = 8;
    int hidden = 64;
    int z_dim = 16;
    int context_k = 20;
    double dropout = 0.1;

    double lr = 1.2e-4;
    double weight_decay = 1e-4;
    std::int64_t warmup_steps = 10000;
    int batch_size = 16;
    int batch_groups = 32;
    int epochs = 20;

    int episodes = 500;         // gen-data sub-optimal episode count
    double behavior_noise = 0.5;
    int eval_episodes = 50;
    std::string demo_sweep;     // e.g. "1,5,10,20"

    std::uint64_t seed = 0;
    std::string precision = "f64";  // f32 | f64
    int threads = 1;
    int instances = 100;  // verify-theorem

    void validate() const;  // throws UsageError naming the offending field
    TrainOptions train_options() const;
    LossConfig loss_config() const;
    ConditioningMode conditioning_mode() const;

    // Flat key=value form; parsing it back reproduces this config.
    std::string echo() const;
};

// argv-style parsing (argv[0] is the command name, not the binary). A
// `--config FILE` flag loads key=value pairs first; remaining flags override.
// The STITCHFORMER_SEED environment variable is the seed default of last
// resort.
RunConfig parse_config(const std::vector<std::string>& args);

// Applies one key=value pair; shared by the file loader and flag parser.
void apply_config_key(RunConfig& config, const std::string& key, const std::string& value);

// Runs the configured command. Returns the process exit status; failures
// print a machine-readable JSON error line to err.
int dispatch(const RunConfig& config, std::ostream& out, std::ostream& err);

// Top-level entry used by the binary: parse + dispatch + error reporting.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stitchformer

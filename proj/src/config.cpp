#include "stitchformer/config.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "stitchformer/dataset.hpp"
#include "stitchformer/errors.hpp"
#include "stitchformer/eval.hpp"
#include "stitchformer/theorem.hpp"

namespace stitchformer {

namespace {

using nlohmann::json;

const char* kCommands[] = {"gen-data", "train", "eval", "stitch-exp", "verify-theorem",
                           "export-metrics"};

int parse_int(const std::string& key, const std::string& value) {
    int out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw UsageError("field '" + key + "': expected an integer, got '" + value + "'");
    }
    return out;
}

std::int64_t parse_i64(const std::string& key, const std::string& value) {
    std::int64_t out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw UsageError("field '" + key + "': expected an integer, got '" + value + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw UsageError("field '" + key + "': expected an unsigned integer, got '" + value + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    double out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw UsageError("field '" + key + "': expected a number, got '" + value + "'");
    }
    return out;
}

void require_field(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw UsageError("field '" + field + "': " + what);
}

}  // namespace

void apply_config_key(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "env") c.env_name = value;
    else if (key == "dataset") c.dataset_path = value;
    else if (key == "out") c.out_dir = value;
    else if (key == "checkpoint") c.checkpoint_path = value;
    else if (key == "input") c.input_path = value;
    else if (key == "demos") c.demo_count = parse_int(key, value);
    else if (key == "mode") c.mode = value;
    else if (key == "lambda1") c.lambda1 = parse_double(key, value);
    else if (key == "lambda2") c.lambda2 = parse_double(key, value);
    else if (key == "norm") c.norm = value;
    else if (key == "clip-m") c.clip_m = parse_double(key, value);
    else if (key == "layers") c.policy_layers = parse_int(key, value);
    else if (key == "heads") c.policy_heads = parse_int(key, value);
    else if (key == "enc-layers") c.encoder_layers = parse_int(key, value);
    else if (key == "enc-heads") c.encoder_heads = parse_int(key, value);
    else if (key == "hidden") c.hidden = parse_int(key, value);
    else if (key == "z-dim") c.z_dim = parse_int(key, value);
    else if (key == "k") c.context_k = parse_int(key, value);
    else if (key == "dropout") c.dropout = parse_double(key, value);
    else if (key == "lr") c.lr = parse_double(key, value);
    else if (key == "weight-decay") c.weight_decay = parse_double(key, value);
    else if (key == "warmup") c.warmup_steps = parse_i64(key, value);
    else if (key == "batch") c.batch_size = parse_int(key, value);
    else if (key == "groups") c.batch_groups = parse_int(key, value);
    else if (key == "epochs") c.epochs = parse_int(key, value);
    else if (key == "episodes") c.episodes = parse_int(key, value);
    else if (key == "noise") c.behavior_noise = parse_double(key, value);
    else if (key == "eval-episodes") c.eval_episodes = parse_int(key, value);
    else if (key == "demo-sweep") c.demo_sweep = value;
    else if (key == "seed") c.seed = parse_u64(key, value);
    else if (key == "precision") c.precision = value;
    else if (key == "threads") c.threads = parse_int(key, value);
    else if (key == "instances") c.instances = parse_int(key, value);
    else throw UsageError("unknown field '" + key + "'");
}

void RunConfig::validate() const {
    bool known = false;
    for (const char* cmd : kCommands) known = known || command == cmd;
    require_field(known, "command",
                  "must be one of gen-data|train|eval|stitch-exp|verify-theorem|export-metrics");

    bool env_known = false;
    for (const std::string& name : env_names()) env_known = env_known || name == env_name;
    require_field(env_known, "env", "unknown environment '" + env_name + "'");
    require_field(mode == "lfd" || mode == "lfo", "mode", "must be lfd or lfo");
    require_field(norm == "l1" || norm == "l2", "norm", "must be l1 or l2");
    require_field(precision == "f32" || precision == "f64", "precision", "must be f32 or f64");
    require_field(lambda1 > 0.0, "lambda1", "must be > 0");
    require_field(lambda2 >= 0.0, "lambda2", "must be >= 0");
    require_field(clip_m > 0.0, "clip-m", "must be > 0");
    require_field(policy_layers >= 1, "layers", "must be >= 1");
    require_field(policy_heads >= 1, "heads", "must be >= 1");
    require_field(encoder_layers >= 1, "enc-layers", "must be >= 1");
    require_field(encoder_heads >= 1, "enc-heads", "must be >= 1");
    require_field(hidden >= 1 && hidden % policy_heads == 0 && hidden % encoder_heads == 0,
                  "hidden", "must be a positive multiple of both head counts");
    require_field(z_dim >= 1, "z-dim", "must be >= 1");
    require_field(context_k >= 1, "k", "must be >= 1");
    require_field(dropout >= 0.0 && dropout < 1.0, "dropout", "must lie in [0,1)");
    require_field(lr > 0.0, "lr", "must be > 0");
    require_field(weight_decay >= 0.0, "weight-decay", "must be >= 0");
    require_field(warmup_steps >= 0, "warmup", "must be >= 0");
    require_field(batch_size >= 1, "batch", "must be >= 1");
    require_field(batch_groups >= 1, "groups", "must be >= 1");
    require_field(epochs >= 1, "epochs", "must be >= 1");
    require_field(episodes >= 1, "episodes", "must be >= 1");
    require_field(demo_count >= 1, "demos", "must be >= 1");
    require_field(behavior_noise >= 0.0 && behavior_noise <= 1.0, "noise", "must lie in [0,1]");
    require_field(eval_episodes >= 1, "eval-episodes", "must be >= 1");
    require_field(threads >= 1, "threads", "must be >= 1");
    require_field(instances >= 1, "instances", "must be >= 1");

    if (command == "train") require_field(!dataset_path.empty(), "dataset", "dataset path required");
    if (command == "eval") {
        require_field(!dataset_path.empty(), "dataset", "dataset path required");
        require_field(!checkpoint_path.empty(), "checkpoint", "checkpoint path required");
    }
    if (command == "export-metrics") {
        require_field(!input_path.empty(), "input", "input path required");
    }
}

TrainOptions RunConfig::train_options() const {
    TrainOptions options;
    options.loss = loss_config();
    options.adam.base_lr = lr;
    options.adam.weight_decay = weight_decay;
    options.adam.warmup_steps = warmup_steps;
    options.batch_size = batch_size;
    options.batch_groups = batch_groups;
    options.context_k = context_k;
    options.mode = conditioning_mode();
    options.seed = seed;
    return options;
}

LossConfig RunConfig::loss_config() const {
    LossConfig loss;
    loss.lambda1 = lambda1;
    loss.lambda2 = lambda2;
    loss.norm = norm == "l1" ? NormKind::kL1 : NormKind::kL2;
    loss.repulsion_clip = clip_m;
    return loss;
}

ConditioningMode RunConfig::conditioning_mode() const {
    return mode == "lfo" ? ConditioningMode::kLfO : ConditioningMode::kLfD;
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    os.precision(17);
    os << "env=" << env_name << "\n";
    if (!dataset_path.empty()) os << "dataset=" << dataset_path << "\n";
    os << "out=" << out_dir << "\n";
    if (!checkpoint_path.empty()) os << "checkpoint=" << checkpoint_path << "\n";
    if (!input_path.empty()) os << "input=" << input_path << "\n";
    os << "demos=" << demo_count << "\n";
    os << "mode=" << mode << "\n";
    os << "lambda1=" << lambda1 << "\n";
    os << "lambda2=" << lambda2 << "\n";
    os << "norm=" << norm << "\n";
    os << "clip-m=" << clip_m << "\n";
    os << "layers=" << policy_layers << "\n";
    os << "heads=" << policy_heads << "\n";
    os << "enc-layers=" << encoder_layers << "\n";
    os << "enc-heads=" << encoder_heads << "\n";
    os << "hidden=" << hidden << "\n";
    os << "z-dim=" << z_dim << "\n";
    os << "k=" << context_k << "\n";
    os << "dropout=" << dropout << "\n";
    os << "lr=" << lr << "\n";
    os << "weight-decay=" << weight_decay << "\n";
    os << "warmup=" << warmup_steps << "\n";
    os << "batch=" << batch_size << "\n";
    os << "groups=" << batch_groups << "\n";
    os << "epochs=" << epochs << "\n";
    os << "episodes=" << episodes << "\n";
    os << "noise=" << behavior_noise << "\n";
    os << "eval-episodes=" << eval_episodes << "\n";
    if (!demo_sweep.empty()) os << "demo-sweep=" << demo_sweep << "\n";
    os << "seed=" << seed << "\n";
    os << "precision=" << precision << "\n";
    os << "threads=" << threads << "\n";
    os << "instances=" << instances << "\n";
    return os.str();
}

namespace {

void load_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("field 'config': cannot open file '" + path + "'");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
        std::size_t start = line.find_first_not_of(' ');
        if (start == std::string::npos) continue;
        line = line.substr(start);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config file line " + std::to_string(line_no) +
                             ": expected key=value");
        }
        apply_config_key(config, line.substr(0, eq), line.substr(eq + 1));
    }
    config.config_path = path;
}

}  // namespace

RunConfig parse_config(const std::vector<std::string>& args) {
    if (args.empty()) throw UsageError("field 'command': missing");
    RunConfig config;
    config.command = args[0];

    if (const char* env_seed = std::getenv("STITCHFORMER_SEED")) {
        config.seed = parse_u64("STITCHFORMER_SEED", env_seed);
    }

    // The config file applies before any other flag, wherever it appears.
    for (std::size_t i = 1; i + 1 < args.size(); ++i) {
        if (args[i] == "--config") load_config_file(config, args[i + 1]);
    }

    for (std::size_t i = 1; i < args.size(); ++i) {
        const std::string& arg = args[i];
        if (arg.rfind("--", 0) != 0) {
            throw UsageError("unexpected argument '" + arg + "'; flags look like --key value");
        }
        const std::string key = arg.substr(2);
        if (i + 1 >= args.size()) throw UsageError("flag '--" + key + "' needs a value");
        const std::string& value = args[++i];
        if (key == "config") continue;  // already applied
        apply_config_key(config, key, value);
    }
    config.validate();
    return config;
}

namespace {

std::filesystem::path ensure_out_dir(const RunConfig& config) {
    std::filesystem::path dir(config.out_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_echo(const RunConfig& config, const std::filesystem::path& dir) {
    std::ofstream out(dir / "config.echo");
    out << config.echo();
}

StitchConfig stitch_config_from(const RunConfig& config) {
    StitchConfig sc;
    sc.env_name = config.env_name;
    sc.demo_count = config.demo_count;
    sc.observation_only = config.mode == "lfo";
    sc.subopt_episodes = config.episodes;
    sc.behavior_noise = config.behavior_noise;
    sc.epochs = config.epochs;
    sc.train = config.train_options();
    sc.eval_episodes = config.eval_episodes;
    sc.threads = config.threads;
    sc.hidden = config.hidden;
    sc.policy_layers = config.policy_layers;
    sc.policy_heads = config.policy_heads;
    sc.encoder_layers = config.encoder_layers;
    sc.encoder_heads = config.encoder_heads;
    sc.z_dim = config.z_dim;
    sc.dropout = config.dropout;
    return sc;
}

int cmd_gen_data(const RunConfig& config, std::ostream& out) {
    auto dir = ensure_out_dir(config);
    auto env = make_env(config.env_name);
    auto subopt = generate_behavior_dataset(*env, default_segment_plan(config.env_name),
                                            config.episodes, config.seed, config.behavior_noise);
    auto expert =
        generate_expert_demos(*env, config.demo_count, config.seed + 0x5151, config.mode == "lfo");
    Dataset dataset = make_dataset(*env, std::move(subopt), std::move(expert));
    const std::string path =
        config.dataset_path.empty() ? (dir / "dataset.jsonl").string() : config.dataset_path;
    save_dataset(path, dataset);
    write_echo(config, dir);

    json j;
    j["dataset"] = path;
    j["content_hash"] = dataset.manifest.content_hash;
    j["subopt_episodes"] = dataset.manifest.subopt_count;
    j["expert_demos"] = dataset.manifest.expert_count;
    j["stitching_precondition"] = stitching_precondition_holds(dataset);
    out << j.dump() << "\n";
    return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
    auto dir = ensure_out_dir(config);
    Dataset dataset = load_dataset(config.dataset_path);
    TrainingData data = make_training_data(dataset);

    StitchConfig sc = stitch_config_from(config);
    PolicyModel policy(policy_config_for(sc, dataset.manifest.env), config.seed);
    EncoderModel encoder(encoder_config_for(sc, dataset.manifest.env), config.seed + 1);
    LatentEmbedding latent(config.z_dim, config.seed + 2);
    Trainer trainer(policy, encoder, latent, config.train_options());

    std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochMetrics m = trainer.train_epoch(data);
        const std::string line = epoch_metrics_json(m);
        metrics << line << "\n";
        metrics.flush();
        out << line << "\n";
    }

    const std::string ckpt = (dir / "model.ckpt").string();
    save_model_bundle(ckpt, policy, encoder, latent,
                      {{"env", config.env_name},
                       {"mode", config.mode},
                       {"dataset_hash", dataset.manifest.content_hash}});
    write_echo(config, dir);
    json j;
    j["checkpoint"] = ckpt;
    j["metrics"] = (dir / "metrics.jsonl").string();
    out << j.dump() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
    auto dir = ensure_out_dir(config);
    Dataset dataset = load_dataset(config.dataset_path);
    ModelBundle bundle = load_model_bundle(config.checkpoint_path);
    EvalReport report =
        rollout_eval(bundle.policy, bundle.latent.z, dataset.manifest.env.name,
                     dataset.manifest.stats, config.eval_episodes, config.seed, config.threads);
    write_echo(config, dir);
    std::ofstream file(dir / "eval_report.json", std::ios::trunc);
    file << eval_report_json(report) << "\n";
    out << eval_report_json(report) << "\n";
    return 0;
}

int cmd_stitch_exp(const RunConfig& config, std::ostream& out) {
    auto dir = ensure_out_dir(config);
    write_echo(config, dir);

    std::vector<int> demo_counts;
    if (config.demo_sweep.empty()) {
        demo_counts.push_back(config.demo_count);
    } else {
        std::stringstream ss(config.demo_sweep);
        std::string item;
        while (std::getline(ss, item, ',')) {
            demo_counts.push_back(parse_int("demo-sweep", item));
        }
        if (demo_counts.empty()) throw UsageError("field 'demo-sweep': no counts given");
    }

    int status = 0;
    for (int count : demo_counts) {
        StitchConfig sc = stitch_config_from(config);
        sc.demo_count = count;
        StitchReport report;
        if (!config.dataset_path.empty() && config.demo_sweep.empty()) {
            report = stitching_experiment(sc, load_dataset(config.dataset_path));
        } else {
            report = stitching_experiment(sc);
        }
        const std::string name = config.demo_sweep.empty()
                                     ? std::string("stitch_report.json")
                                     : "stitch_report_demos" + std::to_string(count) + ".json";
        std::ofstream file(dir / name, std::ios::trunc);
        file << stitch_report_json(report) << "\n";
        json j;
        j["report"] = (dir / name).string();
        j["demos"] = count;
        j["conditioned_success"] = report.conditioned.success_rate;
        j["control_success"] = report.control.success_rate;
        j["gap"] = report.gap;
        out << j.dump() << "\n";
    }
    return status;
}

int cmd_verify_theorem(const RunConfig& config, std::ostream& out) {
    auto dir = ensure_out_dir(config);
    TheoremReport report = check_theorem(config.instances, config.seed);
    const std::string text = theorem_report_json(report);
    std::ofstream file(dir / "theorem_report.json", std::ios::trunc);
    file << text << "\n";
    write_echo(config, dir);
    out << text << "\n";
    return report.pass ? 0 : 1;
}

int cmd_export_metrics(const RunConfig& config, std::ostream& out) {
    auto dir = ensure_out_dir(config);
    std::ifstream in(config.input_path);
    if (!in) throw UsageError("field 'input': cannot open '" + config.input_path + "'");
    std::string first_line;
    std::getline(in, first_line);
    if (first_line.empty()) throw FormatError("export-metrics: empty input file");

    const std::string stem = std::filesystem::path(config.input_path).stem().string();
    const std::string csv_path = (dir / (stem + ".csv")).string();
    std::ofstream csv(csv_path, std::ios::trunc);

    json first = json::parse(first_line);
    if (first.contains("epoch")) {
        // Metrics JSONL: one row per epoch.
        csv << "epoch,loss_a,loss_b,loss_c,grad_norm_policy,grad_norm_encoder,grad_norm_z,lr,"
               "seconds\n";
        std::string line = first_line;
        do {
            if (line.empty()) continue;
            EpochMetrics m = epoch_metrics_from_json(line);
            csv << m.epoch << "," << m.loss_a << "," << m.loss_b << "," << m.loss_c << ","
                << m.grad_norm_policy << "," << m.grad_norm_encoder << "," << m.grad_norm_z << ","
                << m.lr << "," << m.seconds << "\n";
        } while (std::getline(in, line));
    } else if (first.contains("conditioned")) {
        // Stitching report: per-episode returns for both arms.
        csv << "arm,episode,return\n";
        for (const char* arm : {"conditioned", "control"}) {
            const json& r = first.at(arm).at("returns");
            for (std::size_t i = 0; i < r.size(); ++i) {
                csv << arm << "," << i << "," << r[i].get<double>() << "\n";
            }
        }
    } else if (first.contains("returns")) {
        csv << "episode,return\n";
        const json& r = first.at("returns");
        for (std::size_t i = 0; i < r.size(); ++i) {
            csv << i << "," << r[i].get<double>() << "\n";
        }
    } else {
        throw FormatError("export-metrics: unrecognized input schema");
    }
    json j;
    j["csv"] = csv_path;
    out << j.dump() << "\n";
    return 0;
}

}  // namespace

int dispatch(const RunConfig& config, std::ostream& out, std::ostream& err) {
    (void)err;
    set_global_precision(config.precision == "f32" ? Precision::kF32 : Precision::kF64);
    if (config.command == "gen-data") return cmd_gen_data(config, out);
    if (config.command == "train") return cmd_train(config, out);
    if (config.command == "eval") return cmd_eval(config, out);
    if (config.command == "stitch-exp") return cmd_stitch_exp(config, out);
    if (config.command == "verify-theorem") return cmd_verify_theorem(config, out);
    if (config.command == "export-metrics") return cmd_export_metrics(config, out);
    throw UsageError("field 'command': unknown command '" + config.command + "'");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        RunConfig config = parse_config(args);
        return dispatch(config, out, err);
    } catch (const UsageError& e) {
        json j;
        j["error"] = e.what();
        j["kind"] = "usage";
        err << j.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        json j;
        j["error"] = e.what();
        err << j.dump() << "\n";
        return 1;
    }
}

}  // namespace stitchformer

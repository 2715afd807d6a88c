#include <iostream>
#include <string>
#include <vector>

#include "stitchformer/config.hpp"

namespace {

constexpr const char* kUsage =
    "usage: stitchformer <command> [--key value ...] [--config FILE]\n"
    "\n"
    "commands:\n"
    "  gen-data        generate a stitching-structured offline dataset\n"
    "  train           train the latent-conditioned policy on a dataset\n"
    "  eval            evaluate a trained checkpoint\n"
    "  stitch-exp      run the stitching comparison (conditioned vs control)\n"
    "  verify-theorem  numerically check the objective decomposition\n"
    "  export-metrics  convert metrics/report files to CSV\n"
    "\n"
    "common flags: --env, --dataset, --out, --seed, --epochs, --batch,\n"
    "  --groups, --k, --lr, --warmup, --lambda1, --lambda2, --norm, --clip-m,\n"
    "  --demos, --mode lfd|lfo, --episodes, --noise, --eval-episodes,\n"
    "  --precision f32|f64, --threads, --instances, --demo-sweep, --config\n";

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
        std::cout << kUsage;
        return args.empty() ? 2 : 0;
    }
    return stitchformer::run_cli(args, std::cout, std::cerr);
}

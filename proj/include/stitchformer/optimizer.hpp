#pragma once

#include <cstdint>
#include <vector>

#include "stitchformer/tensor.hpp"

namespace stitchformer {

struct AdamConfig {
    double base_lr = 1.2e-4;
    double weight_decay = 1e-4;
    std::int64_t warmup_steps = 10000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with decoupled weight decay and a linear learning-rate warmup:
// lr(t) = base_lr * min(1, t / warmup_steps) for the adaptive term, with t
// counting from 0. The decay term uses base_lr unscheduled, so the very
// first step (lr 0) still shrinks parameters by base_lr * weight_decay.
class AdamW {
  public:
    AdamW(std::vector<Tensor> params, AdamConfig config);

    // Applies one update from the accumulated grads. Grads are left intact;
    // the caller zeroes them. A parameter that never received a gradient
    // (empty buffer) is a contract violation.
    void step();

    void zero_grad();

    double effective_lr() const;  // lr at the *next* step() call
    std::int64_t step_count() const { return step_count_; }
    const std::vector<Tensor>& params() const { return params_; }

    // Global L2 norm over all accumulated grads.
    double grad_norm() const;

  private:
    std::vector<Tensor> params_;
    AdamConfig config_;
    std::vector<std::vector<double>> moment1_;
    std::vector<std::vector<double>> moment2_;
    std::int64_t step_count_ = 0;
};

}  // namespace stitchformer

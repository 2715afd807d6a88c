#include "stitchformer/optimizer.hpp"

#include <cmath>

#include "stitchformer/errors.hpp"

namespace stitchformer {

AdamW::AdamW(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    if (config_.warmup_steps < 0) throw ContractError("AdamW: warmup_steps must be >= 0");
    moment1_.reserve(params_.size());
    moment2_.reserve(params_.size());
    for (const Tensor& p : params_) {
        moment1_.emplace_back(p.values().size(), 0.0);
        moment2_.emplace_back(p.values().size(), 0.0);
    }
}

double AdamW::effective_lr() const {
    if (config_.warmup_steps == 0) return config_.base_lr;
    const double ramp = static_cast<double>(step_count_) / static_cast<double>(config_.warmup_steps);
    return config_.base_lr * std::min(1.0, ramp);
}

void AdamW::step() {
    const double lr = effective_lr();
    const double decay = config_.base_lr * config_.weight_decay;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_ + 1));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_ + 1));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (p.node()->grad.empty()) {
            throw ContractError("AdamW::step: parameter " + std::to_string(pi) +
                                " has no gradient; run backward first");
        }
        const std::vector<double>& g = p.node()->grad;
        std::vector<double>& m = moment1_[pi];
        std::vector<double>& v = moment2_[pi];
        std::vector<double>& w = p.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double w_new = w[i] - decay * w[i] - lr * mhat / (std::sqrt(vhat) + config_.eps);
            w[i] = round_to_precision(w_new);
        }
        check_finite("AdamW::step", w);
    }
    ++step_count_;
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

double AdamW::grad_norm() const {
    double acc = 0.0;
    for (const Tensor& p : params_) {
        for (double g : p.node()->grad) acc += g * g;
    }
    return std::sqrt(acc);
}

}  // namespace stitchformer

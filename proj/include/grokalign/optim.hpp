#pragma once

#include <span>
#include <vector>

#include "grokalign/config.hpp"
#include "grokalign/linalg.hpp"

namespace grokalign::optim {

enum class OptKind { gd, adamw };
enum class Transform { none, grokfast_ema, orthograd };

struct OptimizerConfig {
    OptKind kind = OptKind::gd;
    double lr = 0.01;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Transform transform = Transform::none;
    double grokfast_alpha = 0.8;
    double grokfast_lambda = 0.1;

    // keys: opt.kind, opt.lr, opt.weight_decay, opt.transform,
    // opt.grokfast_alpha, opt.grokfast_lambda
    static OptimizerConfig from_config(const Config& cfg);
};

OptKind opt_kind_from_string(const std::string& name);
Transform transform_from_string(const std::string& name);

// Owns the moment/EMA buffers; one state per trained model. Parameter and
// gradient span lists must keep the same order and shapes across calls.
struct OptimizerState {
    OptimizerConfig cfg;
    long step_count = 0;

    void init(std::span<const std::span<double>> params);

    // grokfast_ema / orthograd / none, applied in place to grads
    void apply_gradient_transform(std::span<const std::span<double>> params,
                                  std::span<const std::span<double>> grads);

    // one update; throws "diverged" on non-finite gradients
    void step(std::span<const std::span<double>> params,
              std::span<const std::span<const double>> grads);

private:
    std::vector<std::vector<double>> m_, v_, ema_;
    bool initialized_ = false;
};

}  // namespace grokalign::optim

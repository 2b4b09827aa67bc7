#include "grokalign/optim.hpp"

#include <cmath>

namespace grokalign::optim {

using linalg::dot;

OptKind opt_kind_from_string(const std::string& name) {
    if (name == "gd") return OptKind::gd;
    if (name == "adamw") return OptKind::adamw;
    throw Error("bad-optimizer: unknown kind '" + name + "'");
}

Transform transform_from_string(const std::string& name) {
    if (name == "none") return Transform::none;
    if (name == "grokfast_ema" || name == "grokfast") return Transform::grokfast_ema;
    if (name == "orthograd") return Transform::orthograd;
    throw Error("bad-optimizer: unknown transform '" + name + "'");
}

OptimizerConfig OptimizerConfig::from_config(const Config& cfg) {
    OptimizerConfig oc;
    oc.kind = opt_kind_from_string(cfg.get_str("opt.kind", "gd"));
    oc.lr = cfg.get_double("opt.lr", 0.01);
    oc.weight_decay = cfg.get_double("opt.weight_decay", 0.0);
    oc.beta1 = cfg.get_double("opt.beta1", 0.9);
    oc.beta2 = cfg.get_double("opt.beta2", 0.999);
    oc.eps = cfg.get_double("opt.eps", 1e-8);
    oc.transform = transform_from_string(cfg.get_str("opt.transform", "none"));
    oc.grokfast_alpha = cfg.get_double("opt.grokfast_alpha", 0.8);
    oc.grokfast_lambda = cfg.get_double("opt.grokfast_lambda", 0.1);
    return oc;
}

void OptimizerState::init(std::span<const std::span<double>> params) {
    m_.clear();
    v_.clear();
    ema_.clear();
    for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
        ema_.emplace_back(p.size(), 0.0);
    }
    step_count = 0;
    initialized_ = true;
}

void OptimizerState::apply_gradient_transform(std::span<const std::span<double>> params,
                                              std::span<const std::span<double>> grads) {
    if (cfg.transform == Transform::none) return;
    if (!initialized_) throw Error("optimizer-uninitialized");
    if (params.size() != grads.size() || params.size() != ema_.size())
        throw Error("shape-mismatch: transform buffers");

    if (cfg.transform == Transform::grokfast_ema) {
        const double a = cfg.grokfast_alpha, l = cfg.grokfast_lambda;
        for (std::size_t t = 0; t < grads.size(); ++t) {
            auto g = grads[t];
            auto& ema = ema_[t];
            for (std::size_t i = 0; i < g.size(); ++i) {
                ema[i] = a * ema[i] + (1.0 - a) * g[i];
                g[i] += l * ema[i];
            }
        }
        return;
    }

    // orthograd: remove the component of g along w, keep the original norm
    for (std::size_t t = 0; t < grads.size(); ++t) {
        auto g = grads[t];
        auto w = params[t];
        const double g_norm = linalg::norm2(g);
        const double coeff = dot(w, g) / (dot(w, w) + 1e-30);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= coeff * w[i];
        const double p_norm = linalg::norm2(g);
        if (p_norm < 1e-30) {
            for (double& v : g) v = 0.0;
            continue;
        }
        const double rescale = g_norm / p_norm;
        for (double& v : g) v *= rescale;
    }
}

void OptimizerState::step(std::span<const std::span<double>> params,
                          std::span<const std::span<const double>> grads) {
    if (!initialized_) throw Error("optimizer-uninitialized");
    if (params.size() != grads.size() || params.size() != m_.size())
        throw Error("shape-mismatch: optimizer step");
    for (const auto& g : grads)
        for (double v : g)
            if (!std::isfinite(v)) throw Error("diverged: non-finite gradient");

    ++step_count;
    if (cfg.kind == OptKind::gd) {
        for (std::size_t t = 0; t < params.size(); ++t) {
            auto w = params[t];
            const auto g = grads[t];
            for (std::size_t i = 0; i < w.size(); ++i)
                w[i] -= cfg.lr * (g[i] + cfg.weight_decay * w[i]);
        }
        return;
    }

    const double bc1 = 1.0 - std::pow(cfg.beta1, double(step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(step_count));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto w = params[t];
        const auto g = grads[t];
        auto& m = m_[t];
        auto& v = v_[t];
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] *= 1.0 - cfg.lr * cfg.weight_decay;  // decoupled decay
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

}  // namespace grokalign::optim

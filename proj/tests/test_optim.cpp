#include <doctest.h>

#include <cmath>

#include "grokalign/net.hpp"
#include "grokalign/optim.hpp"
#include "grokalign/rng.hpp"

using namespace grokalign;
using linalg::Vector;

namespace {

std::vector<std::span<double>> spans_of(std::vector<Vector>& tensors) {
    std::vector<std::span<double>> out;
    for (auto& t : tensors) out.emplace_back(t);
    return out;
}

std::vector<std::span<const double>> const_spans_of(const std::vector<Vector>& tensors) {
    std::vector<std::span<const double>> out;
    for (const auto& t : tensors) out.emplace_back(t);
    return out;
}

}  // namespace

TEST_CASE("transform none leaves gradients alone") {
    std::vector<Vector> params = {{1.0, 2.0}};
    std::vector<Vector> grads = {{0.5, -0.5}};
    optim::OptimizerState st;
    st.cfg.transform = optim::Transform::none;
    st.init(spans_of(params));
    st.apply_gradient_transform(spans_of(params), spans_of(grads));
    CHECK(grads[0][0] == 0.5);
    CHECK(grads[0][1] == -0.5);
}

TEST_CASE("orthograd projects out the weight direction and rescales") {
    std::vector<Vector> params = {{3.0, 0.0, 4.0}};
    std::vector<Vector> grads = {{1.0, 2.0, -1.0}};
    const double g_norm = linalg::norm2(grads[0]);
    optim::OptimizerState st;
    st.cfg.transform = optim::Transform::orthograd;
    st.init(spans_of(params));
    st.apply_gradient_transform(spans_of(params), spans_of(grads));
    // exactly orthogonal afterwards
    CHECK(std::abs(linalg::dot(params[0], grads[0])) <=
          1e-8 * linalg::norm2(params[0]) * linalg::norm2(grads[0]));
    // norm preserved
    CHECK(linalg::norm2(grads[0]) == doctest::Approx(g_norm).epsilon(1e-12));
}

TEST_CASE("orthograd on a parallel gradient returns zero") {
    std::vector<Vector> params = {{1.0, -2.0}};
    std::vector<Vector> grads = {{2.0, -4.0}};  // parallel to params
    optim::OptimizerState st;
    st.cfg.transform = optim::Transform::orthograd;
    st.init(spans_of(params));
    st.apply_gradient_transform(spans_of(params), spans_of(grads));
    CHECK(grads[0][0] == 0.0);
    CHECK(grads[0][1] == 0.0);
}

TEST_CASE("grokfast ema follows the closed form on constant gradients") {
    const double alpha = 0.8, lambda = 0.1;
    std::vector<Vector> params = {{0.0}};
    optim::OptimizerState st;
    st.cfg.transform = optim::Transform::grokfast_ema;
    st.cfg.grokfast_alpha = alpha;
    st.cfg.grokfast_lambda = lambda;
    st.init(spans_of(params));
    const double g = 2.0;
    for (int t = 1; t <= 30; ++t) {
        std::vector<Vector> grads = {{g}};
        st.apply_gradient_transform(spans_of(params), spans_of(grads));
        // ema_t = (1 - alpha^t) g  =>  g' = g (1 + lambda (1 - alpha^t))
        const double expected = g * (1.0 + lambda * (1.0 - std::pow(alpha, double(t))));
        CHECK(grads[0][0] == doctest::Approx(expected).epsilon(1e-12));
    }
    // geometric limit g(1 + lambda)
    std::vector<Vector> grads = {{g}};
    st.apply_gradient_transform(spans_of(params), spans_of(grads));
    CHECK(grads[0][0] == doctest::Approx(g * (1.0 + lambda)).epsilon(1e-3));
}

TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
    std::vector<Vector> params = {{1.5, -0.5}};
    std::vector<Vector> grads = {{0.0, 0.0}};
    for (auto kind : {optim::OptKind::gd, optim::OptKind::adamw}) {
        std::vector<Vector> p = params;
        optim::OptimizerState st;
        st.cfg.kind = kind;
        st.cfg.lr = 0.1;
        st.cfg.weight_decay = 0.0;
        st.init(spans_of(p));
        st.step(spans_of(p), const_spans_of(grads));
        CHECK(p[0][0] == params[0][0]);
        CHECK(p[0][1] == params[0][1]);
    }
}

TEST_CASE("gd on the quadratic shrinks weights by 0.9 per step") {
    std::vector<Vector> params = {{2.0}};
    optim::OptimizerState st;
    st.cfg.kind = optim::OptKind::gd;
    st.cfg.lr = 0.1;
    st.init(spans_of(params));
    double w = 2.0;
    for (int t = 0; t < 5; ++t) {
        std::vector<Vector> grads = {{params[0][0]}};  // grad of w^2/2
        st.step(spans_of(params), const_spans_of(grads));
        w *= 0.9;
        CHECK(params[0][0] == doctest::Approx(w).epsilon(1e-14));
    }
}

TEST_CASE("adamw matches a hand-computed two-step trace") {
    const double lr = 0.05, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<Vector> params = {{1.0}};
    optim::OptimizerState st;
    st.cfg.kind = optim::OptKind::adamw;
    st.cfg.lr = lr;
    st.cfg.weight_decay = wd;
    st.init(spans_of(params));

    // hand calculation
    double w = 1.0, m = 0.0, v = 0.0;
    const double g1 = 0.4, g2 = -0.2;
    auto hand_step = [&](double g, int t) {
        w *= 1.0 - lr * wd;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mh = m / (1.0 - std::pow(b1, t));
        const double vh = v / (1.0 - std::pow(b2, t));
        w -= lr * mh / (std::sqrt(vh) + eps);
    };
    hand_step(g1, 1);
    hand_step(g2, 2);

    std::vector<Vector> grads = {{g1}};
    st.step(spans_of(params), const_spans_of(grads));
    grads[0][0] = g2;
    st.step(spans_of(params), const_spans_of(grads));
    CHECK(params[0][0] == doctest::Approx(w).epsilon(1e-15));
}

TEST_CASE("decoupled weight decay shrinks geometrically under zero task gradient") {
    std::vector<Vector> params = {{4.0, -2.0}};
    optim::OptimizerState st;
    st.cfg.kind = optim::OptKind::adamw;
    st.cfg.lr = 0.01;
    st.cfg.weight_decay = 0.5;
    st.init(spans_of(params));
    const double factor = 1.0 - 0.01 * 0.5;
    double expect0 = 4.0, expect1 = -2.0;
    std::vector<Vector> grads = {{0.0, 0.0}};
    for (int t = 0; t < 10; ++t) {
        st.step(spans_of(params), const_spans_of(grads));
        expect0 *= factor;
        expect1 *= factor;
        CHECK(params[0][0] == doctest::Approx(expect0).epsilon(1e-12));
        CHECK(params[0][1] == doctest::Approx(expect1).epsilon(1e-12));
    }
}

TEST_CASE("nan gradients raise diverged") {
    std::vector<Vector> params = {{1.0}};
    std::vector<Vector> grads = {{std::nan("")}};
    optim::OptimizerState st;
    st.cfg.kind = optim::OptKind::adamw;
    st.init(spans_of(params));
    CHECK_THROWS_WITH_AS(st.step(spans_of(params), const_spans_of(grads)),
                         doctest::Contains("diverged"), Error);
}

TEST_CASE("identical seed and config give bitwise identical trajectories") {
    auto train_once = [&]() {
        net::MlpNetwork n = net::make_mlp({4, 8, 2}, net::Activation::relu, true, 1.0, 99);
        Rng rng(7);
        linalg::Matrix x(16, 4);
        for (double& v : x.data) v = rng.normal();
        std::vector<int> labels(16);
        for (auto& y : labels) y = int(rng.uniform_int(0, 1));
        const linalg::Matrix targets = net::one_hot_targets(labels, 2);
        optim::OptimizerState st;
        st.cfg.kind = optim::OptKind::adamw;
        st.cfg.lr = 0.01;
        st.cfg.weight_decay = 0.1;
        st.cfg.transform = optim::Transform::grokfast_ema;
        auto params = n.params();
        st.init(params);
        for (int epoch = 0; epoch < 20; ++epoch) {
            auto grads = net::param_gradients(n, x, targets, net::Loss::cross_entropy);
            auto gs = grads.spans();
            st.apply_gradient_transform(params, gs);
            std::vector<std::span<const double>> cgs(gs.begin(), gs.end());
            st.step(params, cgs);
        }
        return n;
    };
    const net::MlpNetwork a = train_once();
    const net::MlpNetwork b = train_once();
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        for (std::size_t i = 0; i < a.layers[l].weight.data.size(); ++i)
            CHECK(a.layers[l].weight.data[i] == b.layers[l].weight.data[i]);
}

TEST_CASE("optimizer config parses from dot-path keys") {
    Config cfg;
    cfg.set("opt.kind", "adamw");
    cfg.set("opt.lr", "0.003");
    cfg.set("opt.weight_decay", "1.0");
    cfg.set("opt.transform", "grokfast_ema");
    cfg.set("opt.grokfast_alpha", "0.98");
    const auto oc = optim::OptimizerConfig::from_config(cfg);
    CHECK(oc.kind == optim::OptKind::adamw);
    CHECK(oc.lr == doctest::Approx(0.003));
    CHECK(oc.weight_decay == doctest::Approx(1.0));
    CHECK(oc.transform == optim::Transform::grokfast_ema);
    CHECK(oc.grokfast_alpha == doctest::Approx(0.98));
}

#include "grokalign/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "grokalign/rng.hpp"

namespace grokalign::robustness {

using linalg::axpy;
using linalg::dot;
using linalg::norm2;

void AttackSpec::validate() const {
    if (radius <= 0.0) throw Error("bad-attack: radius must be positive");
    if (steps < 1) throw Error("bad-attack: steps must be >= 1");
}

namespace {

int argmax(const Vector& z) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < z.size(); ++j)
        if (z[j] > z[arg]) arg = j;
    return int(arg);
}

Vector softmax_minus_onehot(const Vector& z, int y) {
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    Vector g(z.size());
    for (std::size_t j = 0; j < z.size(); ++j)
        g[j] = std::exp(z[j] - zmax) / denom - (int(j) == y ? 1.0 : 0.0);
    return g;
}

void project_ball(std::span<double> delta, AttackNorm norm, double radius) {
    if (norm == AttackNorm::l2) {
        const double n = norm2(delta);
        if (n > radius) linalg::scale(radius / n, delta);
    } else {
        for (double& v : delta) v = std::clamp(v, -radius, radius);
    }
}

}  // namespace

Vector MlpClassifier::logits(std::span<const double> x) const { return net::forward(*net_, x); }

Vector MlpClassifier::loss_input_gradient(std::span<const double> x, int y) const {
    const Vector z = net::forward(*net_, x);
    const Vector g = softmax_minus_onehot(z, y);
    return net::vjp(*net_, x, g);
}

Vector KernelClassifier::logits(std::span<const double> x) const {
    return kernels::km_predict(*km_, x);
}

Vector KernelClassifier::loss_input_gradient(std::span<const double> x, int y) const {
    const Vector z = kernels::km_predict(*km_, x);
    const Vector g = softmax_minus_onehot(z, y);
    const linalg::Matrix jac = kernels::km_jacobian(*km_, x);
    return linalg::matvec_t(jac, g);
}

AttackResult pgd_attack(const Classifier& model, std::span<const double> x, int y,
                        const AttackSpec& spec) {
    spec.validate();
    const std::size_t d = x.size();
    Vector delta(d, 0.0);
    Rng rng(derive_seed(spec.seed, 0xadf));
    if (spec.random_start) {
        if (spec.norm == AttackNorm::l2) {
            for (double& v : delta) v = rng.normal();
            const double n = norm2(delta);
            if (n > 0.0) {
                const double r = spec.radius * std::pow(rng.uniform(), 1.0 / double(d));
                linalg::scale(r / n, delta);
            }
        } else {
            for (double& v : delta) v = rng.uniform(-spec.radius, spec.radius);
        }
    }

    const double step = spec.effective_step();
    Vector xp(d);
    bool any_gradient = false;
    for (int it = 0; it < spec.steps; ++it) {
        for (std::size_t j = 0; j < d; ++j) xp[j] = x[j] + delta[j];
        Vector g = model.loss_input_gradient(xp, y);
        const double gn = norm2(g);
        if (gn == 0.0) continue;
        any_gradient = true;
        if (spec.norm == AttackNorm::l2)
            axpy(step / gn, g, delta);
        else
            for (std::size_t j = 0; j < d; ++j) delta[j] += step * (g[j] > 0.0 ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0));
        project_ball(delta, spec.norm, spec.radius);
    }

    AttackResult out;
    if (!any_gradient) {
        out.x_adv.assign(x.begin(), x.end());
        out.stalled = true;
        return out;
    }
    out.x_adv.resize(d);
    for (std::size_t j = 0; j < d; ++j) out.x_adv[j] = x[j] + delta[j];
    return out;
}

AttackEval evaluate_attack(const Classifier& model, const Matrix& x, std::span<const int> y,
                           const AttackSpec& spec) {
    spec.validate();
    AttackEval eval;
    std::size_t clean_correct = 0, adv_correct = 0, flipped = 0;
    Vector diff(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        AttackEvalRow row;
        row.sample_id = i;
        const auto xi = x.row(i);
        row.clean_correct = argmax(model.logits(xi)) == y[i];

        AttackSpec per_sample = spec;
        per_sample.seed = derive_seed(spec.seed, 0xa77ac, i);
        const AttackResult res = pgd_attack(model, xi, y[i], per_sample);
        row.adv_correct = argmax(model.logits(res.x_adv)) == y[i];
        for (std::size_t j = 0; j < x.cols; ++j) diff[j] = res.x_adv[j] - xi[j];
        row.perturbation_norm = norm2(diff);

        if (row.clean_correct) {
            ++clean_correct;
            if (!row.adv_correct) ++flipped;
        }
        if (row.adv_correct) ++adv_correct;
        eval.rows.push_back(row);
    }
    const double n = double(x.rows);
    eval.clean_accuracy = n > 0 ? double(clean_correct) / n : 0.0;
    eval.robust_accuracy = n > 0 ? double(adv_correct) / n : 0.0;
    if (clean_correct > 0) eval.success_rate = double(flipped) / double(clean_correct);
    return eval;
}

double attack_success_rate(const Classifier& model, const Matrix& x, std::span<const int> y,
                           const AttackSpec& spec) {
    const AttackEval eval = evaluate_attack(model, x, y, spec);
    if (!eval.success_rate)
        throw Error("not-applicable: no correctly classified clean samples");
    return *eval.success_rate;
}

double robust_accuracy(const Classifier& model, const Matrix& x, std::span<const int> y,
                       const AttackSpec& spec) {
    return evaluate_attack(model, x, y, spec).robust_accuracy;
}

void AttackEval::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error("io-error: cannot write " + path);
    os << "sample_id,clean_correct,adv_correct,perturbation_norm\n";
    char buf[64];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%d,%d,%.17g\n", row.sample_id, row.clean_correct ? 1 : 0,
                      row.adv_correct ? 1 : 0, row.perturbation_norm);
        os << buf;
    }
}

}  // namespace grokalign::robustness

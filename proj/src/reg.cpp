#include "grokalign/reg.hpp"

#include <cmath>

namespace grokalign::reg {

using linalg::axpy;
using linalg::dot;
using linalg::norm2;
using linalg::norm2_sq;

void RegularizerSpec::validate() const {
    if (probes < 1) throw Error("bad-reg: probes must be >= 1");
    if (weight < 0.0) throw Error("bad-reg: weight must be nonnegative");
    if (kind == RegKind::r_sigma && sigma <= 0.0) throw Error("bad-reg: sigma must be positive");
}

RegKind reg_kind_from_string(const std::string& name) {
    if (name == "none") return RegKind::none;
    if (name == "grokalign_output" || name == "grokalign") return RegKind::grokalign_output;
    if (name == "grokalign_input") return RegKind::grokalign_input;
    if (name == "r_sigma") return RegKind::r_sigma;
    if (name == "r_perp") return RegKind::r_perp;
    if (name == "r_nuc") return RegKind::r_nuc;
    throw Error("bad-reg: unknown kind '" + name + "'");
}

std::string to_string(RegKind kind) {
    switch (kind) {
        case RegKind::none: return "none";
        case RegKind::grokalign_output: return "grokalign_output";
        case RegKind::grokalign_input: return "grokalign_input";
        case RegKind::r_sigma: return "r_sigma";
        case RegKind::r_perp: return "r_perp";
        case RegKind::r_nuc: return "r_nuc";
    }
    return "none";
}

RegularizerSpec RegularizerSpec::from_config(const Config& cfg) {
    RegularizerSpec spec;
    spec.kind = reg_kind_from_string(cfg.get_str("reg.kind", "none"));
    spec.weight = cfg.get_double("reg.weight", 0.0);
    spec.probes = int(cfg.get_long("reg.probes", 1));
    spec.sigma = cfg.get_double("reg.sigma", 0.1);
    spec.split_layer = std::size_t(cfg.get_long("reg.split_layer", 1));
    const std::string dist = cfg.get_str("reg.distribution", "gaussian");
    if (dist == "gaussian")
        spec.distribution = ProbeDistribution::gaussian;
    else if (dist == "rademacher")
        spec.distribution = ProbeDistribution::rademacher;
    else
        throw Error("bad-reg: unknown distribution '" + dist + "'");
    spec.validate();
    return spec;
}

namespace {

void fill_probe(Vector& u, Rng& rng, ProbeDistribution dist) {
    if (dist == ProbeDistribution::gaussian)
        for (double& v : u) v = rng.normal();
    else
        for (double& v : u) v = rng.rademacher();
}

}  // namespace

double estimate_sq_frobenius(const net::MlpNetwork& network, std::span<const double> x, int probes,
                             ProbeSide side, Rng& rng, ProbeDistribution dist) {
    if (probes < 1) throw Error("bad-reg: probes must be >= 1");
    const std::size_t dim = side == ProbeSide::input ? network.input_dim() : network.output_dim();
    Vector u(dim);
    double acc = 0.0;
    for (int k = 0; k < probes; ++k) {
        fill_probe(u, rng, dist);
        const Vector z = side == ProbeSide::input ? net::jvp(network, x, u) : net::vjp(network, x, u);
        acc += norm2_sq(z);
    }
    return acc / double(probes);
}

double sq_frobenius_basis_sweep(const net::MlpNetwork& network, std::span<const double> x) {
    const std::size_t c = network.output_dim();
    Vector e(c, 0.0);
    double acc = 0.0;
    for (std::size_t r = 0; r < c; ++r) {
        e[r] = 1.0;
        acc += norm2_sq(net::vjp(network, x, e));
        e[r] = 0.0;
    }
    return acc;
}

double estimate_sq_frobenius_orthogonal(const net::MlpNetwork& network, std::span<const double> x,
                                        int probes, Rng& rng, ProbeDistribution dist) {
    const double xn = norm2(x);
    if (xn == 0.0) throw Error("zero-sample: orthogonal probes undefined at x = 0");
    Vector xhat(x.begin(), x.end());
    linalg::scale(1.0 / xn, xhat);
    Vector u(network.input_dim());
    double acc = 0.0;
    for (int k = 0; k < probes; ++k) {
        fill_probe(u, rng, dist);
        const double proj = dot(xhat, u);
        axpy(-proj, xhat, u);
        acc += norm2_sq(net::jvp(network, x, u));
    }
    return acc / double(probes);
}

AlignmentResidual alignment_residual(const Matrix& jac, std::span<const double> x) {
    const double xn = norm2(x);
    if (xn == 0.0) throw Error("zero-sample: alignment residual undefined at x = 0");
    Vector xhat(x.begin(), x.end());
    linalg::scale(1.0 / xn, xhat);
    AlignmentResidual out;
    out.c_star = linalg::matvec(jac, xhat);
    // ||J - c* xhat^T||_F^2 = ||J||_F^2 - ||J xhat||^2
    out.residual = linalg::frobenius_sq(jac) - norm2_sq(out.c_star);
    if (out.residual < 0.0) out.residual = 0.0;
    return out;
}

double r_sigma_penalty(const net::MlpNetwork& network, std::span<const double> x, double sigma,
                       int probes, Rng& rng) {
    if (sigma <= 0.0) throw Error("bad-reg: sigma must be positive");
    const Vector fx = net::forward(network, x);
    Vector xp(x.begin(), x.end());
    double acc = 0.0;
    for (int k = 0; k < probes; ++k) {
        for (std::size_t i = 0; i < xp.size(); ++i) xp[i] = x[i] + sigma * rng.normal();
        Vector fp = net::forward(network, xp);
        for (std::size_t i = 0; i < fp.size(); ++i) fp[i] -= fx[i];
        acc += norm2_sq(fp) / (sigma * sigma);
    }
    return acc / double(probes);
}

namespace {

// h = layers [0, split) with the split activation applied at the end; realized
// as an MLP with an identity read-out layer so the standard machinery applies.
net::MlpNetwork head_subnetwork(const net::MlpNetwork& network, std::size_t split) {
    net::MlpNetwork h;
    h.init_scale = network.init_scale;
    for (std::size_t l = 0; l < split; ++l) {
        h.layers.push_back(network.layers[l]);
        h.hidden_acts.push_back(network.hidden_acts[l]);
    }
    net::Layer cap;
    cap.weight = Matrix::identity(network.layers[split - 1].weight.rows);
    h.layers.push_back(std::move(cap));
    return h;
}

net::MlpNetwork tail_subnetwork(const net::MlpNetwork& network, std::size_t split) {
    net::MlpNetwork g;
    g.init_scale = network.init_scale;
    for (std::size_t l = split; l < network.depth(); ++l) {
        g.layers.push_back(network.layers[l]);
        if (l + 1 < network.depth()) g.hidden_acts.push_back(network.hidden_acts[l]);
    }
    return g;
}

void check_split(const net::MlpNetwork& network, std::size_t split) {
    if (split < 1 || split >= network.depth())
        throw Error("bad-split: need 1 <= split_layer < depth");
}

}  // namespace

double r_nuc_penalty(const net::MlpNetwork& network, std::span<const double> x,
                     std::size_t split_layer, int probes, Rng& rng, ProbeDistribution dist) {
    check_split(network, split_layer);
    const net::MlpNetwork head = head_subnetwork(network, split_layer);
    const net::MlpNetwork tail = tail_subnetwork(network, split_layer);
    const Vector hx = net::forward(head, x);
    const double head_term = estimate_sq_frobenius(head, x, probes, ProbeSide::output, rng, dist);
    const double tail_term = estimate_sq_frobenius(tail, hx, probes, ProbeSide::output, rng, dist);
    return 0.5 * (head_term + tail_term);
}

namespace {

Matrix sample_probe_matrix(std::size_t n, std::size_t dim, std::uint64_t probe_seed, int probe_index,
                           ProbeDistribution dist) {
    Matrix u(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(probe_seed, std::uint64_t(probe_index) + 1, i));
        auto row = u.row(i);
        if (dist == ProbeDistribution::gaussian)
            for (double& v : row) v = rng.normal();
        else
            for (double& v : row) v = rng.rademacher();
    }
    return u;
}

double mean_row_norm_sq(const Matrix& m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) acc += norm2_sq(m.row(i));
    return m.rows ? acc / double(m.rows) : 0.0;
}

}  // namespace

PenalizedLoss penalized_loss(const net::MlpNetwork& network, const Matrix& x, const Matrix& targets,
                             net::Loss loss, const RegularizerSpec& spec, std::uint64_t probe_seed) {
    spec.validate();
    const std::size_t n = x.rows;
    if (n == 0) throw Error("empty-batch: penalized_loss");

    PenalizedLoss out;
    net::ForwardTrace trace = net::forward_trace(network, x);
    out.task_loss = net::loss_value(trace.logits(), targets, loss);
    Matrix dz = net::loss_output_gradients(trace.logits(), targets, loss);
    linalg::scale(1.0 / double(n), dz.data);
    out.grads = net::backward_from_output(network, trace, dz);

    if (spec.kind == RegKind::none) {
        out.total_loss = out.task_loss;
        return out;
    }

    const int probes = spec.probes;
    const std::size_t c = network.output_dim();
    const std::size_t d = network.input_dim();
    const double per_probe_weight = 2.0 * spec.weight / (double(n) * double(probes));
    Vector w(n, per_probe_weight);
    double penalty_acc = 0.0;

    switch (spec.kind) {
        case RegKind::none:
            break;
        case RegKind::grokalign_output: {
            for (int k = 0; k < probes; ++k) {
                Matrix u = sample_probe_matrix(n, c, probe_seed, k, spec.distribution);
                Matrix v = net::input_gradients(network, trace, u);  // rows J^T u
                penalty_acc += mean_row_norm_sq(v);
                net::ParamGrads pg = net::bilinear_jacobian_grads(network, trace, u, v, w);
                out.grads.add_scaled(pg, 1.0);
            }
            break;
        }
        case RegKind::grokalign_input: {
            for (int k = 0; k < probes; ++k) {
                Matrix v = sample_probe_matrix(n, d, probe_seed, k, spec.distribution);
                Matrix u = net::jvp_batch(network, trace, v);  // rows J v
                penalty_acc += mean_row_norm_sq(u);
                net::ParamGrads pg = net::bilinear_jacobian_grads(network, trace, u, v, w);
                out.grads.add_scaled(pg, 1.0);
            }
            break;
        }
        case RegKind::r_perp: {
            for (int k = 0; k < probes; ++k) {
                Matrix v = sample_probe_matrix(n, d, probe_seed, k, spec.distribution);
                for (std::size_t i = 0; i < n; ++i) {
                    const auto xi = x.row(i);
                    const double xn = norm2(xi);
                    if (xn == 0.0) throw Error("zero-sample: r_perp undefined at x = 0");
                    auto vi = v.row(i);
                    const double proj = dot(xi, vi) / (xn * xn);
                    axpy(-proj, xi, vi);
                }
                Matrix u = net::jvp_batch(network, trace, v);
                penalty_acc += mean_row_norm_sq(u);
                net::ParamGrads pg = net::bilinear_jacobian_grads(network, trace, u, v, w);
                out.grads.add_scaled(pg, 1.0);
            }
            break;
        }
        case RegKind::r_sigma: {
            const double inv_s2 = 1.0 / (spec.sigma * spec.sigma);
            for (int k = 0; k < probes; ++k) {
                Matrix eps = sample_probe_matrix(n, d, probe_seed, k, ProbeDistribution::gaussian);
                Matrix xp = x;
                for (std::size_t i = 0; i < xp.data.size(); ++i)
                    xp.data[i] += spec.sigma * eps.data[i];
                net::ForwardTrace trace_p = net::forward_trace(network, xp);
                Matrix diff = linalg::sub(trace_p.logits(), trace.logits());
                penalty_acc += mean_row_norm_sq(diff) * inv_s2;
                // d/dtheta ||f(x+e) - f(x)||^2: cotangent 2*diff on the perturbed
                // pass, -2*diff on the clean pass
                Matrix cot = diff;
                linalg::scale(spec.weight * 2.0 * inv_s2 / (double(n) * probes), cot.data);
                net::ParamGrads gp = net::backward_from_output(network, trace_p, cot);
                out.grads.add_scaled(gp, 1.0);
                net::ParamGrads gc = net::backward_from_output(network, trace, cot);
                out.grads.add_scaled(gc, -1.0);
            }
            break;
        }
        case RegKind::r_nuc: {
            // Gradients flow inside each sub-network; the dependence of the
            // tail term on its evaluation point h(x) is a relu gate pattern,
            // locally constant, so dropping it is exact a.e.
            check_split(network, spec.split_layer);
            const net::MlpNetwork head = head_subnetwork(network, spec.split_layer);
            const net::MlpNetwork tail = tail_subnetwork(network, spec.split_layer);
            net::ForwardTrace trace_h = net::forward_trace(head, x);
            const Matrix& hx = trace_h.logits();
            net::ForwardTrace trace_g = net::forward_trace(tail, hx);
            const std::size_t mid = head.output_dim();
            Vector wh(n, 0.5 * per_probe_weight);
            for (int k = 0; k < probes; ++k) {
                Matrix uh = sample_probe_matrix(n, mid, probe_seed, 2 * k, spec.distribution);
                Matrix vh = net::input_gradients(head, trace_h, uh);
                penalty_acc += 0.5 * mean_row_norm_sq(vh);
                net::ParamGrads pg_h = net::bilinear_jacobian_grads(head, trace_h, uh, vh, wh);
                for (std::size_t l = 0; l < spec.split_layer; ++l)
                    out.grads.layers[l].d_weight = linalg::add(out.grads.layers[l].d_weight,
                                                               pg_h.layers[l].d_weight);
                for (std::size_t l = 0; l < spec.split_layer; ++l)
                    if (!out.grads.layers[l].d_bias.empty())
                        axpy(1.0, pg_h.layers[l].d_bias, out.grads.layers[l].d_bias);

                Matrix ug = sample_probe_matrix(n, c, probe_seed, 2 * k + 1, spec.distribution);
                Matrix vg = net::input_gradients(tail, trace_g, ug);
                penalty_acc += 0.5 * mean_row_norm_sq(vg);
                net::ParamGrads pg_g = net::bilinear_jacobian_grads(tail, trace_g, ug, vg, wh);
                for (std::size_t l = spec.split_layer; l < network.depth(); ++l) {
                    const std::size_t src = l - spec.split_layer;
                    out.grads.layers[l].d_weight =
                        linalg::add(out.grads.layers[l].d_weight, pg_g.layers[src].d_weight);
                    if (!out.grads.layers[l].d_bias.empty())
                        axpy(1.0, pg_g.layers[src].d_bias, out.grads.layers[l].d_bias);
                }
            }
            break;
        }
    }

    out.penalty = penalty_acc / double(probes);
    out.total_loss = out.task_loss + spec.weight * out.penalty;
    return out;
}

}  // namespace grokalign::reg

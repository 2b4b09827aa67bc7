#include "grokalign/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "grokalign/rng.hpp"

namespace grokalign::geometry {

using linalg::axpy;
using linalg::dot;
using linalg::norm2;
using linalg::norm2_sq;

CentroidDescriptor centroid(const net::MlpNetwork& network, std::span<const double> x) {
    CentroidDescriptor out;
    out.source_point.assign(x.begin(), x.end());
    Vector ones(network.output_dim(), 1.0);
    out.mu = net::vjp(network, x, ones);
    const Vector b = net::local_offset(network, x);
    double bsum = 0.0;
    for (double v : b) bsum += v;
    out.radius = norm2_sq(out.mu) + 2.0 * bsum;
    return out;
}

Vector centroid_two_layer(const net::MlpNetwork& network, std::span<const double> x) {
    if (network.depth() != 2 || network.hidden_acts[0] != net::Activation::relu)
        throw Error("bad-architecture: centroid_two_layer needs one hidden relu layer");
    const Matrix& w1 = network.layers[0].weight;
    const Matrix& w2 = network.layers[1].weight;
    Vector z = linalg::matvec(w1, x);
    if (network.layers[0].bias) axpy(1.0, *network.layers[0].bias, z);
    // (W2 Q W1)^T 1 = W1^T Q W2^T 1
    Vector w2_colsum(w2.cols, 0.0);
    for (std::size_t i = 0; i < w2.rows; ++i) axpy(1.0, w2.row(i), w2_colsum);
    for (std::size_t j = 0; j < w2_colsum.size(); ++j)
        if (z[j] <= 0.0) w2_colsum[j] = 0.0;
    return linalg::matvec_t(w1, w2_colsum);
}

namespace {

double abs_cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm2(a), nb = norm2(b);
    return std::abs(dot(a, b)) / (na * nb);
}

}  // namespace

AlignmentReport alignment_metrics_from_jacobians(const std::vector<Matrix>& jacobians,
                                                 const Matrix& x) {
    AlignmentReport rep;
    rep.per_sample_na.reserve(jacobians.size());
    double na_sum = 0.0, er_sum = 0.0, ca_sum = 0.0;
    std::size_t na_count = 0, ca_count = 0;
    for (std::size_t i = 0; i < jacobians.size(); ++i) {
        const auto xi = x.row(i);
        const double xn = norm2(xi);
        if (xn < 1e-300 || linalg::frobenius_sq(jacobians[i]) == 0.0) {
            ++rep.skipped;
            continue;
        }
        linalg::SingularPair pair;
        try {
            pair = linalg::top_singular_pair(jacobians[i], 1e-10, 5000, 7u + i);
        } catch (const linalg::ConvergenceError& e) {
            pair = e.best;  // near-degenerate spectrum, best iterate is fine for a metric
        }
        const double na_i = std::abs(dot(pair.v1, xi)) / (norm2(pair.v1) * xn);
        const double er_i = linalg::frobenius_sq(jacobians[i]) / (pair.sigma1 * pair.sigma1);
        na_sum += na_i;
        er_sum += er_i;
        ++na_count;
        rep.per_sample_na.push_back(na_i);
        rep.per_sample_er.push_back(er_i);

        Vector mu(jacobians[i].cols, 0.0);
        for (std::size_t r = 0; r < jacobians[i].rows; ++r) axpy(1.0, jacobians[i].row(r), mu);
        if (norm2(mu) < 1e-12) {
            // centroid degenerate for this sample only
            continue;
        }
        const double ca_i = std::abs(dot(mu, xi)) / (norm2(mu) * xn);
        ca_sum += ca_i;
        ++ca_count;
        rep.per_sample_ca.push_back(ca_i);
    }
    rep.normal_alignment = na_count ? na_sum / double(na_count) : 0.0;
    rep.effective_rank = na_count ? er_sum / double(na_count) : 0.0;
    rep.centroid_alignment = ca_count ? ca_sum / double(ca_count) : 0.0;
    return rep;
}

AlignmentReport alignment_metrics(const net::MlpNetwork& network, const Matrix& x,
                                  bool keep_per_sample) {
    std::vector<Matrix> jacs;
    jacs.reserve(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) jacs.push_back(net::input_jacobian(network, x.row(i)));
    AlignmentReport rep = alignment_metrics_from_jacobians(jacs, x);
    if (!keep_per_sample) {
        rep.per_sample_na.clear();
        rep.per_sample_er.clear();
        rep.per_sample_ca.clear();
    }
    return rep;
}

double normal_alignment_metric(const net::MlpNetwork& network, const Matrix& x) {
    return alignment_metrics(network, x).normal_alignment;
}

double effective_rank_metric(const net::MlpNetwork& network, const Matrix& x) {
    return alignment_metrics(network, x).effective_rank;
}

double centroid_alignment_metric(const net::MlpNetwork& network, const Matrix& x) {
    return alignment_metrics(network, x).centroid_alignment;
}

std::string AlignmentReport::csv_row(long step) const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%zu", step, normal_alignment,
                  effective_rank, centroid_alignment, skipped);
    return buf;
}

double laguerre_distance(std::span<const double> x, std::span<const double> mu, double radius) {
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = x[i] - mu[i];
        d += t * t;
    }
    return d - radius;
}

PowerDiagramReport verify_power_diagram_layer(const Matrix& w, const Vector& b,
                                              const Matrix& sample_points) {
    const std::size_t width = w.rows;
    if (width > 12) throw Error("width-too-large: power diagram enumeration capped at 12");
    if (b.size() != width) throw Error("shape-mismatch: bias");
    const std::size_t q_count = std::size_t(1) << width;

    // centroid/radius for every activation code
    std::vector<Vector> mus(q_count, Vector(w.cols, 0.0));
    Vector radii(q_count, 0.0);
    for (std::size_t q = 0; q < q_count; ++q) {
        double bsum = 0.0;
        for (std::size_t j = 0; j < width; ++j)
            if (q & (std::size_t(1) << j)) {
                axpy(1.0, w.row(j), mus[q]);
                bsum += b[j];
            }
        radii[q] = norm2_sq(mus[q]) + 2.0 * bsum;
    }

    PowerDiagramReport rep;
    rep.points = sample_points.rows;
    const double tie_tol = 1e-9;
    for (std::size_t i = 0; i < sample_points.rows; ++i) {
        const auto x = sample_points.row(i);
        std::size_t own = 0;
        bool on_boundary = false;
        for (std::size_t j = 0; j < width; ++j) {
            const double z = dot(w.row(j), x) + b[j];
            if (std::abs(z) < tie_tol) on_boundary = true;
            if (z > 0.0) own |= std::size_t(1) << j;
        }
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t q = 0; q < q_count; ++q)
            best = std::min(best, laguerre_distance(x, mus[q], radii[q]));
        const double own_dist = laguerre_distance(x, mus[own], radii[own]);
        if (own_dist <= best + tie_tol * (1.0 + std::abs(best))) continue;
        if (on_boundary)
            ++rep.boundary_ties;
        else
            ++rep.violations;
    }
    return rep;
}

AlignedConstruction build_aligned_network(const Matrix& x, std::span<const int> labels,
                                          std::size_t output_dim) {
    const std::size_t n = x.rows, d = x.cols;
    if (n == 0) throw Error("empty-input: aligned construction");
    if (labels.size() != n) throw Error("shape-mismatch: labels");

    AlignedConstruction out;
    out.normalized_inputs = x;
    for (std::size_t i = 0; i < n; ++i) {
        const double nn = norm2(out.normalized_inputs.row(i));
        if (nn == 0.0) throw Error("zero-sample: cannot normalize training point");
        linalg::scale(1.0 / nn, out.normalized_inputs.row(i));
    }

    out.margins.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            m = std::max(m, dot(out.normalized_inputs.row(i), out.normalized_inputs.row(j)));
        }
        if (n == 1) m = 0.0;
        if (m >= 1.0 - 1e-9)
            throw Error("non-separable-pair: duplicate directions in training set");
        out.margins[i] = m;
    }

    net::MlpNetwork network;
    network.init_scale = 1.0;
    net::Layer first;
    first.weight = out.normalized_inputs;
    first.bias = Vector(n);
    for (std::size_t i = 0; i < n; ++i) (*first.bias)[i] = -(1.0 + out.margins[i]) / 2.0;
    net::Layer second;
    second.weight = Matrix(output_dim, n);
    out.second_layer_norms.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || std::size_t(labels[i]) >= output_dim)
            throw Error("label-out-of-range");
        const double scale = 2.0 / (1.0 - out.margins[i]);
        second.weight(labels[i], i) = scale;
        out.second_layer_norms[i] = scale;
    }
    network.layers.push_back(std::move(first));
    network.layers.push_back(std::move(second));
    network.hidden_acts.push_back(net::Activation::relu);
    out.network = std::move(network);
    out.labels.assign(labels.begin(), labels.end());
    (void)d;
    return out;
}

OptimalJacobianSolution optimal_jacobian_rows(std::span<const double> x, int y, double alpha,
                                              OptimalLossMode mode, std::size_t num_classes) {
    if (alpha <= 0.0) throw Error("bad-alpha: norm budget must be positive");
    const double xn = norm2(x);
    if (xn == 0.0) throw Error("zero-sample: optimal_jacobian_rows");
    if (y < 0 || std::size_t(y) >= num_classes) throw Error("label-out-of-range");

    OptimalJacobianSolution sol;
    sol.loss_mode = mode;
    sol.alpha = alpha;
    sol.x_norm = xn;
    sol.num_classes = num_classes;
    if (mode == OptimalLossMode::squared_error_zero_beta2) {
        sol.a1 = std::sqrt(alpha) / xn;
        sol.a2 = 0.0;
    } else {
        const double c = double(num_classes);
        sol.a1 = std::sqrt(alpha * (c - 1.0) / c) / xn;
        sol.a2 = -sol.a1 / (c - 1.0);
    }
    sol.jac = Matrix(num_classes, x.size());
    for (std::size_t r = 0; r < num_classes; ++r) {
        const double a = (int(r) == y) ? sol.a1 : sol.a2;
        for (std::size_t j = 0; j < x.size(); ++j) sol.jac(r, j) = a * x[j];
    }
    return sol;
}

OptimalAffineSolution optimal_affine_rows(std::span<const double> x, int y, double alpha,
                                          OptimalLossMode mode, std::size_t num_classes) {
    Vector aug(x.begin(), x.end());
    aug.push_back(1.0);
    OptimalAffineSolution out;
    out.augmented = optimal_jacobian_rows(aug, y, alpha, mode, num_classes);
    out.jac = Matrix(num_classes, x.size());
    out.offset.resize(num_classes);
    for (std::size_t r = 0; r < num_classes; ++r) {
        for (std::size_t j = 0; j < x.size(); ++j) out.jac(r, j) = out.augmented.jac(r, j);
        out.offset[r] = out.augmented.jac(r, x.size());
    }
    return out;
}

double kkt_residual(const OptimalJacobianSolution& sol, std::span<const double> x, int y) {
    const std::size_t c = sol.num_classes;
    // z = J x, beta_c = dl/dz_c at z
    Vector z = linalg::matvec(sol.jac, x);
    Vector beta(c);
    if (sol.loss_mode == OptimalLossMode::squared_error_zero_beta2) {
        for (std::size_t r = 0; r < c; ++r) beta[r] = 2.0 * (z[r] - (int(r) == y ? 1.0 : 0.0));
    } else {
        double zmax = z[0];
        for (double v : z) zmax = std::max(zmax, v);
        double denom = 0.0;
        for (double v : z) denom += std::exp(v - zmax);
        for (std::size_t r = 0; r < c; ++r)
            beta[r] = std::exp(z[r] - zmax) / denom - (int(r) == y ? 1.0 : 0.0);
    }
    // s = sum_c <J^(c), beta_c x>
    double s = 0.0;
    for (std::size_t r = 0; r < c; ++r) s += beta[r] * dot(sol.jac.row(r), x);
    double res_sq = 0.0;
    for (std::size_t r = 0; r < c; ++r)
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double v = beta[r] * x[j] - (s / sol.alpha) * sol.jac(r, j);
            res_sq += v * v;
        }
    return std::sqrt(res_sq);
}

Matrix ntk_two_layer(const net::MlpNetwork& network, std::span<const double> x,
                     std::span<const double> xp) {
    if (network.depth() != 2 || network.hidden_acts[0] != net::Activation::relu)
        throw Error("bad-architecture: ntk_two_layer needs one hidden relu layer");
    if (network.layers[0].bias || network.layers[1].bias)
        throw Error("bad-architecture: ntk_two_layer requires a bias-free network");
    const Matrix& w1 = network.layers[0].weight;
    const Matrix& w2 = network.layers[1].weight;

    Vector z = linalg::matvec(w1, x);
    Vector zp = linalg::matvec(w1, xp);
    double sig = 0.0;
    Vector qq(w1.rows);
    for (std::size_t j = 0; j < w1.rows; ++j) {
        const double a = z[j] > 0.0 ? z[j] : 0.0;
        const double ap = zp[j] > 0.0 ? zp[j] : 0.0;
        sig += a * ap;
        qq[j] = (z[j] > 0.0 && zp[j] > 0.0) ? 1.0 : 0.0;
    }
    const double xdot = dot(x, xp);
    const std::size_t c = w2.rows;
    Matrix theta(c, c);
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            const auto ri = w2.row(i);
            const auto rj = w2.row(j);
            for (std::size_t k = 0; k < w2.cols; ++k) acc += ri[k] * qq[k] * rj[k];
            theta(i, j) = xdot * acc + (i == j ? sig : 0.0);
        }
    }
    return theta;
}

double centroid_dynamics_rhs(const net::MlpNetwork& network, std::span<const double> x,
                             const Matrix& batch_x, const Matrix& batch_targets, net::Loss loss,
                             double eta) {
    if (network.depth() != 2 || network.hidden_acts[0] != net::Activation::relu)
        throw Error("bad-architecture: centroid dynamics needs one hidden relu layer");
    const std::size_t n = batch_x.rows;
    net::ForwardTrace trace = net::forward_trace(network, batch_x);
    Matrix m = net::loss_output_gradients(trace.logits(), batch_targets, loss);
    linalg::scale(-1.0, m.data);  // m_i = -grad
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Matrix theta = ntk_two_layer(network, x, batch_x.row(i));
        // m_i^T Theta 1
        Vector theta_rowsum(theta.rows, 0.0);
        for (std::size_t r = 0; r < theta.rows; ++r) {
            double s = 0.0;
            for (std::size_t cidx = 0; cidx < theta.cols; ++cidx) s += theta(r, cidx);
            theta_rowsum[r] = s;
        }
        total += dot(m.row(i), theta_rowsum);
    }
    return eta / double(n) * total;
}

Vector feature_learning_indicator(std::span<const double> trace) {
    if (trace.size() < 3) throw Error("trace-too-short: need at least 3 points");
    Vector out(trace.size() - 2);
    for (std::size_t i = 0; i + 2 < trace.size(); ++i)
        out[i] = trace[i + 2] - 2.0 * trace[i + 1] + trace[i];
    return out;
}

BoundaryResult distance_to_boundary(std::span<const double> w, double a,
                                    std::span<const double> x) {
    const double wn = norm2(w);
    if (wn == 0.0) throw Error("zero-normal: boundary undefined");
    const double margin = dot(w, x) + a;
    BoundaryResult out;
    out.distance = std::abs(margin) / wn;
    out.minimizer.assign(w.begin(), w.end());
    linalg::scale(-margin / (wn * wn), out.minimizer);
    return out;
}

RobustnessResult local_robustness(const Matrix& jac, std::span<const double> b,
                                  std::span<const double> x, int y) {
    const std::size_t c = jac.rows;
    if (b.size() != c) throw Error("shape-mismatch: offsets");
    // pre: x is classified as y by the local affine model
    {
        Vector z = linalg::matvec(jac, x);
        for (std::size_t r = 0; r < c; ++r) z[r] += b[r];
        std::size_t arg = 0;
        for (std::size_t r = 1; r < c; ++r)
            if (z[r] > z[arg]) arg = r;
        if (int(arg) != y) throw Error("misclassified-point: local_robustness precondition");
    }
    RobustnessResult out;
    out.rho = std::numeric_limits<double>::infinity();
    Vector diff(jac.cols);
    for (std::size_t r = 0; r < c; ++r) {
        if (int(r) == y) continue;
        for (std::size_t j = 0; j < jac.cols; ++j) diff[j] = jac(y, j) - jac(r, j);
        const double wn = norm2(diff);
        const double boff = b[y] - b[r];
        if (wn < 1e-12) {
            out.has_tied_rows = true;  // contributes +inf
            continue;
        }
        out.lambda = std::max(out.lambda, std::abs(boff) / wn);
        const double rho_c = std::abs(dot(diff, x) + boff) / wn;
        if (rho_c < out.rho) {  // ties keep the smallest class index
            out.rho = rho_c;
            out.argmin_class = int(r);
        }
    }
    out.bound_holds = out.rho <= norm2(x) + out.lambda + 1e-9 * (1.0 + norm2(x));
    return out;
}

}  // namespace grokalign::geometry

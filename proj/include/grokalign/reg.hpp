#pragma once

#include <span>
#include <string>

#include "grokalign/config.hpp"
#include "grokalign/net.hpp"
#include "grokalign/rng.hpp"

namespace grokalign::reg {

using linalg::Matrix;
using linalg::Vector;

enum class RegKind { none, grokalign_output, grokalign_input, r_sigma, r_perp, r_nuc };
enum class ProbeDistribution { gaussian, rademacher };
enum class ProbeSide { input, output };

struct RegularizerSpec {
    RegKind kind = RegKind::none;
    double weight = 0.0;
    int probes = 1;
    double sigma = 0.1;          // r_sigma only
    std::size_t split_layer = 1; // r_nuc only
    ProbeDistribution distribution = ProbeDistribution::gaussian;

    void validate() const;
    // keys: reg.kind, reg.weight, reg.probes, reg.sigma, reg.split_layer, reg.distribution
    static RegularizerSpec from_config(const Config& cfg);
};

RegKind reg_kind_from_string(const std::string& name);
std::string to_string(RegKind kind);

// Hutchinson estimate of ||J_x||_F^2 with K probes on the chosen side.
double estimate_sq_frobenius(const net::MlpNetwork& network, std::span<const double> x, int probes,
                             ProbeSide side, Rng& rng,
                             ProbeDistribution dist = ProbeDistribution::gaussian);

// Deterministic K = C basis sweep, exact by completeness.
double sq_frobenius_basis_sweep(const net::MlpNetwork& network, std::span<const double> x);

// Estimates ||J_x P_{x_hat_perp}||_F^2 by projecting input probes off x.
double estimate_sq_frobenius_orthogonal(const net::MlpNetwork& network, std::span<const double> x,
                                        int probes, Rng& rng,
                                        ProbeDistribution dist = ProbeDistribution::gaussian);

struct AlignmentResidual {
    double residual = 0.0;  // min_c ||J - c x_hat^T||_F^2
    Vector c_star;          // J x_hat
};

AlignmentResidual alignment_residual(const Matrix& jac, std::span<const double> x);

// Monte-Carlo mean of ||f(x+eps) - f(x)||^2 / sigma^2, eps ~ N(0, sigma^2 I).
double r_sigma_penalty(const net::MlpNetwork& network, std::span<const double> x, double sigma,
                       int probes, Rng& rng);

// 0.5 (||J_{h(x)}(g)||_F^2 + ||J_x(h)||_F^2) with h = layers < split_layer,
// both norms estimated with output-side probes on the sub-networks.
double r_nuc_penalty(const net::MlpNetwork& network, std::span<const double> x,
                     std::size_t split_layer, int probes, Rng& rng,
                     ProbeDistribution dist = ProbeDistribution::gaussian);

struct PenalizedLoss {
    double total_loss = 0.0;
    double task_loss = 0.0;
    double penalty = 0.0;  // mean per-sample penalty, before weighting
    net::ParamGrads grads;
};

// L_task + weight * mean_i penalty(x_i), with gradients flowing through the
// estimator probes. Probes are a deterministic function of probe_seed and the
// sample index, so the scalar is differentiable-checkable by finite
// differences and reproducible across calls.
PenalizedLoss penalized_loss(const net::MlpNetwork& network, const Matrix& x, const Matrix& targets,
                             net::Loss loss, const RegularizerSpec& spec, std::uint64_t probe_seed);

}  // namespace grokalign::reg

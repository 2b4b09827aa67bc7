#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grokalign/linalg.hpp"
#include "grokalign/net.hpp"

namespace grokalign::geometry {

using linalg::Matrix;
using linalg::Vector;

// Power-diagram descriptor of the tile containing source_point:
// mu is the Jacobian row-sum, radius = ||mu||^2 + 2*1^T b_x.
struct CentroidDescriptor {
    Vector mu;
    double radius = 0.0;
    Vector source_point;
};

CentroidDescriptor centroid(const net::MlpNetwork& network, std::span<const double> x);

// Explicit (W2 Q_x W1)^T 1 for a single-hidden-layer relu network.
Vector centroid_two_layer(const net::MlpNetwork& network, std::span<const double> x);

struct AlignmentReport {
    double normal_alignment = 0.0;
    double effective_rank = 0.0;
    double centroid_alignment = 0.0;
    std::size_t skipped = 0;
    std::vector<double> per_sample_na;
    std::vector<double> per_sample_er;
    std::vector<double> per_sample_ca;

    std::string csv_row(long step) const;
};

// Evaluates na, er and centroid alignment in one Jacobian sweep over the rows
// of x. Zero samples and vanishing centroids are skipped and counted. When the
// top singular value has multiplicity > 1 the singular vector is not unique
// and the na contribution of that sample depends on the iteration seed; er
// and centroid alignment are unaffected.
AlignmentReport alignment_metrics(const net::MlpNetwork& network, const Matrix& x,
                                  bool keep_per_sample = false);

double normal_alignment_metric(const net::MlpNetwork& network, const Matrix& x);
double effective_rank_metric(const net::MlpNetwork& network, const Matrix& x);
double centroid_alignment_metric(const net::MlpNetwork& network, const Matrix& x);

// Same metrics over precomputed Jacobians (used by kernel models).
AlignmentReport alignment_metrics_from_jacobians(const std::vector<Matrix>& jacobians,
                                                 const Matrix& x);

double laguerre_distance(std::span<const double> x, std::span<const double> mu, double radius);

struct PowerDiagramReport {
    std::size_t points = 0;
    std::size_t violations = 0;
    std::size_t boundary_ties = 0;
};

// Enumerates all 2^width activation codes of one relu layer and checks that the
// Laguerre argmin recovers each sample's own code. width <= 12.
PowerDiagramReport verify_power_diagram_layer(const Matrix& w, const Vector& b,
                                              const Matrix& sample_points);

struct AlignedConstruction {
    net::MlpNetwork network;
    Vector second_layer_norms;  // 2/(1 - m_i) per training point
    Vector margins;             // m_i
    Matrix normalized_inputs;
    std::vector<int> labels;
};

// One-hidden-layer relu network that is normal-aligned to the given points:
// W1 rows are the unit inputs, b_i = -(1+m_i)/2, second layer scaled so that
// f(x_i) = one_hot(y_i).
AlignedConstruction build_aligned_network(const Matrix& x, std::span<const int> labels,
                                          std::size_t output_dim);

enum class OptimalLossMode { squared_error_zero_beta2, cross_entropy };

struct OptimalJacobianSolution {
    double a1 = 0.0;
    double a2 = 0.0;
    OptimalLossMode loss_mode = OptimalLossMode::squared_error_zero_beta2;
    double alpha = 0.0;
    double x_norm = 0.0;
    std::size_t num_classes = 0;
    Matrix jac;  // row y = a1 x^T, other rows a2 x^T
};

// Closed-form norm-constrained optimum; x is the augmented input (trailing 1).
OptimalJacobianSolution optimal_jacobian_rows(std::span<const double> x, int y, double alpha,
                                              OptimalLossMode mode, std::size_t num_classes);

// Convenience wrapper on the raw input: appends the trailing 1 and splits the
// result into (jacobian over x, offset column).
struct OptimalAffineSolution {
    OptimalJacobianSolution augmented;
    Matrix jac;
    Vector offset;
};
OptimalAffineSolution optimal_affine_rows(std::span<const double> x, int y, double alpha,
                                          OptimalLossMode mode, std::size_t num_classes);

// Stationarity residual of the constrained optimum given the actual loss
// gradient at z = J x (Frobenius norm of the KKT residual matrix).
double kkt_residual(const OptimalJacobianSolution& sol, std::span<const double> x, int y);

// Theta(x, x') for a one-hidden-layer relu network.
Matrix ntk_two_layer(const net::MlpNetwork& network, std::span<const double> x,
                     std::span<const double> xp);

// (eta/n) * sum_i m_i^T Theta(x, x_i) 1 with m_i the negative loss gradient.
double centroid_dynamics_rhs(const net::MlpNetwork& network, std::span<const double> x,
                             const Matrix& batch_x, const Matrix& batch_targets, net::Loss loss,
                             double eta);

// Discrete second differences of an epoch trace of <x, mu>.
Vector feature_learning_indicator(std::span<const double> trace);

struct BoundaryResult {
    double distance = 0.0;
    Vector minimizer;
};

BoundaryResult distance_to_boundary(std::span<const double> w, double a, std::span<const double> x);

struct RobustnessResult {
    double rho = 0.0;
    int argmin_class = -1;
    double lambda = 0.0;
    bool bound_holds = false;  // rho <= ||x|| + lambda
    bool has_tied_rows = false;
};

// min over c != y of |(J^(y)-J^(c))^T x + (b_y-b_c)| / ||J^(y)-J^(c)||.
RobustnessResult local_robustness(const Matrix& jac, std::span<const double> b,
                                  std::span<const double> x, int y);

}  // namespace grokalign::geometry

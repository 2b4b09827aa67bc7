#pragma once

#include <span>
#include <string>
#include <vector>

#include "grokalign/data.hpp"
#include "grokalign/geometry.hpp"
#include "grokalign/linalg.hpp"

namespace grokalign::kernels {

using linalg::Matrix;
using linalg::Vector;

// ---- Gaussian kernel logistic regression --------------------------------------

struct GaussianLogisticModel {
    Matrix w;        // C x K
    Matrix centers;  // K x d
    double gamma = 1.0;
};

Vector gklr_forward(const GaussianLogisticModel& model, std::span<const double> x);

struct GklrJacobian {
    Matrix full;          // C x d
    Matrix aligned_term;  // -2 gamma (sum_k W_ck phi_k) x^T
    Matrix center_term;   // +2 gamma sum_k W_ck phi_k tau_k^T
};

GklrJacobian gklr_jacobian(const GaussianLogisticModel& model, std::span<const double> x);

// Lloyd's k-means with greedy farthest-point seeding; returns k x d centers.
Matrix kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, int iterations = 25);

struct GklrEpochRow {
    long epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    geometry::AlignmentReport alignment;
};

struct GklrTrainResult {
    GaussianLogisticModel model;
    std::vector<GklrEpochRow> trace;
};

// Full-batch AdamW on cross-entropy over W and the centers; centers start at
// k-means of the training data; na/er logged on a capped train probe.
GklrTrainResult gklr_train(const data::LabeledDataset& train, const data::LabeledDataset& test,
                           std::size_t k_centers, double gamma, long epochs, double lr,
                           double weight_decay, std::uint64_t seed, long metric_interval = 10,
                           std::size_t metric_cap = 128);

// ---- Laplace-kernel feature machines -------------------------------------------

// exp(-gamma * sqrt((x-z)^T M (x-z))), M PSD.
double laplace_kernel_m(std::span<const double> x, std::span<const double> z, const Matrix& m,
                        double gamma);

struct KernelMachine {
    Matrix train_x;  // n x d
    Matrix alpha;    // n x C
    Matrix m;        // d x d feature matrix
    double gamma = 1.0;
    double ridge_eps = 1e-6;
};

Vector km_predict(const KernelMachine& km, std::span<const double> x);

// Rows: sum_i alpha_ic * (-gamma) phi * (M (x - x_i))^T / ||x - x_i||_M.
// Exact training-point self-terms are skipped (subgradient 0 at the kink).
Matrix km_jacobian(const KernelMachine& km, std::span<const double> x);

// (1/n) sum_i J_{x_i}^T J_{x_i}, symmetric PSD.
Matrix agop(const KernelMachine& km, const Matrix& x);

enum class MInit { identity, rfam };

struct RfmResult {
    KernelMachine machine;
    std::vector<Matrix> m_trace;  // M after each update, m_trace[0] = M_init
};

// Iterates: Gram under M -> ridge solve for alpha (one-hot targets) -> M from
// the AGOP. rfam init: (1-alpha) Cov(X) + alpha I.
RfmResult rfm_fit(const data::LabeledDataset& train, long iterations, double gamma,
                  double ridge_eps, MInit init, double rfam_alpha = 1.0);

struct SpanResidualReport {
    double full = 0.0;      // residual against span{x_i x_j^T}
    double diagonal = 0.0;  // residual against span{x_i x_i^T} (reported only)
};

SpanResidualReport span_residual(const Matrix& m_next, const Matrix& x);

double km_accuracy(const KernelMachine& km, const data::LabeledDataset& ds);

// Alignment metrics of the machine over dataset rows via km_jacobian.
geometry::AlignmentReport km_alignment(const KernelMachine& km, const Matrix& x,
                                       std::size_t cap = 0);

void save_machine(const KernelMachine& km, const std::string& path);
KernelMachine load_machine(const std::string& path);

}  // namespace grokalign::kernels

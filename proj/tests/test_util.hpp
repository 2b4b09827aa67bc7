#pragma once

// Shared independent oracles for the test suites. Everything here is written
// against the mathematical definitions, not the library's implementation
// paths, so it can act as a cross-check.

#include <algorithm>
#include <cmath>
#include <vector>

#include "grokalign/geometry.hpp"
#include "grokalign/linalg.hpp"
#include "grokalign/rng.hpp"

namespace test_util {

using grokalign::Rng;
using grokalign::linalg::Matrix;
using grokalign::linalg::Vector;

// Symmetric Jacobi eigenvalue iteration, enough for small test matrices.
inline Vector symmetric_eigenvalues(Matrix a) {
    const std::size_t n = a.rows;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-18) continue;
                const double theta = 0.5 * std::atan2(2.0 * a(p, q), a(q, q) - a(p, p));
                const double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
    }
    Vector eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

inline Vector singular_values(const Matrix& m) {
    const Matrix gram = m.rows <= m.cols ? grokalign::linalg::matmul_abt(m, m)
                                         : grokalign::linalg::matmul_atb(m, m);
    Vector eig = symmetric_eigenvalues(gram);
    for (double& v : eig) v = std::sqrt(std::max(0.0, v));
    return eig;
}

inline double nuclear_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : singular_values(m)) s += v;
    return s;
}

// Projected gradient descent over C x d matrices under ||J||_F^2 <= alpha.
// Independent of the closed-form construction it is used to verify.
struct PgResult {
    Matrix j;
    double objective = 0.0;
};

inline double pg_objective(const Matrix& j, const Vector& x, int y,
                           grokalign::geometry::OptimalLossMode mode) {
    using grokalign::geometry::OptimalLossMode;
    const Vector z = grokalign::linalg::matvec(j, x);
    if (mode == OptimalLossMode::squared_error_zero_beta2) {
        double s = 0.0;
        for (std::size_t c = 0; c < z.size(); ++c) {
            const double r = z[c] - (int(c) == y ? 1.0 : 0.0);
            s += r * r;
        }
        return s;
    }
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - zmax);
    return std::log(lse) + zmax - z[y];
}

inline PgResult projected_gradient_optimal_j(const Vector& x, int y, double alpha,
                                             grokalign::geometry::OptimalLossMode mode,
                                             std::size_t num_classes, std::uint64_t seed,
                                             int iters = 6000) {
    using grokalign::geometry::OptimalLossMode;
    namespace la = grokalign::linalg;
    const std::size_t d = x.size();
    Rng rng(seed);
    Matrix j(num_classes, d);
    for (double& v : j.data) v = 0.01 * rng.normal();

    const double radius = std::sqrt(alpha);
    const double xsq = la::norm2_sq(x);
    const double lr = 0.45 / xsq;
    for (int it = 0; it < iters; ++it) {
        const Vector z = la::matvec(j, x);
        Vector g(num_classes);
        if (mode == OptimalLossMode::squared_error_zero_beta2) {
            for (std::size_t c = 0; c < num_classes; ++c)
                g[c] = 2.0 * (z[c] - (int(c) == y ? 1.0 : 0.0));
        } else {
            double zmax = z[0];
            for (double v : z) zmax = std::max(zmax, v);
            double denom = 0.0;
            for (double v : z) denom += std::exp(v - zmax);
            for (std::size_t c = 0; c < num_classes; ++c)
                g[c] = std::exp(z[c] - zmax) / denom - (int(c) == y ? 1.0 : 0.0);
        }
        for (std::size_t c = 0; c < num_classes; ++c)
            la::axpy(-lr * g[c], x, j.row(c));
        const double fro = la::frobenius_norm(j);
        if (fro > radius) la::scale(radius / fro, j.data);
    }
    PgResult out;
    out.objective = pg_objective(j, x, y, mode);
    out.j = std::move(j);
    return out;
}

}  // namespace test_util

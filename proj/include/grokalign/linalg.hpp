#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace grokalign {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace linalg {

using Vector = std::vector<double>;

// Dense row-major matrix, the universal numeric carrier.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double a, std::span<const double> x, std::span<double> y);  // y += a*x
void scale(double a, std::span<double> x);
double norm2_sq(std::span<const double> x);
double norm2(std::span<const double> x);
void normalize(std::span<double> x);  // throws on zero vector

Matrix matmul(const Matrix& a, const Matrix& b);      // a(m,k) * b(k,n)
Matrix matmul_abt(const Matrix& a, const Matrix& b);  // a(m,k) * b(n,k)^T
Matrix matmul_atb(const Matrix& a, const Matrix& b);  // a(k,m)^T * b(k,n)
Vector matvec(const Matrix& a, std::span<const double> x);
Vector matvec_t(const Matrix& a, std::span<const double> x);  // a^T x
Matrix transpose(const Matrix& a);
Matrix outer(std::span<const double> u, std::span<const double> v);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double s);

double frobenius_sq(const Matrix& a);
double frobenius_norm(const Matrix& a);
bool all_finite(const Matrix& a);

// Dominant right singular pair of a rectangular matrix.
struct SingularPair {
    double sigma1 = 0.0;
    Vector v1;
    int iterations_used = 0;
};

// Carries the best iterate when power iteration fails to reach tol.
struct ConvergenceError : Error {
    ConvergenceError(const std::string& msg, SingularPair best_iterate)
        : Error(msg), best(std::move(best_iterate)) {}
    SingularPair best;
};

// Power iteration on the smaller Gram matrix of m; the returned pair satisfies
// ||m^T m v - sigma^2 v|| <= tol * sigma^2. Deterministic for a fixed seed.
SingularPair top_singular_pair(const Matrix& m, double tol = 1e-10, int max_iter = 5000,
                               std::uint64_t seed = 0);

// Solves (k + eps*I) a = y for symmetric k. Cholesky first, fully pivoted
// Gaussian elimination as fallback. Throws "singular-gram" when singular with
// eps == 0.
Matrix solve_ridge(const Matrix& k, const Matrix& y, double eps);

// Population covariance (divisor n) of the rows of x.
Matrix covariance(const Matrix& x);

}  // namespace linalg
}  // namespace grokalign

#include "grokalign/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "grokalign/rng.hpp"

namespace grokalign::linalg {

double dot(std::span<const double> a, std::span<const double> b) {
    // four accumulators so the loop vectorizes without -ffast-math
    const std::size_t n = a.size();
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale(double a, std::span<double> x) {
    for (double& v : x) v *= a;
}

double norm2_sq(std::span<const double> x) { return dot(x, x); }

double norm2(std::span<const double> x) { return std::sqrt(norm2_sq(x)); }

void normalize(std::span<double> x) {
    const double n = norm2(x);
    if (n == 0.0) throw Error("zero-vector: cannot normalize");
    scale(1.0 / n, x);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw Error("shape-mismatch: matmul");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        auto crow = c.row(i);
        for (std::size_t l = 0; l < a.cols; ++l) {
            const double s = a(i, l);
            if (s == 0.0) continue;
            axpy(s, b.row(l), crow);
        }
    }
    return c;
}

Matrix matmul_abt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw Error("shape-mismatch: matmul_abt");
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const auto arow = a.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) c(i, j) = dot(arow, b.row(j));
    }
    return c;
}

Matrix matmul_atb(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw Error("shape-mismatch: matmul_atb");
    Matrix c(a.cols, b.cols);
    for (std::size_t l = 0; l < a.rows; ++l) {
        const auto brow = b.row(l);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double s = a(l, i);
            if (s == 0.0) continue;
            axpy(s, brow, c.row(i));
        }
    }
    return c;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols != x.size()) throw Error("shape-mismatch: matvec");
    Vector y(a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) y[i] = dot(a.row(i), x);
    return y;
}

Vector matvec_t(const Matrix& a, std::span<const double> x) {
    if (a.rows != x.size()) throw Error("shape-mismatch: matvec_t");
    Vector y(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) axpy(x[i], a.row(i), y);
    return y;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

Matrix outer(std::span<const double> u, std::span<const double> v) {
    Matrix m(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i) axpy(u[i], v, m.row(i));
    return m;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw Error("shape-mismatch: add");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw Error("shape-mismatch: sub");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

Matrix scaled(const Matrix& a, double s) {
    Matrix c = a;
    scale(s, c.data);
    return c;
}

double frobenius_sq(const Matrix& a) { return norm2_sq(a.data); }

double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_sq(a)); }

bool all_finite(const Matrix& a) {
    for (double v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

SingularPair top_singular_pair(const Matrix& m, double tol, int max_iter, std::uint64_t seed) {
    if (tol <= 0.0) throw Error("bad-tolerance: top_singular_pair requires tol > 0");
    if (m.rows == 0 || m.cols == 0) throw Error("degenerate-matrix: empty");
    const double fro = frobenius_norm(m);
    if (fro == 0.0) throw Error("degenerate-matrix: zero matrix has no dominant singular pair");

    // Iterate on the smaller Gram matrix, then map back to the right vector.
    const bool use_left = m.rows < m.cols;
    const Matrix gram = use_left ? matmul_abt(m, m) : matmul_atb(m, m);
    const std::size_t n = gram.rows;

    Rng rng(derive_seed(seed, 0x9e1));
    Vector w(n);
    for (double& v : w) v = rng.normal();
    normalize(w);

    double lambda = 0.0;
    int used = 0;
    auto residual_ok = [&](const Vector& vec, double lam) {
        Vector gw = matvec(gram, vec);
        Vector r = gw;
        axpy(-lam, vec, r);
        return norm2(r) <= tol * lam;
    };
    for (int it = 1; it <= max_iter; ++it) {
        Vector next = matvec(gram, w);
        const double nn = norm2(next);
        if (nn == 0.0) throw Error("degenerate-matrix: start vector annihilated");
        scale(1.0 / nn, next);
        lambda = dot(matvec(gram, next), next);
        w = std::move(next);
        used = it;
        if (it % 8 == 0 || it == max_iter) {
            if (residual_ok(w, lambda)) break;
        }
    }

    auto finish = [&](const Vector& gw, double lam, int iters) {
        SingularPair out;
        out.sigma1 = std::sqrt(std::max(0.0, lam));
        out.iterations_used = iters;
        if (use_left) {
            out.v1 = matvec_t(m, gw);
            const double nv = norm2(out.v1);
            if (nv == 0.0) throw Error("degenerate-matrix: null right vector");
            scale(1.0 / nv, out.v1);
        } else {
            out.v1 = gw;
        }
        return out;
    };

    SingularPair result = finish(w, lambda, used);
    // the contract is on m^T m directly, re-check in the original space
    {
        Vector mv = matvec(m, result.v1);
        Vector mtmv = matvec_t(m, mv);
        Vector r = mtmv;
        const double s2 = result.sigma1 * result.sigma1;
        axpy(-s2, result.v1, r);
        if (s2 == 0.0 || norm2(r) > tol * s2) {
            if (used >= max_iter)
                throw ConvergenceError("no-convergence: power iteration hit max_iter", result);
            // polish in the original space
            Vector v = result.v1;
            for (int it = used; it <= max_iter; ++it) {
                Vector t = matvec_t(m, matvec(m, v));
                const double nn = norm2(t);
                if (nn == 0.0) throw Error("degenerate-matrix: iterate annihilated");
                scale(1.0 / nn, t);
                v = std::move(t);
                result.iterations_used = it;
                Vector mv2 = matvec(m, v);
                const double lam2 = norm2_sq(mv2);
                Vector r2 = matvec_t(m, mv2);
                axpy(-lam2, v, r2);
                if (norm2(r2) <= tol * lam2) {
                    result.v1 = v;
                    result.sigma1 = std::sqrt(lam2);
                    return result;
                }
            }
            result.v1 = v;
            result.sigma1 = norm2(matvec(m, v));
            throw ConvergenceError("no-convergence: power iteration hit max_iter", result);
        }
    }
    return result;
}

namespace {

// returns false when the matrix is numerically non-SPD
bool cholesky_solve(Matrix a, Matrix& y) {
    const std::size_t n = a.rows;
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (d <= 0.0 || !std::isfinite(d)) return false;
        const double l = std::sqrt(d);
        a(j, j) = l;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            const auto ri = a.row(i);
            const auto rj = a.row(j);
            s -= dot(ri.subspan(0, j), rj.subspan(0, j));
            a(i, j) = s / l;
        }
    }
    // forward then backward substitution, column by column of y
    for (std::size_t c = 0; c < y.cols; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = y(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= a(i, k) * y(k, c);
            y(i, c) = s / a(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y(ii, c);
            for (std::size_t k = ii + 1; k < n; ++k) s -= a(k, ii) * y(k, c);
            y(ii, c) = s / a(ii, ii);
        }
    }
    return true;
}

bool full_pivot_solve(Matrix a, Matrix y, Matrix& out) {
    const std::size_t n = a.rows;
    std::vector<std::size_t> col_perm(n);
    for (std::size_t i = 0; i < n; ++i) col_perm[i] = i;

    for (std::size_t k = 0; k < n; ++k) {
        double best = 0.0;
        std::size_t pi = k, pj = k;
        for (std::size_t i = k; i < n; ++i)
            for (std::size_t j = k; j < n; ++j)
                if (std::abs(a(i, j)) > best) {
                    best = std::abs(a(i, j));
                    pi = i;
                    pj = j;
                }
        if (best < 1e-300) return false;
        if (pi != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(pi, j));
            for (std::size_t c = 0; c < y.cols; ++c) std::swap(y(k, c), y(pi, c));
        }
        if (pj != k) {
            for (std::size_t i = 0; i < n; ++i) std::swap(a(i, k), a(i, pj));
            std::swap(col_perm[k], col_perm[pj]);
        }
        const double piv = a(k, k);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a(i, k) / piv;
            if (f == 0.0) continue;
            a(i, k) = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
            for (std::size_t c = 0; c < y.cols; ++c) y(i, c) -= f * y(k, c);
        }
    }
    Matrix z(n, y.cols);
    for (std::size_t c = 0; c < y.cols; ++c)
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y(ii, c);
            for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * z(j, c);
            z(ii, c) = s / a(ii, ii);
        }
    out = Matrix(n, y.cols);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < y.cols; ++c) out(col_perm[i], c) = z(i, c);
    return true;
}

}  // namespace

Matrix solve_ridge(const Matrix& k, const Matrix& y, double eps) {
    if (k.rows != k.cols) throw Error("shape-mismatch: solve_ridge needs square k");
    if (k.rows != y.rows) throw Error("shape-mismatch: solve_ridge rhs");
    if (eps < 0.0) throw Error("bad-eps: ridge term must be nonnegative");
    const double scale_k = std::max(1.0, frobenius_norm(k));
    for (std::size_t i = 0; i < k.rows; ++i)
        for (std::size_t j = i + 1; j < k.cols; ++j)
            if (std::abs(k(i, j) - k(j, i)) > 1e-8 * scale_k)
                throw Error("non-symmetric: solve_ridge input");

    Matrix a = k;
    for (std::size_t i = 0; i < a.rows; ++i) a(i, i) += eps;

    Matrix sol = y;
    if (cholesky_solve(a, sol)) return sol;

    Matrix out;
    if (full_pivot_solve(a, y, out)) return out;
    throw Error("singular-gram: matrix not solvable with eps = " + std::to_string(eps));
}

Matrix covariance(const Matrix& x) {
    if (x.rows == 0) throw Error("empty-input: covariance needs n >= 1");
    const std::size_t n = x.rows, d = x.cols;
    Vector mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) axpy(1.0, x.row(i), mean);
    scale(1.0 / double(n), mean);

    Matrix c(d, d);
    Vector centered(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = x.row(i);
        for (std::size_t j = 0; j < d; ++j) centered[j] = r[j] - mean[j];
        for (std::size_t j = 0; j < d; ++j) {
            if (centered[j] == 0.0) continue;
            axpy(centered[j], centered, c.row(j));
        }
    }
    scale(1.0 / double(n), c.data);
    // enforce exact symmetry against round-off
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) {
            const double v = 0.5 * (c(i, j) + c(j, i));
            c(i, j) = v;
            c(j, i) = v;
        }
    return c;
}

}  // namespace grokalign::linalg

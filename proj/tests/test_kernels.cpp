#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "grokalign/kernels.hpp"
#include "grokalign/rng.hpp"
#include "test_util.hpp"

using namespace grokalign;
using linalg::Matrix;
using linalg::Vector;

namespace {

Vector random_vector(std::size_t n, Rng& rng) {
    Vector v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

Matrix random_psd(std::size_t d, Rng& rng) {
    Matrix a(d, d);
    for (double& v : a.data) v = rng.normal();
    Matrix m = linalg::matmul_atb(a, a);
    linalg::scale(1.0 / double(d), m.data);
    for (std::size_t i = 0; i < d; ++i) m(i, i) += 0.1;
    return m;
}

// minimal Gaussian elimination, independent of linalg::solve_ridge
Matrix tiny_solve(Matrix a, Matrix y) {
    const std::size_t n = a.rows;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
        for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
        for (std::size_t c = 0; c < y.cols; ++c) std::swap(y(k, c), y(piv, c));
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a(i, k) / a(k, k);
            for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
            for (std::size_t c = 0; c < y.cols; ++c) y(i, c) -= f * y(k, c);
        }
    }
    Matrix x(n, y.cols);
    for (std::size_t c = 0; c < y.cols; ++c)
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y(ii, c);
            for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * x(j, c);
            x(ii, c) = s / a(ii, ii);
        }
    return x;
}

}  // namespace

TEST_CASE("gklr forward at a center with unit weight") {
    kernels::GaussianLogisticModel model;
    model.gamma = 0.5;
    model.centers = Matrix(1, 3);
    model.centers(0, 0) = 1.0;
    model.centers(0, 2) = -1.0;
    model.w = Matrix(2, 1);
    model.w(0, 0) = 1.0;
    const Vector at_center = {1.0, 0.0, -1.0};
    const Vector z = kernels::gklr_forward(model, at_center);
    CHECK(z[0] == doctest::Approx(1.0));
    CHECK(z[1] == doctest::Approx(0.0));

    // distance^2 = 1/gamma gives the e^-1 feature
    Vector off = at_center;
    off[1] += std::sqrt(1.0 / model.gamma);
    CHECK(kernels::gklr_forward(model, off)[0] == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("gklr forward matches the naive double loop") {
    Rng rng(51);
    kernels::GaussianLogisticModel model;
    model.gamma = 0.3;
    model.centers = Matrix(6, 4);
    for (double& v : model.centers.data) v = rng.normal();
    model.w = Matrix(3, 6);
    for (double& v : model.w.data) v = rng.normal();
    const Vector x = random_vector(4, rng);
    const Vector z = kernels::gklr_forward(model, x);
    for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 6; ++k) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                const double v = x[j] - model.centers(k, j);
                d2 += v * v;
            }
            acc += model.w(c, k) * std::exp(-model.gamma * d2);
        }
        CHECK(z[c] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("gklr jacobian: centers at the origin leave only the aligned term") {
    Rng rng(53);
    kernels::GaussianLogisticModel model;
    model.gamma = 0.7;
    model.centers = Matrix(4, 3);  // all zero centers
    model.w = Matrix(2, 4);
    for (double& v : model.w.data) v = rng.normal();
    const Vector x = random_vector(3, rng);
    const auto jac = kernels::gklr_jacobian(model, x);
    for (double v : jac.center_term.data) CHECK(v == doctest::Approx(0.0));
    for (std::size_t i = 0; i < jac.full.data.size(); ++i)
        CHECK(jac.full.data[i] == doctest::Approx(jac.aligned_term.data[i]));
    // and x = 0 keeps only the center term
    kernels::GaussianLogisticModel model2 = model;
    for (double& v : model2.centers.data) v = rng.normal();
    const Vector zero(3, 0.0);
    const auto jac2 = kernels::gklr_jacobian(model2, zero);
    for (double v : jac2.aligned_term.data) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("gklr jacobian matches finite differences") {
    Rng rng(55);
    kernels::GaussianLogisticModel model;
    model.gamma = 0.4;
    model.centers = Matrix(5, 4);
    for (double& v : model.centers.data) v = rng.normal();
    model.w = Matrix(3, 5);
    for (double& v : model.w.data) v = rng.normal();
    const Vector x = random_vector(4, rng);
    const auto jac = kernels::gklr_jacobian(model, x);
    const double step = 1e-6;
    Vector xp(x), xm(x);
    for (std::size_t k = 0; k < 4; ++k) {
        xp[k] = x[k] + step;
        xm[k] = x[k] - step;
        const Vector fp = kernels::gklr_forward(model, xp);
        const Vector fm = kernels::gklr_forward(model, xm);
        for (std::size_t c = 0; c < 3; ++c) {
            const double fd = (fp[c] - fm[c]) / (2.0 * step);
            CHECK(std::abs(jac.full(c, k) - fd) <= 1e-5 * (1.0 + std::abs(fd)));
        }
        xp[k] = x[k];
        xm[k] = x[k];
    }
}

TEST_CASE("gklr training separates two blobs and zero epochs is a no-op") {
    auto split = data::gen_gaussian_blobs(250, 5, 2, 6.0, 57);
    const auto zero = kernels::gklr_train(split.train, split.test, 8, 0.1, 0, 0.01, 0.001, 1, 10);
    REQUIRE(zero.trace.size() == 1);  // init row only

    const auto res = kernels::gklr_train(split.train, split.test, 8, 0.1, 200, 0.01, 0.001, 1, 50);
    CHECK(res.trace.back().test_acc == doctest::Approx(1.0));
}

TEST_CASE("laplace kernel values and scale identity") {
    const Vector x = {1.0, 0.0};
    const Vector z = {0.0, 0.0};
    CHECK(kernels::laplace_kernel_m(x, x, Matrix::identity(2), 1.0) == doctest::Approx(1.0));
    CHECK(kernels::laplace_kernel_m(x, z, Matrix::identity(2), 1.0) ==
          doctest::Approx(std::exp(-1.0)));
    // M = 2I at gamma equals M = I at gamma*sqrt(2)
    const Matrix two_i = linalg::scaled(Matrix::identity(2), 2.0);
    Rng rng(59);
    for (int t = 0; t < 10; ++t) {
        const Vector a = random_vector(2, rng), b = random_vector(2, rng);
        CHECK(kernels::laplace_kernel_m(a, b, two_i, 0.8) ==
              doctest::Approx(kernels::laplace_kernel_m(a, b, Matrix::identity(2),
                                                        0.8 * std::sqrt(2.0)))
                  .epsilon(1e-12));
    }
    Matrix neg = Matrix::identity(2);
    neg(0, 0) = -1.0;
    CHECK_THROWS_WITH_AS(kernels::laplace_kernel_m(x, z, neg, 1.0), doctest::Contains("non-psd"),
                         Error);
}

TEST_CASE("km_predict at a lone training point") {
    kernels::KernelMachine km;
    km.train_x = Matrix(1, 3);
    km.train_x(0, 0) = 0.5;
    km.alpha = Matrix(1, 1);
    km.alpha(0, 0) = 1.0;
    km.m = Matrix::identity(3);
    km.gamma = 2.0;
    const Vector z = kernels::km_predict(km, km.train_x.row(0));
    CHECK(z[0] == doctest::Approx(1.0));
}

TEST_CASE("km_jacobian matches finite differences away from centers") {
    Rng rng(61);
    kernels::KernelMachine km;
    km.train_x = Matrix(6, 4);
    for (double& v : km.train_x.data) v = rng.normal();
    km.alpha = Matrix(6, 2);
    for (double& v : km.alpha.data) v = rng.normal();
    km.m = random_psd(4, rng);
    km.gamma = 0.6;
    const Vector x = random_vector(4, rng);  // generic point, not a center
    const Matrix jac = kernels::km_jacobian(km, x);
    const double step = 1e-6;
    Vector xp(x), xm(x);
    for (std::size_t k = 0; k < 4; ++k) {
        xp[k] = x[k] + step;
        xm[k] = x[k] - step;
        const Vector fp = kernels::km_predict(km, xp);
        const Vector fm = kernels::km_predict(km, xm);
        for (std::size_t c = 0; c < 2; ++c) {
            const double fd = (fp[c] - fm[c]) / (2.0 * step);
            CHECK(std::abs(jac(c, k) - fd) <= 1e-5 * (1.0 + std::abs(fd)));
        }
        xp[k] = x[k];
        xm[k] = x[k];
    }
    // M = I reduces to the plain laplace kernel gradient: check the direction
    km.m = Matrix::identity(4);
    const Matrix plain = kernels::km_jacobian(km, x);
    CHECK(linalg::all_finite(plain));
}

TEST_CASE("km_jacobian rows lie in the column space of M") {
    Rng rng(63);
    // rank-2 M in 5 dims
    Matrix a(5, 2);
    for (double& v : a.data) v = rng.normal();
    Matrix m = linalg::matmul_abt(a, a);
    kernels::KernelMachine km;
    km.train_x = Matrix(7, 5);
    for (double& v : km.train_x.data) v = rng.normal();
    km.alpha = Matrix(7, 3);
    for (double& v : km.alpha.data) v = rng.normal();
    km.m = m;
    km.gamma = 0.5;
    const Vector x = random_vector(5, rng);
    const Matrix jac = kernels::km_jacobian(km, x);
    // least squares of each row onto col(A) should have ~zero residual
    const Matrix ata = linalg::matmul_atb(a, a);
    for (std::size_t r = 0; r < jac.rows; ++r) {
        Matrix rhs(2, 1);
        const Vector atr = linalg::matvec_t(a, jac.row(r));
        rhs(0, 0) = atr[0];
        rhs(1, 0) = atr[1];
        const Matrix z = tiny_solve(ata, rhs);
        Vector proj(5, 0.0);
        for (std::size_t j = 0; j < 5; ++j)
            proj[j] = a(j, 0) * z(0, 0) + a(j, 1) * z(1, 0);
        Vector res(jac.row(r).begin(), jac.row(r).end());
        linalg::axpy(-1.0, proj, res);
        CHECK(linalg::norm2(res) <= 1e-9 * (1.0 + linalg::norm2(jac.row(r))));
    }
}

TEST_CASE("agop: zero alpha gives the zero matrix, dense oracle and psd") {
    Rng rng(65);
    kernels::KernelMachine km;
    km.train_x = Matrix(8, 4);
    for (double& v : km.train_x.data) v = rng.normal();
    km.alpha = Matrix(8, 2);
    km.m = Matrix::identity(4);
    km.gamma = 0.8;
    const Matrix zero = kernels::agop(km, km.train_x);
    for (double v : zero.data) CHECK(v == 0.0);

    for (double& v : km.alpha.data) v = rng.normal();
    const Matrix m = kernels::agop(km, km.train_x);
    // dense oracle
    Matrix oracle(4, 4);
    for (std::size_t i = 0; i < 8; ++i) {
        const Matrix j = kernels::km_jacobian(km, km.train_x.row(i));
        const Matrix jtj = linalg::matmul_atb(j, j);
        for (std::size_t t = 0; t < 16; ++t) oracle.data[t] += jtj.data[t] / 8.0;
    }
    for (std::size_t t = 0; t < 16; ++t)
        CHECK(m.data[t] == doctest::Approx(oracle.data[t]).epsilon(1e-10));
    for (int t = 0; t < 100; ++t) {
        const Vector v = random_vector(4, rng);
        CHECK(linalg::dot(v, linalg::matvec(m, v)) >= -1e-12);
    }
}

TEST_CASE("aligned jacobians make the agop a combination of x_i x_i^T") {
    Rng rng(67);
    const std::size_t n = 5, d = 4;
    Matrix x(n, d);
    for (double& v : x.data) v = rng.normal();
    Matrix oracle(d, d);
    Matrix direct(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        const Vector c = random_vector(3, rng);
        const Matrix j = linalg::outer(c, x.row(i));
        const Matrix jtj = linalg::matmul_atb(j, j);
        for (std::size_t t = 0; t < d * d; ++t) direct.data[t] += jtj.data[t] / double(n);
        const double cn = linalg::norm2_sq(c) / double(n);
        const Matrix outer_x = linalg::outer(x.row(i), x.row(i));
        for (std::size_t t = 0; t < d * d; ++t) oracle.data[t] += cn * outer_x.data[t];
    }
    for (std::size_t t = 0; t < d * d; ++t)
        CHECK(direct.data[t] == doctest::Approx(oracle.data[t]).epsilon(1e-12));
}

TEST_CASE("rfm single iteration matches a scripted oracle") {
    Rng rng(69);
    data::LabeledDataset train;
    train.x = Matrix(4, 3);
    for (double& v : train.x.data) v = rng.normal();
    train.y = {0, 1, 1, 0};
    train.num_classes = 2;
    const double gamma = 0.9, eps = 1e-6;
    const auto fit = kernels::rfm_fit(train, 1, gamma, eps, kernels::MInit::identity);

    // oracle: K under I, alpha = (K + eps I)^-1 Y, M = (1/n) sum J^T J, final
    // alpha solved again under the updated M
    Matrix k0(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            Vector diff(3);
            for (std::size_t t = 0; t < 3; ++t) diff[t] = train.x(i, t) - train.x(j, t);
            k0(i, j) = std::exp(-gamma * linalg::norm2(diff));
        }
    Matrix y(4, 2);
    y(0, 0) = 1.0;
    y(1, 1) = 1.0;
    y(2, 1) = 1.0;
    y(3, 0) = 1.0;
    Matrix k0_ridge = k0;
    for (std::size_t i = 0; i < 4; ++i) k0_ridge(i, i) += eps;
    const Matrix alpha0 = tiny_solve(k0_ridge, y);

    Matrix m1(3, 3);
    for (std::size_t i = 0; i < 4; ++i) {
        Matrix j(2, 3);
        for (std::size_t s = 0; s < 4; ++s) {
            if (s == i) continue;  // self term skipped
            Vector diff(3);
            for (std::size_t t = 0; t < 3; ++t) diff[t] = train.x(i, t) - train.x(s, t);
            const double dist = linalg::norm2(diff);
            const double phi = std::exp(-gamma * dist);
            for (std::size_t c = 0; c < 2; ++c)
                for (std::size_t t = 0; t < 3; ++t)
                    j(c, t) += alpha0(s, c) * (-gamma) * phi * diff[t] / dist;
        }
        const Matrix jtj = linalg::matmul_atb(j, j);
        for (std::size_t t = 0; t < 9; ++t) m1.data[t] += jtj.data[t] / 4.0;
    }
    REQUIRE(fit.m_trace.size() == 2);
    for (std::size_t t = 0; t < 9; ++t)
        CHECK(fit.m_trace[1].data[t] == doctest::Approx(m1.data[t]).epsilon(1e-9));
    for (std::size_t t = 0; t < 9; ++t)
        CHECK(fit.machine.m.data[t] == doctest::Approx(m1.data[t]).epsilon(1e-9));

    // final alpha solves the gram under M1
    Matrix k1(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            Vector diff(3);
            for (std::size_t t = 0; t < 3; ++t) diff[t] = train.x(i, t) - train.x(j, t);
            const Vector md = linalg::matvec(m1, diff);
            k1(i, j) = std::exp(-gamma * std::sqrt(std::max(0.0, linalg::dot(diff, md))));
        }
    for (std::size_t i = 0; i < 4; ++i) k1(i, i) += eps;
    const Matrix alpha1 = tiny_solve(k1, y);
    for (std::size_t t = 0; t < alpha1.data.size(); ++t)
        CHECK(fit.machine.alpha.data[t] == doctest::Approx(alpha1.data[t]).epsilon(1e-7));
}

TEST_CASE("rfm inits: alpha 1 is the identity, alpha 0 the covariance") {
    data::SplitDataset split = data::gen_synthetic_tabular(30, 4, 2, 0.5, 71);
    const auto id_fit = kernels::rfm_fit(split.train, 1, 1.0, 1e-6, kernels::MInit::rfam, 1.0);
    const Matrix eye = Matrix::identity(4);
    for (std::size_t t = 0; t < 16; ++t) CHECK(id_fit.m_trace[0].data[t] == eye.data[t]);
    const auto cov_fit = kernels::rfm_fit(split.train, 1, 1.0, 1e-6, kernels::MInit::rfam, 0.0);
    const Matrix cov = linalg::covariance(split.train.x);
    for (std::size_t t = 0; t < 16; ++t)
        CHECK(cov_fit.m_trace[0].data[t] == doctest::Approx(cov.data[t]).epsilon(1e-12));
}

TEST_CASE("training set interpolation with a small ridge") {
    data::SplitDataset split = data::gen_synthetic_tabular(30, 5, 3, 0.5, 73);
    data::standardize(split);
    const auto fit = kernels::rfm_fit(split.train, 1, 1.0, 1e-8, kernels::MInit::identity);
    // ||K alpha - Y|| <= 1e-5 ||Y|| under the machine's own gram
    const std::size_t n = split.train.size();
    Matrix gram(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            gram(i, j) = kernels::laplace_kernel_m(split.train.x.row(i), split.train.x.row(j),
                                                   fit.machine.m, fit.machine.gamma);
    const Matrix y = net::one_hot_targets(split.train.y, 3);
    const Matrix back = linalg::matmul(gram, fit.machine.alpha);
    CHECK(linalg::frobenius_norm(linalg::sub(back, y)) <= 1e-5 * linalg::frobenius_norm(y));
}

TEST_CASE("span residual examples") {
    Rng rng(75);
    Matrix x(2, 3);
    for (double& v : x.data) v = rng.normal();
    const Matrix m = linalg::outer(x.row(0), x.row(0));
    CHECK(kernels::span_residual(m, x).full <= 1e-12);

    Matrix e1(1, 2);
    e1(0, 0) = 1.0;
    const auto rep = kernels::span_residual(Matrix::identity(2), e1);
    CHECK(rep.full == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("prop-5 fixed point: in-span starts stay in span across iterations") {
    data::SplitDataset split = data::gen_synthetic_tabular(24, 6, 2, 0.8, 77);
    data::standardize(split);
    const auto fit = kernels::rfm_fit(split.train, 4, 1.0, 1e-6, kernels::MInit::rfam, 0.0);
    REQUIRE(fit.m_trace.size() == 5);
    for (const Matrix& m : fit.m_trace) {
        const auto rep = kernels::span_residual(m, split.train.x);
        CHECK(rep.full <= 1e-6);
    }
    // symmetry and psd preserved across iterations
    Rng rng(78);
    for (const Matrix& m : fit.m_trace) {
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j)
                CHECK(m(i, j) == doctest::Approx(m(j, i)).epsilon(1e-10));
        for (int t = 0; t < 20; ++t) {
            const Vector v = random_vector(6, rng);
            CHECK(linalg::dot(v, linalg::matvec(m, v)) >= -1e-10);
        }
    }
}

TEST_CASE("kernel machine checkpoint round-trips exactly") {
    Rng rng(79);
    kernels::KernelMachine km;
    km.train_x = Matrix(5, 3);
    for (double& v : km.train_x.data) v = rng.normal();
    km.alpha = Matrix(5, 2);
    for (double& v : km.alpha.data) v = rng.normal();
    km.m = random_psd(3, rng);
    km.gamma = 0.37;
    km.ridge_eps = 1e-7;
    const std::string path = "km_roundtrip.bin";
    kernels::save_machine(km, path);
    const auto back = kernels::load_machine(path);
    CHECK(back.gamma == km.gamma);
    CHECK(back.ridge_eps == km.ridge_eps);
    for (std::size_t t = 0; t < km.train_x.data.size(); ++t)
        CHECK(back.train_x.data[t] == km.train_x.data[t]);
    for (std::size_t t = 0; t < km.alpha.data.size(); ++t)
        CHECK(back.alpha.data[t] == km.alpha.data[t]);
    for (std::size_t t = 0; t < km.m.data.size(); ++t) CHECK(back.m.data[t] == km.m.data[t]);
    std::remove(path.c_str());
}

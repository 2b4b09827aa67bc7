#include "grokalign/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "grokalign/net.hpp"
#include "grokalign/optim.hpp"
#include "grokalign/rng.hpp"

namespace grokalign::kernels {

using linalg::axpy;
using linalg::dot;
using linalg::norm2;
using linalg::norm2_sq;

Vector gklr_forward(const GaussianLogisticModel& model, std::span<const double> x) {
    const std::size_t k = model.centers.rows;
    Vector phi(k);
    for (std::size_t j = 0; j < k; ++j) {
        double d2 = 0.0;
        const auto tau = model.centers.row(j);
        for (std::size_t t = 0; t < tau.size(); ++t) {
            const double v = x[t] - tau[t];
            d2 += v * v;
        }
        phi[j] = std::exp(-model.gamma * d2);
    }
    return linalg::matvec(model.w, phi);
}

GklrJacobian gklr_jacobian(const GaussianLogisticModel& model, std::span<const double> x) {
    const std::size_t k = model.centers.rows;
    const std::size_t c = model.w.rows;
    const std::size_t d = model.centers.cols;
    Vector phi(k);
    for (std::size_t j = 0; j < k; ++j) {
        double d2 = 0.0;
        const auto tau = model.centers.row(j);
        for (std::size_t t = 0; t < d; ++t) {
            const double v = x[t] - tau[t];
            d2 += v * v;
        }
        phi[j] = std::exp(-model.gamma * d2);
    }
    GklrJacobian out;
    out.aligned_term = Matrix(c, d);
    out.center_term = Matrix(c, d);
    for (std::size_t ci = 0; ci < c; ++ci) {
        double coeff = 0.0;
        const auto wrow = model.w.row(ci);
        for (std::size_t j = 0; j < k; ++j) coeff += wrow[j] * phi[j];
        auto aligned = out.aligned_term.row(ci);
        for (std::size_t t = 0; t < d; ++t) aligned[t] = -2.0 * model.gamma * coeff * x[t];
        auto center = out.center_term.row(ci);
        for (std::size_t j = 0; j < k; ++j) {
            const double s = 2.0 * model.gamma * wrow[j] * phi[j];
            if (s == 0.0) continue;
            axpy(s, model.centers.row(j), center);
        }
    }
    out.full = linalg::add(out.aligned_term, out.center_term);
    return out;
}

Matrix kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, int iterations) {
    const std::size_t n = x.rows, d = x.cols;
    if (k == 0 || k > n) throw Error("bad-params: kmeans needs 1 <= k <= n");
    Rng rng(derive_seed(seed, 0x6b6d));
    Matrix centers(k, d);
    // greedy farthest-point seeding from a random start
    std::vector<std::size_t> chosen;
    chosen.push_back(std::size_t(rng.uniform_int(0, std::int64_t(n) - 1)));
    Vector min_d2(n, std::numeric_limits<double>::infinity());
    while (chosen.size() < k) {
        const auto last = x.row(chosen.back());
        for (std::size_t i = 0; i < n; ++i) {
            double d2 = 0.0;
            const auto xi = x.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                const double v = xi[j] - last[j];
                d2 += v * v;
            }
            min_d2[i] = std::min(min_d2[i], d2);
        }
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (min_d2[i] > min_d2[far]) far = i;
        chosen.push_back(far);
    }
    for (std::size_t j = 0; j < k; ++j)
        std::copy(x.row(chosen[j]).begin(), x.row(chosen[j]).end(), centers.row(j).begin());

    std::vector<std::size_t> assign(n, 0);
    for (int it = 0; it < iterations; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            const auto xi = x.row(i);
            for (std::size_t j = 0; j < k; ++j) {
                double d2 = 0.0;
                const auto cj = centers.row(j);
                for (std::size_t t = 0; t < d; ++t) {
                    const double v = xi[t] - cj[t];
                    d2 += v * v;
                }
                if (d2 < best) {
                    best = d2;
                    arg = j;
                }
            }
            if (assign[i] != arg) changed = true;
            assign[i] = arg;
        }
        Matrix sums(k, d);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            axpy(1.0, x.row(i), sums.row(assign[i]));
            ++counts[assign[i]];
        }
        for (std::size_t j = 0; j < k; ++j)
            if (counts[j] > 0) {
                linalg::scale(1.0 / double(counts[j]), sums.row(j));
                std::copy(sums.row(j).begin(), sums.row(j).end(), centers.row(j).begin());
            }
        if (!changed) break;
    }
    return centers;
}

GklrTrainResult gklr_train(const data::LabeledDataset& train, const data::LabeledDataset& test,
                           std::size_t k_centers, double gamma, long epochs, double lr,
                           double weight_decay, std::uint64_t seed, long metric_interval,
                           std::size_t metric_cap) {
    const std::size_t n = train.size(), d = train.dim();
    const std::size_t c = std::size_t(train.num_classes);
    GklrTrainResult out;
    out.model.gamma = gamma;
    out.model.centers = kmeans(train.x, k_centers, seed);
    out.model.w = Matrix(c, k_centers);
    Rng rng(derive_seed(seed, 0x77));
    if (c > k_centers) throw Error("bad-params: gklr needs k_centers >= classes");
    // orthogonal rows at a small scale
    for (double& v : out.model.w.data) v = rng.normal();
    for (std::size_t r = 0; r < c; ++r) {
        auto row = out.model.w.row(r);
        for (std::size_t p = 0; p < r; ++p) {
            const auto prev = out.model.w.row(p);
            axpy(-dot(prev, row), prev, row);
        }
        linalg::normalize(row);
    }
    linalg::scale(0.01, out.model.w.data);

    const Matrix targets = net::one_hot_targets(train.y, c);

    std::vector<std::span<double>> params = {out.model.w.data, out.model.centers.data};
    optim::OptimizerState opt;
    opt.cfg.kind = optim::OptKind::adamw;
    opt.cfg.lr = lr;
    opt.cfg.weight_decay = weight_decay;
    opt.init(params);

    const std::size_t probe_n = metric_cap == 0 ? n : std::min(n, metric_cap);
    Matrix probe(probe_n, d);
    for (std::size_t i = 0; i < probe_n; ++i)
        std::copy(train.x.row(i).begin(), train.x.row(i).end(), probe.row(i).begin());

    auto evaluate = [&](long epoch) {
        GklrEpochRow row;
        row.epoch = epoch;
        Matrix logits(n, c);
        for (std::size_t i = 0; i < n; ++i) {
            Vector z = gklr_forward(out.model, train.x.row(i));
            std::copy(z.begin(), z.end(), logits.row(i).begin());
        }
        row.train_loss = net::loss_value(logits, targets, net::Loss::cross_entropy);
        row.train_acc = net::accuracy(logits, train.y);
        Matrix test_logits(test.size(), c);
        for (std::size_t i = 0; i < test.size(); ++i) {
            Vector z = gklr_forward(out.model, test.x.row(i));
            std::copy(z.begin(), z.end(), test_logits.row(i).begin());
        }
        row.test_acc = net::accuracy(test_logits, test.y);
        std::vector<Matrix> jacs;
        jacs.reserve(probe_n);
        for (std::size_t i = 0; i < probe_n; ++i)
            jacs.push_back(gklr_jacobian(out.model, probe.row(i)).full);
        row.alignment = geometry::alignment_metrics_from_jacobians(jacs, probe);
        out.trace.push_back(std::move(row));
    };

    evaluate(0);
    Matrix phi(n, k_centers);
    for (long epoch = 1; epoch <= epochs; ++epoch) {
        // features
        for (std::size_t i = 0; i < n; ++i) {
            const auto xi = train.x.row(i);
            auto prow = phi.row(i);
            for (std::size_t j = 0; j < k_centers; ++j) {
                double d2 = 0.0;
                const auto tau = out.model.centers.row(j);
                for (std::size_t t = 0; t < d; ++t) {
                    const double v = xi[t] - tau[t];
                    d2 += v * v;
                }
                prow[j] = std::exp(-gamma * d2);
            }
        }
        Matrix logits = linalg::matmul_abt(phi, out.model.w);  // n x C
        Matrix g = net::loss_output_gradients(logits, targets, net::Loss::cross_entropy);
        linalg::scale(1.0 / double(n), g.data);

        Matrix dw = linalg::matmul_atb(g, phi);  // C x K
        // dtau_k = 2 gamma ( sum_i E_ik x_i - (sum_i E_ik) tau_k ), E = (G W) .* phi
        Matrix e = linalg::matmul(g, out.model.w);  // n x K
        for (std::size_t i = 0; i < e.data.size(); ++i) e.data[i] *= phi.data[i];
        Matrix dcenters = linalg::matmul_atb(e, train.x);  // K x d
        Vector colsum(k_centers, 0.0);
        for (std::size_t i = 0; i < n; ++i) axpy(1.0, e.row(i), colsum);
        for (std::size_t j = 0; j < k_centers; ++j) {
            auto dr = dcenters.row(j);
            axpy(-colsum[j], out.model.centers.row(j), dr);
            linalg::scale(2.0 * gamma, dr);
        }

        std::vector<std::span<const double>> grads = {dw.data, dcenters.data};
        opt.step(params, grads);

        if (epoch == epochs || (metric_interval > 0 && epoch % metric_interval == 0))
            evaluate(epoch);
    }
    return out;
}

double laplace_kernel_m(std::span<const double> x, std::span<const double> z, const Matrix& m,
                        double gamma) {
    if (x.size() != z.size() || m.rows != x.size() || m.cols != x.size())
        throw Error("shape-mismatch: laplace_kernel_m");
    Vector v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] - z[i];
    const Vector mv = linalg::matvec(m, v);
    const double q = dot(v, mv);
    if (q < -1e-12) throw Error("non-psd-M: negative Mahalanobis form");
    return std::exp(-gamma * std::sqrt(std::max(0.0, q)));
}

Vector km_predict(const KernelMachine& km, std::span<const double> x) {
    const std::size_t n = km.train_x.rows;
    const std::size_t c = km.alpha.cols;
    Vector out(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double phi = laplace_kernel_m(km.train_x.row(i), x, km.m, km.gamma);
        axpy(phi, km.alpha.row(i), out);
    }
    return out;
}

Matrix km_jacobian(const KernelMachine& km, std::span<const double> x) {
    const std::size_t n = km.train_x.rows;
    const std::size_t c = km.alpha.cols;
    const std::size_t d = km.train_x.cols;
    Matrix jac(c, d);
    Vector v(d), mv;
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = km.train_x.row(i);
        for (std::size_t t = 0; t < d; ++t) v[t] = x[t] - xi[t];
        mv = linalg::matvec(km.m, v);
        const double q = dot(v, mv);
        if (q < -1e-12) throw Error("non-psd-M: negative Mahalanobis form");
        const double dist = std::sqrt(std::max(0.0, q));
        if (dist < 1e-12) continue;  // self term, subgradient 0 at the kink
        const double phi = std::exp(-km.gamma * dist);
        const double base = -km.gamma * phi / dist;
        for (std::size_t ci = 0; ci < c; ++ci) {
            const double s = km.alpha(i, ci) * base;
            if (s == 0.0) continue;
            axpy(s, mv, jac.row(ci));
        }
    }
    return jac;
}

Matrix agop(const KernelMachine& km, const Matrix& x) {
    const std::size_t d = km.train_x.cols;
    Matrix m(d, d);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const Matrix jac = km_jacobian(km, x.row(i));
        for (std::size_t r = 0; r < jac.rows; ++r) {
            const auto row = jac.row(r);
            for (std::size_t a = 0; a < d; ++a) {
                if (row[a] == 0.0) continue;
                axpy(row[a], row, m.row(a));
            }
        }
    }
    if (x.rows > 0) linalg::scale(1.0 / double(x.rows), m.data);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) {
            const double v = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = v;
            m(j, i) = v;
        }
    return m;
}

RfmResult rfm_fit(const data::LabeledDataset& train, long iterations, double gamma,
                  double ridge_eps, MInit init, double rfam_alpha) {
    if (iterations < 1) throw Error("bad-params: rfm_fit needs T >= 1");
    if (rfam_alpha < 0.0 || rfam_alpha > 1.0) throw Error("bad-params: rfam alpha in [0,1]");
    const std::size_t n = train.size(), d = train.dim();
    const std::size_t c = std::size_t(train.num_classes);

    RfmResult out;
    out.machine.train_x = train.x;
    out.machine.gamma = gamma;
    out.machine.ridge_eps = ridge_eps;
    if (init == MInit::identity) {
        out.machine.m = Matrix::identity(d);
    } else {
        const Matrix cov = linalg::covariance(train.x);
        out.machine.m = Matrix::identity(d);
        for (std::size_t i = 0; i < d * d; ++i)
            out.machine.m.data[i] = (1.0 - rfam_alpha) * cov.data[i] +
                                    rfam_alpha * out.machine.m.data[i];
    }
    out.m_trace.push_back(out.machine.m);

    const Matrix targets = net::one_hot_targets(train.y, c);
    auto solve_alpha = [&]() {
        Matrix gram(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            gram(i, i) = 1.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double v =
                    laplace_kernel_m(train.x.row(i), train.x.row(j), out.machine.m, gamma);
                gram(i, j) = v;
                gram(j, i) = v;
            }
        }
        out.machine.alpha = linalg::solve_ridge(gram, targets, ridge_eps);
    };

    for (long t = 0; t < iterations; ++t) {
        solve_alpha();
        out.machine.m = agop(out.machine, train.x);
        out.m_trace.push_back(out.machine.m);
    }
    // final solve so the returned (alpha, M) pair is consistent for prediction
    solve_alpha();
    return out;
}

SpanResidualReport span_residual(const Matrix& m_next, const Matrix& x) {
    const std::size_t n = x.rows, d = x.cols;
    SpanResidualReport rep;
    const double m_norm = linalg::frobenius_norm(m_next);
    if (m_norm == 0.0) return rep;

    // orthonormal basis of span{x_i} by modified Gram-Schmidt
    std::vector<Vector> basis;
    for (std::size_t i = 0; i < n; ++i) {
        Vector v(x.row(i).begin(), x.row(i).end());
        const double orig = norm2(v);
        if (orig == 0.0) continue;
        for (const Vector& q : basis) axpy(-dot(q, v), q, v);
        for (const Vector& q : basis) axpy(-dot(q, v), q, v);  // second pass for stability
        const double rem = norm2(v);
        if (rem > 1e-10 * orig) {
            linalg::scale(1.0 / rem, v);
            basis.push_back(std::move(v));
        }
    }
    // projection P M P with P = sum_q q q^T
    const std::size_t r = basis.size();
    Matrix q(r, d);
    for (std::size_t i = 0; i < r; ++i) std::copy(basis[i].begin(), basis[i].end(), q.row(i).begin());
    const Matrix mq = linalg::matmul_abt(m_next, q);   // d x r
    const Matrix qmq = linalg::matmul(q, mq);          // r x r
    const Matrix qt_qmq = linalg::matmul_atb(q, qmq);  // d x r
    const Matrix pmp = linalg::matmul_abt(qt_qmq, linalg::transpose(q));  // d x d
    rep.full = linalg::frobenius_norm(linalg::sub(m_next, pmp)) / m_norm;

    // diagonal-only fit against {x_i x_i^T}
    Matrix gram(n, n);
    Vector rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = x.row(i);
        rhs[i] = dot(xi, linalg::matvec(m_next, xi));
        for (std::size_t j = i; j < n; ++j) {
            const double g = dot(xi, x.row(j));
            gram(i, j) = g * g;
            gram(j, i) = g * g;
        }
    }
    double diag_max = 0.0;
    for (std::size_t i = 0; i < n; ++i) diag_max = std::max(diag_max, gram(i, i));
    Matrix rhs_m(n, 1);
    for (std::size_t i = 0; i < n; ++i) rhs_m(i, 0) = rhs[i];
    const Matrix coef = linalg::solve_ridge(gram, rhs_m, 1e-10 * std::max(1.0, diag_max));
    double fit_sq = m_norm * m_norm;
    for (std::size_t i = 0; i < n; ++i) fit_sq -= 2.0 * coef(i, 0) * rhs[i];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) fit_sq += coef(i, 0) * coef(j, 0) * gram(i, j);
    rep.diagonal = std::sqrt(std::max(0.0, fit_sq)) / m_norm;
    return rep;
}

double km_accuracy(const KernelMachine& km, const data::LabeledDataset& ds) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Vector z = km_predict(km, ds.x.row(i));
        std::size_t arg = 0;
        for (std::size_t j = 1; j < z.size(); ++j)
            if (z[j] > z[arg]) arg = j;
        if (int(arg) == ds.y[i]) ++correct;
    }
    return ds.size() == 0 ? 0.0 : double(correct) / double(ds.size());
}

geometry::AlignmentReport km_alignment(const KernelMachine& km, const Matrix& x, std::size_t cap) {
    const std::size_t rows = cap == 0 ? x.rows : std::min<std::size_t>(cap, x.rows);
    Matrix sub(rows, x.cols);
    std::vector<Matrix> jacs;
    jacs.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        std::copy(x.row(i).begin(), x.row(i).end(), sub.row(i).begin());
        jacs.push_back(km_jacobian(km, sub.row(i)));
    }
    return geometry::alignment_metrics_from_jacobians(jacs, sub);
}

namespace {
constexpr char kMagic[8] = {'G', 'K', 'K', 'M', '0', '0', '0', '1'};
}

void save_machine(const KernelMachine& km, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("io-error: cannot open " + path);
    os.write(kMagic, 8);
    const std::uint32_t n = std::uint32_t(km.train_x.rows), d = std::uint32_t(km.train_x.cols),
                        c = std::uint32_t(km.alpha.cols);
    os.write(reinterpret_cast<const char*>(&n), 4);
    os.write(reinterpret_cast<const char*>(&d), 4);
    os.write(reinterpret_cast<const char*>(&c), 4);
    os.write(reinterpret_cast<const char*>(&km.gamma), 8);
    os.write(reinterpret_cast<const char*>(&km.ridge_eps), 8);
    auto write_mat = [&](const Matrix& m) {
        os.write(reinterpret_cast<const char*>(m.data.data()),
                 std::streamsize(m.data.size() * sizeof(double)));
    };
    write_mat(km.train_x);
    write_mat(km.alpha);
    write_mat(km.m);
    if (!os) throw Error("io-error: short write to " + path);
}

KernelMachine load_machine(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("io-error: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw Error("checkpoint-bad-magic");
    std::uint32_t n = 0, d = 0, c = 0;
    is.read(reinterpret_cast<char*>(&n), 4);
    is.read(reinterpret_cast<char*>(&d), 4);
    is.read(reinterpret_cast<char*>(&c), 4);
    KernelMachine km;
    is.read(reinterpret_cast<char*>(&km.gamma), 8);
    is.read(reinterpret_cast<char*>(&km.ridge_eps), 8);
    km.train_x = Matrix(n, d);
    km.alpha = Matrix(n, c);
    km.m = Matrix(d, d);
    auto read_mat = [&](Matrix& m) {
        is.read(reinterpret_cast<char*>(m.data.data()),
                std::streamsize(m.data.size() * sizeof(double)));
        if (!is) throw Error("checkpoint-truncated");
    };
    read_mat(km.train_x);
    read_mat(km.alpha);
    read_mat(km.m);
    return km;
}

}  // namespace grokalign::kernels

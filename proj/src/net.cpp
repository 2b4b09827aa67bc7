#include "grokalign/net.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "grokalign/rng.hpp"

namespace grokalign::net {

using linalg::axpy;
using linalg::dot;

namespace {

double act_value(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::quadratic: return z * z;
        case Activation::identity: return z;
    }
    return z;
}

// relu subgradient at exactly 0 is taken as 0 (inactive)
double act_deriv(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::quadratic: return 2.0 * z;
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

double act_second_deriv(Activation a) {
    return a == Activation::quadratic ? 2.0 : 0.0;
}

void check_dims(const MlpNetwork& net) {
    if (net.layers.empty()) throw Error("empty-network");
    if (net.hidden_acts.size() != net.layers.size() - 1)
        throw Error("bad-network: one activation tag per hidden layer required");
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l)
        if (net.layers[l].weight.rows != net.layers[l + 1].weight.cols)
            throw Error("bad-network: layer dims do not chain");
}

}  // namespace

std::vector<std::span<double>> MlpNetwork::params() {
    std::vector<std::span<double>> out;
    for (auto& layer : layers) {
        out.push_back(layer.weight.data);
        if (layer.bias) out.push_back(*layer.bias);
    }
    return out;
}

std::vector<std::span<const double>> MlpNetwork::params() const {
    std::vector<std::span<const double>> out;
    for (const auto& layer : layers) {
        out.push_back(layer.weight.data);
        if (layer.bias) out.push_back(*layer.bias);
    }
    return out;
}

MlpNetwork make_mlp(const std::vector<std::size_t>& dims, Activation hidden_act, bool with_bias,
                    double init_scale, std::uint64_t seed) {
    if (dims.size() < 2) throw Error("bad-network: need at least one layer");
    MlpNetwork net;
    net.init_scale = init_scale;
    Rng rng(derive_seed(seed, 0x11e7));
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer;
        layer.weight = Matrix(dims[l + 1], dims[l]);
        const double std_dev = init_scale / std::sqrt(double(dims[l]));
        for (double& w : layer.weight.data) w = std_dev * rng.normal();
        if (with_bias) layer.bias = Vector(dims[l + 1], 0.0);
        net.layers.push_back(std::move(layer));
        if (l + 2 < dims.size()) net.hidden_acts.push_back(hidden_act);
    }
    return net;
}

Vector forward(const MlpNetwork& net, std::span<const double> x) {
    check_dims(net);
    if (x.size() != net.input_dim()) throw Error("dim-mismatch: forward input");
    Vector h(x.begin(), x.end());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Vector z = linalg::matvec(net.layers[l].weight, h);
        if (net.layers[l].bias) axpy(1.0, *net.layers[l].bias, z);
        if (l + 1 < net.layers.size())
            for (double& v : z) v = act_value(net.hidden_acts[l], v);
        h = std::move(z);
    }
    return h;
}

Matrix input_jacobian(const MlpNetwork& net, std::span<const double> x) {
    check_dims(net);
    if (x.size() != net.input_dim()) throw Error("dim-mismatch: input_jacobian");
    // forward pass to collect pre-activations
    std::vector<Vector> pre(net.layers.size());
    Vector h(x.begin(), x.end());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Vector z = linalg::matvec(net.layers[l].weight, h);
        if (net.layers[l].bias) axpy(1.0, *net.layers[l].bias, z);
        pre[l] = z;
        if (l + 1 < net.layers.size())
            for (double& v : z) v = act_value(net.hidden_acts[l], v);
        h = std::move(z);
    }
    // accumulate J^T = W_0^T G_0 W_1^T G_1 ... W_{L-1}^T, column block at a time
    const std::size_t c = net.output_dim();
    Matrix jt = linalg::transpose(net.layers.back().weight);  // d_{L-2} x C
    for (std::size_t l = net.layers.size() - 1; l-- > 0;) {
        // gate rows by sigma'(pre[l])
        for (std::size_t i = 0; i < jt.rows; ++i) {
            const double g = act_deriv(net.hidden_acts[l], pre[l][i]);
            linalg::scale(g, jt.row(i));
        }
        jt = linalg::matmul_atb(net.layers[l].weight, jt);  // (in_l x out_l)(out_l x C)
    }
    Matrix j(c, net.input_dim());
    for (std::size_t i = 0; i < jt.rows; ++i)
        for (std::size_t k = 0; k < c; ++k) j(k, i) = jt(i, k);
    return j;
}

Vector vjp(const MlpNetwork& net, std::span<const double> x, std::span<const double> u) {
    check_dims(net);
    if (u.size() != net.output_dim()) throw Error("dim-mismatch: vjp cotangent");
    std::vector<Vector> pre(net.layers.size());
    Vector h(x.begin(), x.end());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Vector z = linalg::matvec(net.layers[l].weight, h);
        if (net.layers[l].bias) axpy(1.0, *net.layers[l].bias, z);
        pre[l] = z;
        if (l + 1 < net.layers.size())
            for (double& v : z) v = act_value(net.hidden_acts[l], v);
        h = std::move(z);
    }
    Vector g(u.begin(), u.end());
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        Vector gh = linalg::matvec_t(net.layers[l].weight, g);
        if (l > 0)
            for (std::size_t i = 0; i < gh.size(); ++i)
                gh[i] *= act_deriv(net.hidden_acts[l - 1], pre[l - 1][i]);
        g = std::move(gh);
    }
    return g;
}

Vector jvp(const MlpNetwork& net, std::span<const double> x, std::span<const double> v) {
    check_dims(net);
    if (v.size() != net.input_dim()) throw Error("dim-mismatch: jvp tangent");
    Vector h(x.begin(), x.end());
    Vector t(v.begin(), v.end());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Vector z = linalg::matvec(net.layers[l].weight, h);
        if (net.layers[l].bias) axpy(1.0, *net.layers[l].bias, z);
        Vector tz = linalg::matvec(net.layers[l].weight, t);
        if (l + 1 < net.layers.size()) {
            for (std::size_t i = 0; i < tz.size(); ++i)
                tz[i] *= act_deriv(net.hidden_acts[l], z[i]);
            for (double& val : z) val = act_value(net.hidden_acts[l], val);
        }
        h = std::move(z);
        t = std::move(tz);
    }
    return t;
}

Vector local_offset(const MlpNetwork& net, std::span<const double> x) {
    Vector fx = forward(net, x);
    Vector jx = jvp(net, x, x);
    for (std::size_t i = 0; i < fx.size(); ++i) fx[i] -= jx[i];
    return fx;
}

ActivationPattern activation_pattern(const MlpNetwork& net, std::span<const double> x) {
    check_dims(net);
    for (Activation a : net.hidden_acts)
        if (a != Activation::relu) throw Error("pattern-undefined: non-relu hidden layer");
    ActivationPattern pat;
    Vector h(x.begin(), x.end());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Vector z = linalg::matvec(net.layers[l].weight, h);
        if (net.layers[l].bias) axpy(1.0, *net.layers[l].bias, z);
        if (l + 1 < net.layers.size()) {
            std::vector<std::uint8_t> bits(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) bits[i] = z[i] > 0.0 ? 1 : 0;
            pat.code.push_back(std::move(bits));
            for (double& v : z) v = act_value(net.hidden_acts[l], v);
        }
        h = std::move(z);
    }
    return pat;
}

ForwardTrace forward_trace(const MlpNetwork& net, const Matrix& x) {
    check_dims(net);
    if (x.cols != net.input_dim()) throw Error("dim-mismatch: forward_trace input");
    ForwardTrace tr;
    tr.input = x;
    const Matrix* h = &tr.input;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Matrix z = linalg::matmul_abt(*h, net.layers[l].weight);
        if (net.layers[l].bias) {
            const Vector& b = *net.layers[l].bias;
            for (std::size_t i = 0; i < z.rows; ++i) axpy(1.0, b, z.row(i));
        }
        tr.pre.push_back(std::move(z));
        if (l + 1 < net.layers.size()) {
            const Matrix& zp = tr.pre.back();
            Matrix a(zp.rows, zp.cols);
            for (std::size_t i = 0; i < zp.data.size(); ++i)
                a.data[i] = act_value(net.hidden_acts[l], zp.data[i]);
            tr.act.push_back(std::move(a));
            h = &tr.act.back();
        }
    }
    return tr;
}

std::vector<std::span<double>> ParamGrads::spans() {
    std::vector<std::span<double>> out;
    for (auto& layer : layers) {
        out.push_back(layer.d_weight.data);
        if (!layer.d_bias.empty()) out.push_back(layer.d_bias);
    }
    return out;
}

std::vector<std::span<const double>> ParamGrads::spans() const {
    std::vector<std::span<const double>> out;
    for (const auto& layer : layers) {
        out.push_back(layer.d_weight.data);
        if (!layer.d_bias.empty()) out.push_back(layer.d_bias);
    }
    return out;
}

void ParamGrads::add_scaled(const ParamGrads& other, double s) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        axpy(s, other.layers[l].d_weight.data, layers[l].d_weight.data);
        if (!layers[l].d_bias.empty()) axpy(s, other.layers[l].d_bias, layers[l].d_bias);
    }
}

double ParamGrads::max_abs() const {
    double m = 0.0;
    for (const auto& layer : layers) {
        for (double v : layer.d_weight.data) m = std::max(m, std::abs(v));
        for (double v : layer.d_bias) m = std::max(m, std::abs(v));
    }
    return m;
}

ParamGrads zeros_like(const MlpNetwork& net) {
    ParamGrads g;
    for (const auto& layer : net.layers) {
        ParamGrads::LayerGrad lg;
        lg.d_weight = Matrix(layer.weight.rows, layer.weight.cols);
        if (layer.bias) lg.d_bias = Vector(layer.bias->size(), 0.0);
        g.layers.push_back(std::move(lg));
    }
    return g;
}

namespace {

Matrix gate_matrix(const MlpNetwork& net, const ForwardTrace& trace, std::size_t hidden) {
    const Matrix& z = trace.pre[hidden];
    Matrix g(z.rows, z.cols);
    const Activation a = net.hidden_acts[hidden];
    for (std::size_t i = 0; i < z.data.size(); ++i) g.data[i] = act_deriv(a, z.data[i]);
    return g;
}

void add_colsum(const Matrix& m, Vector& out) {
    for (std::size_t i = 0; i < m.rows; ++i) axpy(1.0, m.row(i), out);
}

}  // namespace

ParamGrads backward_from_output(const MlpNetwork& net, const ForwardTrace& trace, const Matrix& dz) {
    ParamGrads grads = zeros_like(net);
    const std::size_t depth = net.layers.size();
    Matrix cur = dz;
    for (std::size_t l = depth; l-- > 0;) {
        const Matrix& layer_in = (l == 0) ? trace.input : trace.act[l - 1];
        grads.layers[l].d_weight = linalg::matmul_atb(cur, layer_in);
        if (net.layers[l].bias) add_colsum(cur, grads.layers[l].d_bias);
        if (l > 0) {
            Matrix dh = linalg::matmul(cur, net.layers[l].weight);
            const Matrix g = gate_matrix(net, trace, l - 1);
            for (std::size_t i = 0; i < dh.data.size(); ++i) dh.data[i] *= g.data[i];
            cur = std::move(dh);
        }
    }
    return grads;
}

Matrix input_gradients(const MlpNetwork& net, const ForwardTrace& trace, const Matrix& dz) {
    const std::size_t depth = net.layers.size();
    Matrix cur = dz;
    for (std::size_t l = depth; l-- > 0;) {
        Matrix dh = linalg::matmul(cur, net.layers[l].weight);
        if (l > 0) {
            const Matrix g = gate_matrix(net, trace, l - 1);
            for (std::size_t i = 0; i < dh.data.size(); ++i) dh.data[i] *= g.data[i];
        }
        cur = std::move(dh);
    }
    return cur;
}

Matrix jvp_batch(const MlpNetwork& net, const ForwardTrace& trace, const Matrix& v) {
    const std::size_t depth = net.layers.size();
    Matrix t = v;
    for (std::size_t l = 0; l < depth; ++l) {
        Matrix p = linalg::matmul_abt(t, net.layers[l].weight);
        if (l + 1 < depth) {
            const Matrix g = gate_matrix(net, trace, l);
            for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] *= g.data[i];
        }
        t = std::move(p);
    }
    return t;
}

ParamGrads bilinear_jacobian_grads(const MlpNetwork& net, const ForwardTrace& trace, const Matrix& u,
                                   const Matrix& v, std::span<const double> w) {
    const std::size_t depth = net.layers.size();
    ParamGrads grads = zeros_like(net);

    // tangent forward, keeping T_l (input to each layer) and P_l (layer output)
    std::vector<Matrix> tan_in(depth), tan_out(depth), gates(depth > 0 ? depth - 1 : 0);
    Matrix t = v;
    for (std::size_t l = 0; l < depth; ++l) {
        tan_in[l] = t;
        Matrix p = linalg::matmul_abt(t, net.layers[l].weight);
        if (l + 1 < depth) {
            gates[l] = gate_matrix(net, trace, l);
            Matrix tn = p;
            for (std::size_t i = 0; i < tn.data.size(); ++i) tn.data[i] *= gates[l].data[i];
            tan_out[l] = std::move(p);
            t = std::move(tn);
        } else {
            tan_out[l] = std::move(p);
        }
    }

    bool any_curvature = false;
    for (Activation a : net.hidden_acts)
        if (act_second_deriv(a) != 0.0) any_curvature = true;

    // adjoint of the tangent chain
    std::vector<Matrix> dz_src(depth > 0 ? depth - 1 : 0);
    Matrix dp(u.rows, u.cols);
    for (std::size_t i = 0; i < u.rows; ++i) {
        const double wi = w[i];
        for (std::size_t j = 0; j < u.cols; ++j) dp(i, j) = wi * u(i, j);
    }
    for (std::size_t l = depth; l-- > 0;) {
        grads.layers[l].d_weight = linalg::matmul_atb(dp, tan_in[l]);
        if (l > 0) {
            Matrix dt = linalg::matmul(dp, net.layers[l].weight);
            const std::size_t h = l - 1;
            if (any_curvature) {
                const double s2 = act_second_deriv(net.hidden_acts[h]);
                if (s2 != 0.0) {
                    Matrix src(dt.rows, dt.cols);
                    for (std::size_t i = 0; i < dt.data.size(); ++i)
                        src.data[i] = s2 * tan_out[h].data[i] * dt.data[i];
                    dz_src[h] = std::move(src);
                }
            }
            for (std::size_t i = 0; i < dt.data.size(); ++i) dt.data[i] *= gates[h].data[i];
            dp = std::move(dt);
        }
    }

    // primal adjoint sweep, only needed when an activation has curvature
    if (any_curvature) {
        Matrix dz_above;
        bool have_above = false;
        for (std::size_t h = depth - 1; h-- > 0;) {
            Matrix dz_h;
            if (dz_src[h].rows > 0)
                dz_h = std::move(dz_src[h]);
            else
                dz_h = Matrix(trace.pre[h].rows, trace.pre[h].cols);
            if (have_above) {
                Matrix dh = linalg::matmul(dz_above, net.layers[h + 1].weight);
                for (std::size_t i = 0; i < dz_h.data.size(); ++i)
                    dz_h.data[i] += gates[h].data[i] * dh.data[i];
            }
            const Matrix& layer_in = (h == 0) ? trace.input : trace.act[h - 1];
            Matrix dw = linalg::matmul_atb(dz_h, layer_in);
            axpy(1.0, dw.data, grads.layers[h].d_weight.data);
            if (net.layers[h].bias) add_colsum(dz_h, grads.layers[h].d_bias);
            dz_above = std::move(dz_h);
            have_above = true;
        }
    }
    return grads;
}

Matrix one_hot_targets(std::span<const int> labels, std::size_t num_classes) {
    Matrix t(labels.size(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || std::size_t(labels[i]) >= num_classes)
            throw Error("label-out-of-range");
        t(i, labels[i]) = 1.0;
    }
    return t;
}

Matrix signed_targets(std::span<const int> labels) {
    Matrix t(labels.size(), 1);
    for (std::size_t i = 0; i < labels.size(); ++i) t(i, 0) = labels[i] > 0 ? 1.0 : -1.0;
    return t;
}

double loss_value(const Matrix& logits, const Matrix& targets, Loss loss) {
    if (!logits.same_shape(targets)) throw Error("shape-mismatch: loss");
    const std::size_t n = logits.rows, c = logits.cols;
    double total = 0.0;
    if (loss == Loss::squared_error) {
        for (std::size_t i = 0; i < logits.data.size(); ++i) {
            const double d = logits.data[i] - targets.data[i];
            total += d * d;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const auto z = logits.row(i);
            double zmax = z[0];
            for (double v : z) zmax = std::max(zmax, v);
            double lse = 0.0;
            for (double v : z) lse += std::exp(v - zmax);
            lse = std::log(lse) + zmax;
            for (std::size_t j = 0; j < c; ++j)
                if (targets(i, j) != 0.0) total += targets(i, j) * (lse - z[j]);
        }
    }
    return total / double(n);
}

Matrix loss_output_gradients(const Matrix& logits, const Matrix& targets, Loss loss) {
    if (!logits.same_shape(targets)) throw Error("shape-mismatch: loss gradients");
    Matrix g(logits.rows, logits.cols);
    if (loss == Loss::squared_error) {
        for (std::size_t i = 0; i < g.data.size(); ++i)
            g.data[i] = 2.0 * (logits.data[i] - targets.data[i]);
    } else {
        for (std::size_t i = 0; i < logits.rows; ++i) {
            const auto z = logits.row(i);
            double zmax = z[0];
            for (double v : z) zmax = std::max(zmax, v);
            double denom = 0.0;
            for (double v : z) denom += std::exp(v - zmax);
            for (std::size_t j = 0; j < logits.cols; ++j)
                g(i, j) = std::exp(z[j] - zmax) / denom - targets(i, j);
        }
    }
    return g;
}

ParamGrads param_gradients(const MlpNetwork& net, const Matrix& x, const Matrix& targets, Loss loss) {
    if (x.rows == 0) throw Error("empty-batch: param_gradients");
    ForwardTrace trace = forward_trace(net, x);
    Matrix dz = loss_output_gradients(trace.logits(), targets, loss);
    linalg::scale(1.0 / double(x.rows), dz.data);
    return backward_from_output(net, trace, dz);
}

double accuracy(const Matrix& logits, std::span<const int> labels) {
    if (logits.rows != labels.size()) throw Error("shape-mismatch: accuracy");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        if (logits.cols == 1) {
            const int pred = logits(i, 0) > 0.0 ? 1 : 0;
            if (pred == labels[i]) ++correct;
        } else {
            std::size_t arg = 0;
            for (std::size_t j = 1; j < logits.cols; ++j)
                if (logits(i, j) > logits(i, arg)) arg = j;
            if (int(arg) == labels[i]) ++correct;
        }
    }
    return logits.rows == 0 ? 0.0 : double(correct) / double(logits.rows);
}

namespace {

constexpr char kMagic[8] = {'G', 'K', 'N', 'E', 'T', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("checkpoint-truncated");
    return v;
}

}  // namespace

void save_checkpoint(const MlpNetwork& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("io-error: cannot open " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, std::uint32_t(net.layers.size()));
    write_pod<double>(os, net.init_scale);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& layer = net.layers[l];
        write_pod<std::uint32_t>(os, std::uint32_t(layer.weight.rows));
        write_pod<std::uint32_t>(os, std::uint32_t(layer.weight.cols));
        write_pod<std::uint8_t>(os, layer.bias ? 1 : 0);
        const std::uint8_t act =
            l + 1 < net.layers.size() ? std::uint8_t(net.hidden_acts[l]) : std::uint8_t(0xff);
        write_pod<std::uint8_t>(os, act);
    }
    for (const Layer& layer : net.layers) {
        os.write(reinterpret_cast<const char*>(layer.weight.data.data()),
                 std::streamsize(layer.weight.data.size() * sizeof(double)));
        if (layer.bias)
            os.write(reinterpret_cast<const char*>(layer.bias->data()),
                     std::streamsize(layer.bias->size() * sizeof(double)));
    }
    if (!os) throw Error("io-error: short write to " + path);
}

MlpNetwork load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("io-error: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw Error("checkpoint-bad-magic");
    const auto n_layers = read_pod<std::uint32_t>(is);
    MlpNetwork net;
    net.init_scale = read_pod<double>(is);
    struct Shape {
        std::uint32_t rows, cols;
        bool has_bias;
        std::uint8_t act;
    };
    std::vector<Shape> shapes;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        Shape s{};
        s.rows = read_pod<std::uint32_t>(is);
        s.cols = read_pod<std::uint32_t>(is);
        s.has_bias = read_pod<std::uint8_t>(is) != 0;
        s.act = read_pod<std::uint8_t>(is);
        shapes.push_back(s);
    }
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        Layer layer;
        layer.weight = Matrix(shapes[l].rows, shapes[l].cols);
        is.read(reinterpret_cast<char*>(layer.weight.data.data()),
                std::streamsize(layer.weight.data.size() * sizeof(double)));
        if (!is) throw Error("checkpoint-truncated");
        if (shapes[l].has_bias) {
            layer.bias = Vector(shapes[l].rows);
            is.read(reinterpret_cast<char*>(layer.bias->data()),
                    std::streamsize(layer.bias->size() * sizeof(double)));
            if (!is) throw Error("checkpoint-truncated");
        }
        net.layers.push_back(std::move(layer));
        if (l + 1 < n_layers) net.hidden_acts.push_back(Activation(shapes[l].act));
    }
    check_dims(net);
    return net;
}

}  // namespace grokalign::net

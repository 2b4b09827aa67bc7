#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grokalign/linalg.hpp"

namespace grokalign::net {

using linalg::Matrix;
using linalg::Vector;

enum class Activation { relu, quadratic, identity };
enum class Loss { cross_entropy, squared_error };

struct Layer {
    Matrix weight;  // d_out x d_in
    std::optional<Vector> bias;
};

// Fully connected network. hidden_acts has one tag per hidden layer; the last
// layer emits raw logits. Layer dims must chain.
struct MlpNetwork {
    std::vector<Layer> layers;
    std::vector<Activation> hidden_acts;
    double init_scale = 1.0;

    std::size_t input_dim() const { return layers.front().weight.cols; }
    std::size_t output_dim() const { return layers.back().weight.rows; }
    std::size_t depth() const { return layers.size(); }

    // weights and biases in a fixed order (W0, b0, W1, b1, ...)
    std::vector<std::span<double>> params();
    std::vector<std::span<const double>> params() const;
};

// Gaussian entries with std 1/sqrt(d_in), multiplied by init_scale.
MlpNetwork make_mlp(const std::vector<std::size_t>& dims, Activation hidden_act, bool with_bias,
                    double init_scale, std::uint64_t seed);

Vector forward(const MlpNetwork& net, std::span<const double> x);

// Exact input-output Jacobian (C x d) via reverse-chained layer products.
Matrix input_jacobian(const MlpNetwork& net, std::span<const double> x);

// J^T u without forming J.
Vector vjp(const MlpNetwork& net, std::span<const double> x, std::span<const double> u);

// J v via a forward tangent pass.
Vector jvp(const MlpNetwork& net, std::span<const double> x, std::span<const double> v);

// b_x = f(x) - J_x x
Vector local_offset(const MlpNetwork& net, std::span<const double> x);

struct ActivationPattern {
    std::vector<std::vector<std::uint8_t>> code;  // one bit string per hidden layer
    bool operator==(const ActivationPattern&) const = default;
};

// Defined for relu hidden layers only; bit set iff pre-activation > 0.
ActivationPattern activation_pattern(const MlpNetwork& net, std::span<const double> x);

// ---- batched core -----------------------------------------------------------

// pre[l] = X W_l^T + b_l (n x d_l), act[l] = sigma(pre[l]) for hidden layers.
struct ForwardTrace {
    Matrix input;
    std::vector<Matrix> pre;
    std::vector<Matrix> act;
    const Matrix& logits() const { return pre.back(); }
};

ForwardTrace forward_trace(const MlpNetwork& net, const Matrix& x);

struct ParamGrads {
    struct LayerGrad {
        Matrix d_weight;
        Vector d_bias;  // empty when the layer has no bias
    };
    std::vector<LayerGrad> layers;

    std::vector<std::span<double>> spans();
    std::vector<std::span<const double>> spans() const;
    void add_scaled(const ParamGrads& other, double s);
    double max_abs() const;
};

ParamGrads zeros_like(const MlpNetwork& net);

// Accumulates parameter gradients for sum_i <dz_i, f(x_i)>; dz is n x C.
ParamGrads backward_from_output(const MlpNetwork& net, const ForwardTrace& trace, const Matrix& dz);

// Batched VJP: rows are J_{x_i}^T u_i for the cotangent rows u_i of dz.
Matrix input_gradients(const MlpNetwork& net, const ForwardTrace& trace, const Matrix& dz);

// Batched JVP: rows are J_{x_i} v_i.
Matrix jvp_batch(const MlpNetwork& net, const ForwardTrace& trace, const Matrix& v);

// Gradient of sum_i w_i * u_i^T J_{x_i} v_i with respect to the parameters,
// holding u and v fixed. This is the double-backward primitive behind every
// Jacobian-norm penalty.
ParamGrads bilinear_jacobian_grads(const MlpNetwork& net, const ForwardTrace& trace, const Matrix& u,
                                   const Matrix& v, std::span<const double> w);

// ---- losses -----------------------------------------------------------------

Matrix one_hot_targets(std::span<const int> labels, std::size_t num_classes);
Matrix signed_targets(std::span<const int> labels);  // C == 1, labels {0,1} -> {-1,+1}

double loss_value(const Matrix& logits, const Matrix& targets, Loss loss);
// Per-sample dl/dz, no 1/n factor.
Matrix loss_output_gradients(const Matrix& logits, const Matrix& targets, Loss loss);

// Mean gradient over the batch.
ParamGrads param_gradients(const MlpNetwork& net, const Matrix& x, const Matrix& targets, Loss loss);

// argmax accuracy; sign agreement for scalar outputs.
double accuracy(const Matrix& logits, std::span<const int> labels);

// ---- checkpoints -------------------------------------------------------------

void save_checkpoint(const MlpNetwork& net, const std::string& path);
MlpNetwork load_checkpoint(const std::string& path);

}  // namespace grokalign::net

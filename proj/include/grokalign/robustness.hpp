#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grokalign/kernels.hpp"
#include "grokalign/net.hpp"

namespace grokalign::robustness {

using linalg::Matrix;
using linalg::Vector;

enum class AttackNorm { l2, linf };

struct AttackSpec {
    AttackNorm norm = AttackNorm::l2;
    double radius = 1.0;
    int steps = 20;
    double step_size = 0.0;  // 0 -> 2.5 * radius / steps
    bool random_start = true;
    std::uint64_t seed = 0;

    double effective_step() const { return step_size > 0.0 ? step_size : 2.5 * radius / steps; }
    void validate() const;
};

// Differentiable classifier interface: forward logits plus the input gradient
// of the cross-entropy loss at class y.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual Vector logits(std::span<const double> x) const = 0;
    virtual Vector loss_input_gradient(std::span<const double> x, int y) const = 0;
    virtual std::size_t num_classes() const = 0;
};

class MlpClassifier : public Classifier {
public:
    explicit MlpClassifier(const net::MlpNetwork& network) : net_(&network) {}
    Vector logits(std::span<const double> x) const override;
    Vector loss_input_gradient(std::span<const double> x, int y) const override;
    std::size_t num_classes() const override { return net_->output_dim(); }

private:
    const net::MlpNetwork* net_;
};

class KernelClassifier : public Classifier {
public:
    explicit KernelClassifier(const kernels::KernelMachine& km) : km_(&km) {}
    Vector logits(std::span<const double> x) const override;
    Vector loss_input_gradient(std::span<const double> x, int y) const override;
    std::size_t num_classes() const override { return km_->alpha.cols; }

private:
    const kernels::KernelMachine* km_;
};

struct AttackResult {
    Vector x_adv;
    bool stalled = false;  // zero gradient at every step
};

AttackResult pgd_attack(const Classifier& model, std::span<const double> x, int y,
                        const AttackSpec& spec);

struct AttackEvalRow {
    std::size_t sample_id = 0;
    bool clean_correct = false;
    bool adv_correct = false;
    double perturbation_norm = 0.0;
};

struct AttackEval {
    std::vector<AttackEvalRow> rows;
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    // fraction of clean-correct samples flipped; absent when none are correct
    std::optional<double> success_rate;

    void write_csv(const std::string& path) const;
};

AttackEval evaluate_attack(const Classifier& model, const Matrix& x, std::span<const int> y,
                           const AttackSpec& spec);

double attack_success_rate(const Classifier& model, const Matrix& x, std::span<const int> y,
                           const AttackSpec& spec);  // throws if not applicable
double robust_accuracy(const Classifier& model, const Matrix& x, std::span<const int> y,
                       const AttackSpec& spec);

}  // namespace grokalign::robustness

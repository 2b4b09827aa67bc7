#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grokalign/config.hpp"
#include "grokalign/data.hpp"
#include "grokalign/net.hpp"

namespace grokalign::harness {

struct GrokCriterion {
    enum class Metric { test_accuracy, test_and_adv_accuracy };
    Metric metric = Metric::test_accuracy;
    double threshold = 0.9;
    std::optional<double> adv_threshold;

    static GrokCriterion from_config(const Config& cfg);
};

struct EpochRow {
    long epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    std::optional<double> adv_acc;
    double na = 0.0;
    double er = 0.0;
    double centroid_alignment = 0.0;
    double mean_jac_fro = 0.0;
    double mean_offset_norm = 0.0;
};

struct RunRecord {
    Config config;
    std::uint64_t seed = 0;
    std::vector<EpochRow> rows;
    std::optional<long> grok_epoch;
    double wall_seconds = 0.0;
    std::string status = "ok";
    std::map<std::string, double> summary_stats;

    void write_csv(const std::string& path) const;
    std::string csv_text() const;
    void write_summary_json(const std::string& path) const;
};

// Trains an MLP task (xor, sparse_parity, modadd, mnist) per the config and
// logs metrics on capped probes at each log interval.
RunRecord run_experiment(const Config& cfg);

std::optional<long> epochs_to_grok(const RunRecord& record, const GrokCriterion& criterion);

// ---- statistics ----------------------------------------------------------------

struct TTestResult {
    double t = 0.0;
    double p = 0.0;  // one-sided, H1: mean(a) < mean(b)
    long df = 0;
};

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

double regularized_incomplete_beta(double x, double a, double b);
double student_t_cdf(double t, long df);

// ---- presets --------------------------------------------------------------------

std::vector<std::string> preset_names();
Config preset(const std::string& name);

// Applies one of {none, grokalign, grokalign_input, r_perp, r_nuc, r_sigma,
// grokfast, orthograd} on top of a task preset.
void apply_regularizer_choice(Config& cfg, const std::string& choice);

// ---- composite runners (used by the CLI and the acceptance suite) ---------------

struct BenchResult {
    std::string preset_name;
    std::string reg_choice;
    std::vector<RunRecord> runs;
    std::vector<std::optional<long>> grok_epochs;
    std::optional<double> median_grok;  // absent when any run failed to grok
};

BenchResult run_grok_bench(const Config& base, const std::string& reg_choice,
                           const std::vector<std::uint64_t>& seeds,
                           const std::string& out_dir = "");

struct GammaSweepRow {
    double gamma = 0.0;
    double final_clean_acc = 0.0;
    double final_robust_acc = 0.0;
    double final_mean_jac_fro = 0.0;
    double max_mean_offset_norm = 0.0;
    RunRecord record;
};

std::vector<GammaSweepRow> run_gamma_sweep(const Config& base, const std::vector<double>& gammas);

struct RfmCompareRow {
    double alpha = 0.0;
    double test_accuracy = 0.0;
    double attack_success_rate = 0.0;
    double normal_alignment = 0.0;
    double max_span_residual = 0.0;
};

// Means over seeds for each alpha; alpha = 1 is the plain RFM.
std::vector<RfmCompareRow> run_rfm_compare(const Config& base, const std::vector<double>& alphas,
                                           const std::vector<std::uint64_t>& seeds);

double median(std::vector<double> values);

}  // namespace grokalign::harness

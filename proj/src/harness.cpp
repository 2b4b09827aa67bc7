#include "grokalign/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "grokalign/geometry.hpp"
#include "grokalign/kernels.hpp"
#include "grokalign/optim.hpp"
#include "grokalign/reg.hpp"
#include "grokalign/robustness.hpp"
#include "grokalign/rng.hpp"

namespace grokalign::harness {

using linalg::Matrix;
using linalg::Vector;

GrokCriterion GrokCriterion::from_config(const Config& cfg) {
    GrokCriterion c;
    const std::string metric = cfg.get_str("criterion.metric", "test_accuracy");
    if (metric == "test_accuracy")
        c.metric = Metric::test_accuracy;
    else if (metric == "test_and_adv_accuracy")
        c.metric = Metric::test_and_adv_accuracy;
    else
        throw Error("bad-criterion: unknown metric '" + metric + "'");
    c.threshold = cfg.get_double("criterion.threshold", 0.9);
    if (cfg.has("criterion.adv_threshold"))
        c.adv_threshold = cfg.get_double("criterion.adv_threshold", 0.95);
    if (c.threshold <= 0.0 || c.threshold > 1.0) throw Error("bad-criterion: threshold in (0,1]");
    return c;
}

namespace {

bool criterion_met(const GrokCriterion& c, const EpochRow& row) {
    if (c.metric == GrokCriterion::Metric::test_accuracy) return row.test_acc > c.threshold;
    if (!row.adv_acc) return false;
    const double adv_thr = c.adv_threshold.value_or(c.threshold);
    return row.test_acc > c.threshold && *row.adv_acc > adv_thr;
}

std::vector<std::size_t> parse_widths(const std::string& widths) {
    std::vector<std::size_t> out;
    std::stringstream ss(widths);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::size_t(std::stoul(tok)));
    }
    if (out.empty()) throw Error("bad-config: net.widths empty");
    return out;
}

struct TaskData {
    data::SplitDataset split;
    std::size_t output_dim = 0;
    bool scalar_output = false;  // xor sign readout
};

TaskData build_task_data(const Config& cfg, std::uint64_t seed) {
    const std::string task = cfg.get_str("task", "");
    TaskData td;
    if (task == "xor") {
        td.split = data::gen_xor_cluster(std::size_t(cfg.get_long("data.n", 400)),
                                         std::size_t(cfg.get_long("data.d", 400)),
                                         cfg.get_double("data.epsilon", 0.05), seed);
        td.output_dim = 1;
        td.scalar_output = true;
    } else if (task == "sparse_parity") {
        td.split = data::gen_sparse_parity(std::size_t(cfg.get_long("data.n", 1000)),
                                           std::size_t(cfg.get_long("data.bits", 40)),
                                           std::size_t(cfg.get_long("data.parity_bits", 3)), seed,
                                           cfg.get_bool("data.plus_minus_one", true));
        td.output_dim = 2;
    } else if (task == "modadd") {
        td.split = data::gen_modadd(std::size_t(cfg.get_long("data.p", 61)),
                                    cfg.get_double("data.train_frac", 0.5), seed);
        td.output_dim = std::size_t(td.split.train.num_classes);
    } else if (task == "mnist") {
        const std::string dir = cfg.get_str("data.dir", data::data_dir());
        const data::MnistPaths paths = data::ensure_mnist(dir);
        td.split.train = data::load_mnist_idx(paths.train_images, paths.train_labels,
                                              std::size_t(cfg.get_long("data.subset_n", 1024)), seed);
        td.split.test = data::load_mnist_idx(paths.test_images, paths.test_labels,
                                             std::size_t(cfg.get_long("data.test_subset_n", 2048)),
                                             derive_seed(seed, 0x7e57));
        td.output_dim = 10;
    } else {
        throw Error("bad-config: unknown mlp task '" + task + "'");
    }
    return td;
}

struct MetricProbe {
    Matrix x;
    Matrix targets;
    std::vector<int> labels;
};

EpochRow evaluate_epoch(long epoch, const net::MlpNetwork& network, net::Loss loss,
                        const Matrix& train_x, const Matrix& train_targets,
                        std::span<const int> train_labels, const Matrix& test_x,
                        std::span<const int> test_labels, const Matrix& metric_x,
                        std::optional<double> adv_noise, std::uint64_t adv_seed) {
    EpochRow row;
    row.epoch = epoch;
    {
        net::ForwardTrace tr = net::forward_trace(network, train_x);
        row.train_loss = net::loss_value(tr.logits(), train_targets, loss);
        row.train_acc = net::accuracy(tr.logits(), train_labels);
    }
    {
        net::ForwardTrace tr = net::forward_trace(network, test_x);
        row.test_acc = net::accuracy(tr.logits(), test_labels);
    }
    if (adv_noise) {
        // xor-style adversarial accuracy: gaussian noise on the tail coordinates
        Rng rng(derive_seed(adv_seed, 0xade, std::uint64_t(epoch)));
        Matrix noisy = test_x;
        for (std::size_t i = 0; i < noisy.rows; ++i) {
            auto r = noisy.row(i);
            for (std::size_t j = 2; j < r.size(); ++j) r[j] += *adv_noise * rng.normal();
        }
        net::ForwardTrace tr = net::forward_trace(network, noisy);
        row.adv_acc = net::accuracy(tr.logits(), test_labels);
    }
    // one dense Jacobian sweep feeds na/er/ca and both norm traces
    std::vector<Matrix> jacs;
    jacs.reserve(metric_x.rows);
    double jac_fro = 0.0, offset_norm = 0.0;
    for (std::size_t i = 0; i < metric_x.rows; ++i) {
        jacs.push_back(net::input_jacobian(network, metric_x.row(i)));
        jac_fro += linalg::frobenius_norm(jacs.back());
        Vector fx = net::forward(network, metric_x.row(i));
        const Vector jx = linalg::matvec(jacs.back(), metric_x.row(i));
        for (std::size_t j = 0; j < fx.size(); ++j) fx[j] -= jx[j];
        offset_norm += linalg::norm2(fx);
    }
    const geometry::AlignmentReport rep = geometry::alignment_metrics_from_jacobians(jacs, metric_x);
    row.na = rep.normal_alignment;
    row.er = rep.effective_rank;
    row.centroid_alignment = rep.centroid_alignment;
    row.mean_jac_fro = metric_x.rows ? jac_fro / double(metric_x.rows) : 0.0;
    row.mean_offset_norm = metric_x.rows ? offset_norm / double(metric_x.rows) : 0.0;
    return row;
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), x.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
    return out;
}

}  // namespace

RunRecord run_experiment(const Config& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    RunRecord record;
    record.config = cfg;
    record.seed = cfg.get_seed("seed", 0);

    TaskData td = build_task_data(cfg, record.seed);
    const Matrix& train_x = td.split.train.x;
    const std::vector<int>& train_y = td.split.train.y;
    const std::size_t n = train_x.rows;
    const std::size_t d = train_x.cols;

    const net::Loss loss = cfg.get_str("train.loss", "cross_entropy") == "squared_error"
                               ? net::Loss::squared_error
                               : net::Loss::cross_entropy;
    if (td.scalar_output && loss != net::Loss::squared_error)
        throw Error("bad-config: scalar-output task requires squared_error loss");

    const Matrix train_targets = td.scalar_output
                                     ? net::signed_targets(train_y)
                                     : net::one_hot_targets(train_y, td.output_dim);

    std::vector<std::size_t> dims = {d};
    for (std::size_t w : parse_widths(cfg.get_str("net.widths", "256"))) dims.push_back(w);
    dims.push_back(td.output_dim);
    const net::Activation act = cfg.get_str("net.activation", "relu") == "quadratic"
                                    ? net::Activation::quadratic
                                    : net::Activation::relu;
    net::MlpNetwork network =
        net::make_mlp(dims, act, cfg.get_bool("net.bias", true),
                      cfg.get_double("net.init_scale", 1.0), derive_seed(record.seed, 0x1217));

    optim::OptimizerState opt;
    opt.cfg = optim::OptimizerConfig::from_config(cfg);
    auto params = network.params();
    opt.init(params);

    reg::RegularizerSpec reg_spec = reg::RegularizerSpec::from_config(cfg);

    const long epochs = cfg.get_long("opt.epochs", 100);
    const std::size_t batch_size_cfg = std::size_t(cfg.get_long("opt.batch_size", 0));
    const std::size_t batch_size = batch_size_cfg == 0 ? n : std::min(batch_size_cfg, n);
    const bool full_batch = batch_size >= n;

    long log_interval = cfg.get_long("log.interval", 0);
    if (log_interval <= 0) log_interval = epochs <= 2000 ? 1 : 10;
    const std::size_t probe_cap = std::size_t(cfg.get_long("log.probe_cap", 128));

    const GrokCriterion criterion = GrokCriterion::from_config(cfg);
    const bool stop_at_grok = cfg.get_bool("run.stop_at_grok", false);

    const bool adv_train = cfg.get_bool("adv.train", false);
    robustness::AttackSpec attack;
    if (adv_train || cfg.get_bool("adv.eval", false)) {
        attack.norm = cfg.get_str("attack.norm", "l2") == "linf" ? robustness::AttackNorm::linf
                                                                 : robustness::AttackNorm::l2;
        attack.radius = cfg.get_double("attack.radius", 1.0);
        attack.steps = int(cfg.get_long("attack.steps", 20));
        attack.step_size = cfg.get_double("attack.step_size", 0.0);
        attack.random_start = cfg.get_bool("attack.random_start", true);
    }

    const double augment_gamma = cfg.get_double("data.augment_gamma", 0.0);

    std::optional<double> xor_adv_noise;
    if (criterion.metric == GrokCriterion::Metric::test_and_adv_accuracy)
        xor_adv_noise = cfg.get_double("xor.adv_noise", 0.2);

    // fixed probes
    const std::size_t metric_n = std::min(probe_cap, n);
    std::vector<std::size_t> metric_idx(metric_n);
    for (std::size_t i = 0; i < metric_n; ++i) metric_idx[i] = i;
    const Matrix metric_x = gather_rows(train_x, metric_idx);

    auto evaluate = [&](long epoch) {
        return evaluate_epoch(epoch, network, loss, train_x, train_targets, train_y,
                              td.split.test.x, td.split.test.y, metric_x, xor_adv_noise,
                              record.seed);
    };

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    if (epochs == 0) {
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        return record;
    }

    long global_step = 0;
    {
        EpochRow row0 = evaluate(0);
        if (criterion_met(criterion, row0)) record.grok_epoch = 0;
        record.rows.push_back(std::move(row0));
    }
    try {
        for (long epoch = 1; epoch <= epochs && !(stop_at_grok && record.grok_epoch); ++epoch) {
            if (!full_batch) {
                Rng shuffle_rng(derive_seed(record.seed, 0x5f1e, std::uint64_t(epoch)));
                for (std::size_t i = n; i > 1; --i) {
                    const std::size_t j =
                        std::size_t(shuffle_rng.uniform_int(0, std::int64_t(i) - 1));
                    std::swap(order[i - 1], order[j]);
                }
            }
            for (std::size_t start = 0; start < n; start += batch_size) {
                const std::size_t end = std::min(n, start + batch_size);
                Matrix xb;
                Matrix tb;
                std::vector<int> yb;
                if (full_batch) {
                    xb = train_x;
                    tb = train_targets;
                    yb = train_y;
                } else {
                    std::vector<std::size_t> idx(order.begin() + long(start),
                                                 order.begin() + long(end));
                    xb = gather_rows(train_x, idx);
                    yb.resize(idx.size());
                    for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = train_y[idx[i]];
                    tb = td.scalar_output ? net::signed_targets(yb)
                                          : net::one_hot_targets(yb, td.output_dim);
                }
                if (augment_gamma > 0.0) {
                    Rng aug_rng(derive_seed(record.seed, 0xa09, std::uint64_t(global_step)));
                    xb = data::augment_noise_shift(xb, augment_gamma, aug_rng);
                }
                if (adv_train) {
                    robustness::MlpClassifier clf(network);
                    for (std::size_t i = 0; i < xb.rows; ++i) {
                        robustness::AttackSpec sp = attack;
                        sp.seed = derive_seed(record.seed, 0xad7 + std::uint64_t(global_step), i);
                        const auto res = robustness::pgd_attack(clf, xb.row(i), yb[i], sp);
                        std::copy(res.x_adv.begin(), res.x_adv.end(), xb.row(i).begin());
                    }
                }
                const std::uint64_t probe_seed =
                    derive_seed(record.seed, 0x9e0b, std::uint64_t(global_step));
                reg::PenalizedLoss pl =
                    reg::penalized_loss(network, xb, tb, loss, reg_spec, probe_seed);
                auto grad_spans = pl.grads.spans();
                opt.apply_gradient_transform(params, grad_spans);
                std::vector<std::span<const double>> const_grads(grad_spans.begin(),
                                                                 grad_spans.end());
                opt.step(params, const_grads);
                ++global_step;
            }
            if (epoch % log_interval == 0 || epoch == epochs) {
                EpochRow row = evaluate(epoch);
                if (!record.grok_epoch && criterion_met(criterion, row))
                    record.grok_epoch = epoch;
                record.rows.push_back(std::move(row));
            }
        }
    } catch (const Error& e) {
        const std::string what = e.what();
        if (what.rfind("diverged", 0) == 0) {
            record.status = "diverged";
        } else {
            throw;
        }
    }

    if (cfg.get_bool("adv.eval", false)) {
        robustness::MlpClassifier clf(network);
        const std::size_t eval_n = std::min<std::size_t>(td.split.test.x.rows,
                                                         std::size_t(cfg.get_long("adv.eval_n", 512)));
        std::vector<std::size_t> idx(eval_n);
        for (std::size_t i = 0; i < eval_n; ++i) idx[i] = i;
        const Matrix ex = gather_rows(td.split.test.x, idx);
        std::vector<int> ey(td.split.test.y.begin(), td.split.test.y.begin() + long(eval_n));
        robustness::AttackSpec sp = attack;
        sp.seed = derive_seed(record.seed, 0xfe);
        const auto eval = robustness::evaluate_attack(clf, ex, ey, sp);
        record.summary_stats["final_robust_accuracy"] = eval.robust_accuracy;
        record.summary_stats["final_clean_accuracy"] = eval.clean_accuracy;
        if (eval.success_rate) record.summary_stats["final_attack_success_rate"] = *eval.success_rate;
    }

    const std::string ckpt = cfg.get_str("run.checkpoint_out", "");
    if (!ckpt.empty()) net::save_checkpoint(network, ckpt);

    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return record;
}

std::optional<long> epochs_to_grok(const RunRecord& record, const GrokCriterion& criterion) {
    for (const EpochRow& row : record.rows)
        if (criterion_met(criterion, row)) return row.epoch;
    return std::nullopt;
}

// ---- CSV / JSON -------------------------------------------------------------------

namespace {

void append_field(std::string& line, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    line += buf;
}

}  // namespace

std::string RunRecord::csv_text() const {
    std::string out = "# schema=grokalign-run-v1\n";
    out += "# task=" + config.get_str("task", "?") + " seed=" + std::to_string(seed) + "\n";
    out +=
        "epoch,train_loss,train_acc,test_acc,adv_acc,na,er,centroid_alignment,mean_jac_fro,mean_"
        "offset_norm\n";
    for (const EpochRow& row : rows) {
        std::string line = std::to_string(row.epoch);
        line += ',';
        append_field(line, row.train_loss);
        line += ',';
        append_field(line, row.train_acc);
        line += ',';
        append_field(line, row.test_acc);
        line += ',';
        if (row.adv_acc) append_field(line, *row.adv_acc);
        line += ',';
        append_field(line, row.na);
        line += ',';
        append_field(line, row.er);
        line += ',';
        append_field(line, row.centroid_alignment);
        line += ',';
        append_field(line, row.mean_jac_fro);
        line += ',';
        append_field(line, row.mean_offset_norm);
        line += '\n';
        out += line;
    }
    return out;
}

void RunRecord::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error("io-error: cannot write " + path);
    os << csv_text();
}

void RunRecord::write_summary_json(const std::string& path) const {
    nlohmann::json j;
    j["config"] = config.values;
    j["seed"] = seed;
    j["status"] = status;
    j["wall_seconds"] = wall_seconds;
    if (grok_epoch)
        j["grok_epoch"] = *grok_epoch;
    else
        j["grok_epoch"] = nullptr;
    for (const auto& [k, v] : summary_stats) j["stats"][k] = v;
    if (!rows.empty()) {
        const EpochRow& last = rows.back();
        j["final"]["epoch"] = last.epoch;
        j["final"]["train_acc"] = last.train_acc;
        j["final"]["test_acc"] = last.test_acc;
        j["final"]["na"] = last.na;
        j["final"]["er"] = last.er;
        j["final"]["centroid_alignment"] = last.centroid_alignment;
    }
    std::ofstream os(path);
    if (!os) throw Error("io-error: cannot write " + path);
    os << j.dump(2) << "\n";
}

// ---- statistics --------------------------------------------------------------------

double regularized_incomplete_beta(double x, double a, double b) {
    if (!(x >= 0.0 && x <= 1.0) || a <= 0.0 || b <= 0.0)
        throw Error("bad-args: regularized_incomplete_beta");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - regularized_incomplete_beta(1.0 - x, b, a);

    const double log_front = a * std::log(x) + b * std::log(1.0 - x) -
                             (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
    // modified Lentz continued fraction
    const double tiny = 1e-300;
    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double f = d;
    for (int m = 1; m <= 400; ++m) {
        const double dm = double(m);
        double numer = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
        d = 1.0 + numer * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + numer / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        f *= c * d;
        numer = -(a + dm) * (a + b + dm) * x / ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
        d = 1.0 + numer * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + numer / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double mult = c * d;
        f *= mult;
        if (std::abs(mult - 1.0) < 1e-15) break;
    }
    return std::exp(log_front) * f / a;
}

double student_t_cdf(double t, long df) {
    if (df < 1) throw Error("bad-args: student_t_cdf df >= 1");
    const double nu = double(df);
    const double x = nu / (nu + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(x, nu / 2.0, 0.5);
    return t <= 0.0 ? tail : 1.0 - tail;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("bad-args: paired samples must match");
    if (a.size() < 2) throw Error("bad-args: need at least 2 pairs");
    const std::size_t n = a.size();
    Vector diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
    double mean = 0.0;
    for (double v : diff) mean += v;
    mean /= double(n);
    double ss = 0.0;
    for (double v : diff) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / double(n - 1));
    if (sd == 0.0) throw Error("zero-variance: paired differences are constant");
    TTestResult out;
    out.df = long(n) - 1;
    out.t = mean / (sd / std::sqrt(double(n)));
    out.p = student_t_cdf(out.t, out.df);
    return out;
}

// ---- presets -----------------------------------------------------------------------

std::vector<std::string> preset_names() {
    return {"xor",    "sparse_parity", "mnist_ce",    "mnist_se", "modadd",
            "gklr_blobs", "gamma_sweep",   "ablation", "rfm_vs_rfam"};
}

Config preset(const std::string& name) {
    Config cfg;
    cfg.set("name", name);
    auto common_reg = [&](double weight) {
        cfg.set("reg.kind", "none");
        cfg.set_double("reg.weight", weight);
        cfg.set_long("reg.probes", 1);
        cfg.set("reg.distribution", "gaussian");
        cfg.set("opt.transform", "none");
        cfg.set_double("opt.grokfast_alpha", 0.8);
        cfg.set_double("opt.grokfast_lambda", 0.1);
    };
    if (name == "xor") {
        cfg.set("task", "xor");
        cfg.set_long("data.n", 400);
        cfg.set_long("data.d", 400);  // paper scale 40000 via data.d override
        cfg.set_double("data.epsilon", 0.05);
        cfg.set("train.loss", "squared_error");
        cfg.set("net.widths", "512");
        cfg.set("net.activation", "relu");
        cfg.set("net.bias", "true");
        cfg.set_double("net.init_scale", 1.0);
        cfg.set("opt.kind", "gd");
        cfg.set_double("opt.lr", 0.1);
        cfg.set_double("opt.weight_decay", 0.1);
        cfg.set_long("opt.batch_size", 0);
        cfg.set_long("opt.epochs", 1000);
        common_reg(1.0);
        cfg.set("criterion.metric", "test_and_adv_accuracy");
        cfg.set_double("criterion.threshold", 0.95);
        cfg.set_double("criterion.adv_threshold", 0.95);
        cfg.set_double("xor.adv_noise", 0.2);
    } else if (name == "sparse_parity") {
        cfg.set("task", "sparse_parity");
        cfg.set_long("data.n", 1000);
        cfg.set_long("data.bits", 40);
        cfg.set_long("data.parity_bits", 3);
        cfg.set("train.loss", "cross_entropy");
        cfg.set("net.widths", "200,200");
        cfg.set("net.activation", "relu");
        cfg.set("net.bias", "true");
        cfg.set_double("net.init_scale", 1.0);
        cfg.set("opt.kind", "adamw");
        cfg.set_double("opt.lr", 0.01);
        cfg.set_double("opt.weight_decay", 0.1);
        cfg.set_long("opt.batch_size", 0);
        cfg.set_long("opt.epochs", 20000);
        common_reg(0.1);
        cfg.set("criterion.metric", "test_accuracy");
        cfg.set_double("criterion.threshold", 0.90);
    } else if (name == "mnist_ce" || name == "mnist_se") {
        cfg.set("task", "mnist");
        cfg.set_long("data.subset_n", 1024);
        cfg.set_long("data.test_subset_n", 2048);
        cfg.set("train.loss", name == "mnist_ce" ? "cross_entropy" : "squared_error");
        cfg.set("net.widths", "196,196,196");
        cfg.set("net.activation", "relu");
        cfg.set("net.bias", "false");
        cfg.set_double("net.init_scale", 4.0);
        cfg.set("opt.kind", "adamw");
        cfg.set_double("opt.lr", 0.001);
        cfg.set_double("opt.weight_decay", 0.01);
        cfg.set_long("opt.batch_size", 128);
        cfg.set_long("opt.epochs", 20000);
        common_reg(0.01);
        cfg.set("criterion.metric", "test_accuracy");
        cfg.set_double("criterion.threshold", 0.80);
    } else if (name == "modadd") {
        cfg.set("task", "modadd");
        cfg.set_long("data.p", 61);
        cfg.set_double("data.train_frac", 0.22);
        cfg.set("train.loss", "squared_error");
        cfg.set("net.widths", "256");
        cfg.set("net.activation", "quadratic");
        cfg.set("net.bias", "true");
        cfg.set_double("net.init_scale", 1.0);
        cfg.set("opt.kind", "adamw");
        cfg.set_double("opt.lr", 0.001);
        cfg.set_double("opt.weight_decay", 1.0);
        cfg.set_long("opt.batch_size", 32);
        cfg.set_long("opt.epochs", 2500);
        common_reg(0.01);
        cfg.set("criterion.metric", "test_accuracy");
        cfg.set_double("criterion.threshold", 0.99);
    } else if (name == "gklr_blobs") {
        cfg.set("task", "gklr_blobs");
        cfg.set_long("data.n", 1000);
        cfg.set_long("data.d", 10);
        cfg.set_long("data.classes", 10);
        cfg.set_double("data.spread", 8.0);
        cfg.set_long("gklr.centers", 50);
        cfg.set_double("gklr.gamma", 0.025);
        cfg.set_double("opt.lr", 0.01);
        cfg.set_double("opt.weight_decay", 0.001);
        cfg.set_long("opt.epochs", 1000);
        cfg.set_long("log.interval", 10);
    } else if (name == "gamma_sweep") {
        cfg.set("task", "mnist");
        cfg.set_long("data.subset_n", 1000);
        cfg.set_long("data.test_subset_n", 1024);
        cfg.set("train.loss", "cross_entropy");
        cfg.set("net.widths", "196");
        cfg.set("net.activation", "relu");
        cfg.set("net.bias", "true");
        cfg.set_double("net.init_scale", 1.0);
        cfg.set("opt.kind", "adamw");
        cfg.set_double("opt.lr", 0.001);
        cfg.set_double("opt.weight_decay", 0.0001);
        cfg.set_long("opt.batch_size", 100);
        cfg.set_long("opt.epochs", 100);
        common_reg(0.0);
        cfg.set("reg.kind", "grokalign_output");
        cfg.set("adv.train", "true");
        cfg.set("adv.eval", "true");
        cfg.set("attack.norm", "l2");
        cfg.set_double("attack.radius", 1.0);
        cfg.set_long("attack.steps", 10);
        cfg.set("criterion.metric", "test_accuracy");
        cfg.set_double("criterion.threshold", 0.8);
        cfg.set("sweep.gammas", "0,1,10,100,1000");
    } else if (name == "ablation") {
        cfg.set("task", "mnist");
        cfg.set_long("data.subset_n", 512);
        cfg.set_long("data.test_subset_n", 1024);
        cfg.set("train.loss", "cross_entropy");
        cfg.set("net.widths", "196,196");
        cfg.set("net.activation", "relu");
        cfg.set("net.bias", "true");
        cfg.set_double("net.init_scale", 2.0);
        cfg.set("opt.kind", "adamw");
        cfg.set_double("opt.lr", 0.001);
        cfg.set_double("opt.weight_decay", 0.0001);
        cfg.set_long("opt.batch_size", 128);
        cfg.set_long("opt.epochs", 300);
        common_reg(0.01);
        cfg.set("criterion.metric", "test_accuracy");
        cfg.set_double("criterion.threshold", 0.80);
    } else if (name == "rfm_vs_rfam") {
        cfg.set("task", "rfm");
        cfg.set_long("data.n", 400);
        cfg.set_long("data.d", 12);
        cfg.set_long("data.classes", 2);
        cfg.set_double("data.anisotropy", 1.0);
        cfg.set_double("data.spread", 1.5);
        cfg.set_long("rfm.iterations", 1);
        cfg.set_double("rfm.gamma", 2.0);
        cfg.set_double("rfm.ridge_eps", 1e-6);
        cfg.set("attack.norm", "l2");
        cfg.set_double("attack.radius", 1.0);
        cfg.set_long("attack.steps", 20);
        cfg.set("rfm.alphas", "0,1");
    } else {
        std::string names;
        for (const auto& n : preset_names()) names += n + " ";
        throw Error("unknown-preset: '" + name + "'; known presets: " + names);
    }
    return cfg;
}

void apply_regularizer_choice(Config& cfg, const std::string& choice) {
    cfg.set("opt.transform", "none");
    if (choice == "none" || choice == "baseline") {
        cfg.set("reg.kind", "none");
    } else if (choice == "grokalign" || choice == "grokalign_output") {
        cfg.set("reg.kind", "grokalign_output");
    } else if (choice == "grokalign_input" || choice == "r_perp" || choice == "r_nuc" ||
               choice == "r_sigma") {
        cfg.set("reg.kind", choice);
    } else if (choice == "grokfast") {
        cfg.set("reg.kind", "none");
        cfg.set("opt.transform", "grokfast_ema");
    } else if (choice == "orthograd") {
        cfg.set("reg.kind", "none");
        cfg.set("opt.transform", "orthograd");
    } else {
        throw Error("bad-reg-choice: '" + choice + "'");
    }
}

// ---- composite runners ---------------------------------------------------------------

double median(std::vector<double> values) {
    if (values.empty()) throw Error("bad-args: median of empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

BenchResult run_grok_bench(const Config& base, const std::string& reg_choice,
                           const std::vector<std::uint64_t>& seeds, const std::string& out_dir) {
    BenchResult result;
    result.preset_name = base.get_str("name", base.get_str("task", "run"));
    result.reg_choice = reg_choice;
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    bool all_grokked = true;
    std::vector<double> grok_values;
    for (std::uint64_t seed : seeds) {
        Config cfg = base;
        apply_regularizer_choice(cfg, reg_choice);
        cfg.set_long("seed", long(seed));
        cfg.set("run.stop_at_grok", "true");
        RunRecord rec = run_experiment(cfg);
        result.grok_epochs.push_back(rec.grok_epoch);
        if (rec.grok_epoch)
            grok_values.push_back(double(*rec.grok_epoch));
        else
            all_grokked = false;
        if (!out_dir.empty()) {
            const std::string stem =
                out_dir + "/" + result.preset_name + "-" + reg_choice + "-seed" + std::to_string(seed);
            rec.write_csv(stem + ".csv");
            rec.write_summary_json(stem + ".json");
        }
        result.runs.push_back(std::move(rec));
    }
    if (all_grokked && !grok_values.empty()) result.median_grok = median(grok_values);
    if (!out_dir.empty()) {
        std::ofstream os(out_dir + "/" + result.preset_name + "-" + reg_choice + "-aggregate.csv");
        os << "seed,grok_epoch\n";
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            os << seeds[i] << ",";
            if (result.grok_epochs[i]) os << *result.grok_epochs[i];
            os << "\n";
        }
    }
    return result;
}

std::vector<GammaSweepRow> run_gamma_sweep(const Config& base, const std::vector<double>& gammas) {
    std::vector<GammaSweepRow> rows;
    for (double gamma : gammas) {
        Config cfg = base;
        cfg.set_double("reg.weight", gamma);
        if (gamma == 0.0) cfg.set("reg.kind", "none");
        GammaSweepRow row;
        row.gamma = gamma;
        row.record = run_experiment(cfg);
        if (!row.record.rows.empty()) {
            row.final_clean_acc = row.record.rows.back().test_acc;
            row.final_mean_jac_fro = row.record.rows.back().mean_jac_fro;
            for (const EpochRow& r : row.record.rows)
                row.max_mean_offset_norm = std::max(row.max_mean_offset_norm, r.mean_offset_norm);
        }
        if (row.record.summary_stats.count("final_robust_accuracy"))
            row.final_robust_acc = row.record.summary_stats.at("final_robust_accuracy");
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<RfmCompareRow> run_rfm_compare(const Config& base, const std::vector<double>& alphas,
                                           const std::vector<std::uint64_t>& seeds) {
    std::vector<RfmCompareRow> rows;
    robustness::AttackSpec attack;
    attack.norm = base.get_str("attack.norm", "l2") == "linf" ? robustness::AttackNorm::linf
                                                              : robustness::AttackNorm::l2;
    attack.radius = base.get_double("attack.radius", 1.0);
    attack.steps = int(base.get_long("attack.steps", 20));

    for (double alpha : alphas) {
        RfmCompareRow row;
        row.alpha = alpha;
        double acc = 0.0, asr = 0.0, na = 0.0, span_max = 0.0;
        for (std::uint64_t seed : seeds) {
            data::SplitDataset split = data::gen_synthetic_tabular(
                std::size_t(base.get_long("data.n", 400)), std::size_t(base.get_long("data.d", 12)),
                std::size_t(base.get_long("data.classes", 2)),
                base.get_double("data.anisotropy", 1.0), seed);
            data::standardize(split);
            kernels::RfmResult fit = kernels::rfm_fit(
                split.train, base.get_long("rfm.iterations", 5), base.get_double("rfm.gamma", 1.0),
                base.get_double("rfm.ridge_eps", 1e-6), kernels::MInit::rfam, alpha);
            acc += kernels::km_accuracy(fit.machine, split.test);
            robustness::KernelClassifier clf(fit.machine);
            robustness::AttackSpec sp = attack;
            sp.seed = derive_seed(seed, 0xa56);
            const auto eval =
                robustness::evaluate_attack(clf, split.test.x, split.test.y, sp);
            asr += eval.success_rate.value_or(1.0);
            na += kernels::km_alignment(fit.machine, split.train.x, 128).normal_alignment;
            for (std::size_t t = 1; t < fit.m_trace.size(); ++t)
                span_max = std::max(span_max,
                                    kernels::span_residual(fit.m_trace[t], split.train.x).full);
        }
        const double k = double(seeds.size());
        row.test_accuracy = acc / k;
        row.attack_success_rate = asr / k;
        row.normal_alignment = na / k;
        row.max_span_residual = span_max;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace grokalign::harness

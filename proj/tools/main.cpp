#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "grokalign/data.hpp"
#include "grokalign/geometry.hpp"
#include "grokalign/harness.hpp"
#include "grokalign/kernels.hpp"
#include "grokalign/net.hpp"
#include "grokalign/robustness.hpp"

using namespace grokalign;

namespace {

Config load_config(const std::string& name_or_path, const std::vector<std::string>& overrides) {
    Config cfg;
    if (std::filesystem::exists(name_or_path) &&
        name_or_path.size() > 5 &&
        name_or_path.substr(name_or_path.size() - 5) == ".json")
        cfg = Config::from_json_file(name_or_path);
    else
        cfg = harness::preset(name_or_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    return cfg;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

std::vector<std::uint64_t> seed_range(std::size_t n, std::uint64_t base) {
    std::vector<std::uint64_t> seeds(n);
    for (std::size_t i = 0; i < n; ++i) seeds[i] = base + i;
    return seeds;
}

// last numeric field per row; tolerates headers and aggregate csv layouts
std::vector<double> read_numbers_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("io-error: cannot open " + path);
    std::vector<double> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto pos = line.find_last_of(',');
        const std::string cell = pos == std::string::npos ? line : line.substr(pos + 1);
        try {
            std::size_t used = 0;
            const double v = std::stod(cell, &used);
            if (used == cell.size()) out.push_back(v);
        } catch (...) {
            continue;  // header or blank field
        }
    }
    return out;
}

data::SplitDataset dataset_from_spec(const Config& cfg, const std::string& spec,
                                     std::uint64_t seed) {
    if (spec.rfind("csv:", 0) == 0) {
        data::SplitDataset split;
        split.train = data::load_csv_tabular(spec.substr(4), cfg.get_str("data.label_col", "label"));
        split.test = split.train;
        return split;
    }
    if (spec == "synthetic" || spec == "tabular")
        return data::gen_synthetic_tabular(std::size_t(cfg.get_long("data.n", 400)),
                                           std::size_t(cfg.get_long("data.d", 12)),
                                           std::size_t(cfg.get_long("data.classes", 2)),
                                           cfg.get_double("data.anisotropy", 1.0), seed);
    if (spec == "blobs")
        return data::gen_gaussian_blobs(std::size_t(cfg.get_long("data.n", 1000)),
                                        std::size_t(cfg.get_long("data.d", 10)),
                                        std::size_t(cfg.get_long("data.classes", 10)),
                                        cfg.get_double("data.spread", 3.0), seed);
    if (spec == "xor")
        return data::gen_xor_cluster(std::size_t(cfg.get_long("data.n", 400)),
                                     std::size_t(cfg.get_long("data.d", 400)),
                                     cfg.get_double("data.epsilon", 0.05), seed);
    if (spec == "sparse_parity") return data::gen_sparse_parity(1000, 40, 3, seed);
    if (spec == "modadd") return data::gen_modadd(61, 0.5, seed);
    if (spec == "mnist") {
        const auto paths = data::ensure_mnist(cfg.get_str("data.dir", data::data_dir()));
        data::SplitDataset split;
        split.train = data::load_mnist_idx(paths.train_images, paths.train_labels,
                                           std::size_t(cfg.get_long("data.subset_n", 1024)), seed);
        split.test = data::load_mnist_idx(paths.test_images, paths.test_labels, 0, seed);
        return split;
    }
    throw Error("bad-data-spec: '" + spec + "'");
}

int cmd_run(const std::string& name, std::uint64_t seed, const std::string& out_dir,
            const std::vector<std::string>& overrides) {
    Config cfg = load_config(name, overrides);
    cfg.set_long("seed", long(seed));
    std::filesystem::create_directories(out_dir);
    const std::string task = cfg.get_str("task", "");
    const std::string stem = out_dir + "/" + cfg.get_str("name", task) + "-seed" +
                             std::to_string(seed);

    if (task == "gklr_blobs") {
        auto split = data::gen_gaussian_blobs(std::size_t(cfg.get_long("data.n", 1000)),
                                              std::size_t(cfg.get_long("data.d", 10)),
                                              std::size_t(cfg.get_long("data.classes", 10)),
                                              cfg.get_double("data.spread", 3.0), seed);
        const auto res = kernels::gklr_train(
            split.train, split.test, std::size_t(cfg.get_long("gklr.centers", 50)),
            cfg.get_double("gklr.gamma", 0.1), cfg.get_long("opt.epochs", 1000),
            cfg.get_double("opt.lr", 0.01), cfg.get_double("opt.weight_decay", 0.001), seed,
            cfg.get_long("log.interval", 10));
        std::ofstream os(stem + ".csv");
        os << "epoch,train_loss,train_acc,test_acc,na,er,centroid_alignment,skipped\n";
        char buf[256];
        for (const auto& row : res.trace) {
            std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n",
                          row.epoch, row.train_loss, row.train_acc, row.test_acc,
                          row.alignment.normal_alignment, row.alignment.effective_rank,
                          row.alignment.centroid_alignment, row.alignment.skipped);
            os << buf;
        }
        std::printf("gklr: final test_acc=%.4f na=%.4f er=%.4f (%s.csv)\n",
                    res.trace.back().test_acc, res.trace.back().alignment.normal_alignment,
                    res.trace.back().alignment.effective_rank, stem.c_str());
        return 0;
    }
    if (task == "rfm") {
        const auto rows = harness::run_rfm_compare(
            cfg, parse_double_list(cfg.get_str("rfm.alphas", "0,1")), {seed});
        std::ofstream os(stem + ".csv");
        os << "alpha,test_accuracy,attack_success_rate,normal_alignment,max_span_residual\n";
        for (const auto& row : rows) {
            os << row.alpha << "," << row.test_accuracy << "," << row.attack_success_rate << ","
               << row.normal_alignment << "," << row.max_span_residual << "\n";
            std::printf("rfm alpha=%.3f: acc=%.4f asr=%.4f na=%.4f span=%.2e\n", row.alpha,
                        row.test_accuracy, row.attack_success_rate, row.normal_alignment,
                        row.max_span_residual);
        }
        return 0;
    }
    if (cfg.has("sweep.gammas")) {
        const auto rows =
            harness::run_gamma_sweep(cfg, parse_double_list(cfg.get_str("sweep.gammas", "")));
        std::ofstream os(stem + "-sweep.csv");
        os << "gamma,final_clean_acc,final_robust_acc,final_mean_jac_fro,max_mean_offset_norm\n";
        for (const auto& row : rows) {
            os << row.gamma << "," << row.final_clean_acc << "," << row.final_robust_acc << ","
               << row.final_mean_jac_fro << "," << row.max_mean_offset_norm << "\n";
            char gbuf[32];
            std::snprintf(gbuf, sizeof(gbuf), "%g", row.gamma);
            const std::string run_stem = stem + "-gamma" + gbuf;
            row.record.write_csv(run_stem + ".csv");
            std::printf("gamma=%-8.5g clean=%.4f robust=%.4f |J|=%.4g max|b|=%.4g\n", row.gamma,
                        row.final_clean_acc, row.final_robust_acc, row.final_mean_jac_fro,
                        row.max_mean_offset_norm);
        }
        return 0;
    }

    const auto rec = harness::run_experiment(cfg);
    rec.write_csv(stem + ".csv");
    rec.write_summary_json(stem + ".json");
    std::printf("%s seed=%llu status=%s", cfg.get_str("name", task).c_str(),
                static_cast<unsigned long long>(seed), rec.status.c_str());
    if (rec.grok_epoch)
        std::printf(" grok_epoch=%ld", *rec.grok_epoch);
    else
        std::printf(" grok_epoch=none");
    if (!rec.rows.empty())
        std::printf(" final_test_acc=%.4f na=%.4f er=%.4f", rec.rows.back().test_acc,
                    rec.rows.back().na, rec.rows.back().er);
    std::printf(" wall=%.1fs -> %s.csv\n", rec.wall_seconds, stem.c_str());
    return 0;
}

int cmd_grok_bench(const std::string& name, std::size_t seeds, const std::string& reg,
                   std::uint64_t seed_base, const std::string& out_dir,
                   const std::vector<std::string>& overrides) {
    Config cfg = load_config(name, overrides);
    const auto bench = harness::run_grok_bench(cfg, reg, seed_range(seeds, seed_base), out_dir);
    std::printf("%s reg=%s:", bench.preset_name.c_str(), reg.c_str());
    for (const auto& g : bench.grok_epochs)
        if (g)
            std::printf(" %ld", *g);
        else
            std::printf(" -");
    if (bench.median_grok)
        std::printf("  median=%.1f\n", *bench.median_grok);
    else
        std::printf("  (not all runs grokked)\n");
    return 0;
}

int cmd_metrics(const std::string& checkpoint, const std::string& data_spec,
                const std::vector<std::string>& overrides) {
    Config cfg;
    for (const auto& o : overrides) cfg.apply_override(o);
    const auto split = dataset_from_spec(cfg, data_spec, cfg.get_seed("seed", 0));
    const std::size_t cap = std::size_t(cfg.get_long("log.probe_cap", 128));
    const std::size_t rows = std::min(cap, split.train.size());
    linalg::Matrix probe(rows, split.train.dim());
    for (std::size_t i = 0; i < rows; ++i)
        std::copy(split.train.x.row(i).begin(), split.train.x.row(i).end(), probe.row(i).begin());
    geometry::AlignmentReport rep;
    try {
        const net::MlpNetwork network = net::load_checkpoint(checkpoint);
        rep = geometry::alignment_metrics(network, probe);
    } catch (const Error&) {
        // not an mlp checkpoint, try the kernel-machine format
        const kernels::KernelMachine km = kernels::load_machine(checkpoint);
        rep = kernels::km_alignment(km, probe);
    }
    std::printf("step,na,er,centroid_alignment,skipped\n%s\n", rep.csv_row(0).c_str());
    return 0;
}

int cmd_ablate(bool full, std::uint64_t seed, const std::string& out_dir,
               const std::vector<std::string>& overrides) {
    struct Strategy {
        const char* reg;
        std::vector<double> weights;
        double best;
    };
    const std::vector<Strategy> strategies = {
        {"grokalign_input", {1e-4, 1e-3, 1e-2, 0.1, 1.0}, 0.1},
        {"grokalign", {1e-4, 1e-3, 1e-2, 0.1}, 0.01},
        {"r_perp", {1e-4, 1e-3, 1e-2, 0.1, 1.0}, 0.1},
        {"r_nuc", {1e-4, 1e-3, 1e-2, 0.1}, 0.01},
    };
    const std::vector<int> probe_counts = full ? std::vector<int>{1, 2, 4} : std::vector<int>{1};
    std::filesystem::create_directories(out_dir);
    std::ofstream os(out_dir + "/ablation.csv");
    os << "strategy,probes,weight,final_test_acc,final_robust_acc,final_na,final_er\n";

    auto run_one = [&](const std::string& reg, int probes, double weight) {
        Config cfg = load_config("ablation", overrides);
        cfg.set_long("seed", long(seed));
        cfg.set("adv.eval", "true");
        if (reg != "baseline") {
            harness::apply_regularizer_choice(cfg, reg);
            cfg.set_long("reg.probes", probes);
            cfg.set_double("reg.weight", weight);
        } else {
            harness::apply_regularizer_choice(cfg, "none");
        }
        const auto rec = harness::run_experiment(cfg);
        const auto& last = rec.rows.back();
        const double robust = rec.summary_stats.count("final_robust_accuracy")
                                  ? rec.summary_stats.at("final_robust_accuracy")
                                  : 0.0;
        os << reg << "," << probes << "," << weight << "," << last.test_acc << "," << robust << ","
           << last.na << "," << last.er << "\n";
        std::printf("%-16s probes=%d weight=%-8g acc=%.4f robust=%.4f na=%.4f er=%.4f\n",
                    reg.c_str(), probes, weight, last.test_acc, robust, last.na, last.er);
    };

    run_one("baseline", 0, 0.0);
    for (const auto& st : strategies) {
        const std::vector<double> weights = full ? st.weights : std::vector<double>{st.best};
        for (int probes : probe_counts)
            for (double w : weights) run_one(st.reg, probes, w);
    }
    std::printf("wrote %s/ablation.csv\n", out_dir.c_str());
    return 0;
}

int cmd_ttest(const std::string& csv_a, const std::string& csv_b) {
    const auto a = read_numbers_csv(csv_a);
    const auto b = read_numbers_csv(csv_b);
    const auto res = harness::paired_t_test(a, b);
    std::printf("n=%zu t=%.6g df=%ld one_sided_p=%.6g\n", a.size(), res.t, res.df, res.p);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"normal-alignment experiments: grokking benchmarks, GrokAlign "
                 "regularizers, RFM/RFAM kernels, and robustness evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::vector<std::string> overrides;
    app.add_option("--set", overrides, "config override key=value (repeatable)")
        ->take_all()
        ->expected(-1);

    std::string name, reg = "none", out_dir = "runs", data_spec = "synthetic", checkpoint;
    std::string csv_a, csv_b;
    std::size_t seeds = 5;
    std::uint64_t seed = 0, seed_base = 1;
    bool full_grid = false;
    std::string alphas = "0,1";

    auto* run = app.add_subcommand("run", "run one preset or config file");
    run->add_option("preset", name, "preset name or config .json path")->required();
    run->add_option("--seed", seed, "run seed");
    run->add_option("--out", out_dir, "output directory");

    auto* bench = app.add_subcommand("grok-bench", "multi-seed time-to-grok benchmark");
    bench->add_option("preset", name)->required();
    bench->add_option("--seeds", seeds, "number of seeds");
    bench->add_option("--seed-base", seed_base, "first seed value");
    bench->add_option("--reg", reg,
                      "none|grokalign|grokalign_input|r_perp|r_nuc|r_sigma|grokfast|orthograd");
    bench->add_option("--out", out_dir);

    auto* rfm = app.add_subcommand("rfm", "RFM vs RFAM comparison");
    rfm->add_option("--alpha", alphas, "comma list of rfam alpha values");
    rfm->add_option("--data", data_spec, "synthetic | csv:<path>");
    rfm->add_option("--seeds", seeds);

    auto* metrics = app.add_subcommand("metrics", "alignment metrics of a checkpoint");
    metrics->add_option("--checkpoint", checkpoint)->required();
    metrics->add_option("--data", data_spec,
                        "xor|sparse_parity|modadd|mnist|blobs|synthetic|csv:<path>");

    auto* ablate = app.add_subcommand("ablate", "regularizer ablation grid");
    ablate->add_flag("--full", full_grid, "full projection/weight grid");
    ablate->add_option("--seed", seed);
    ablate->add_option("--out", out_dir);

    auto* ttest = app.add_subcommand("ttest", "paired one-sided t-test of two csv columns");
    ttest->add_option("csvA", csv_a)->required();
    ttest->add_option("csvB", csv_b)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(name, seed, out_dir, overrides);
        if (bench->parsed()) return cmd_grok_bench(name, seeds, reg, seed_base, out_dir, overrides);
        if (rfm->parsed()) {
            Config cfg = load_config("rfm_vs_rfam", overrides);
            if (data_spec.rfind("csv:", 0) == 0) cfg.set("rfm.data", data_spec);
            const auto rows =
                harness::run_rfm_compare(cfg, parse_double_list(alphas), seed_range(seeds, 1));
            std::printf(
                "alpha,test_accuracy,attack_success_rate,normal_alignment,max_span_residual\n");
            for (const auto& row : rows)
                std::printf("%.4g,%.6g,%.6g,%.6g,%.3e\n", row.alpha, row.test_accuracy,
                            row.attack_success_rate, row.normal_alignment, row.max_span_residual);
            return 0;
        }
        if (metrics->parsed()) return cmd_metrics(checkpoint, data_spec, overrides);
        if (ablate->parsed()) return cmd_ablate(full_grid, seed, out_dir, overrides);
        if (ttest->parsed()) return cmd_ttest(csv_a, csv_b);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

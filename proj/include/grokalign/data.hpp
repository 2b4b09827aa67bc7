#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grokalign/linalg.hpp"
#include "grokalign/rng.hpp"

namespace grokalign::data {

using linalg::Matrix;
using linalg::Vector;

struct Standardization {
    Vector mean;
    Vector scale;
};

struct LabeledDataset {
    Matrix x;
    std::vector<int> y;
    int num_classes = 0;
    std::optional<Standardization> standardization;
    std::string provenance;
    std::uint64_t seed = 0;

    std::size_t size() const { return x.rows; }
    std::size_t dim() const { return x.cols; }
};

struct SplitDataset {
    LabeledDataset train;
    LabeledDataset test;
};

// x = (x1, x2, tail), x1,x2 in {+-1}, tail entries {+-epsilon}, label x1*x2
// mapped {-1,+1} -> {0,1}. Train and test both of size n, rows distinct.
SplitDataset gen_xor_cluster(std::size_t n, std::size_t d, double epsilon, std::uint64_t seed);

// 2n distinct uniform bit strings split 50/50; label = parity of the first k
// bits. Features encoded {-1,+1} by default ({0,1} otherwise).
SplitDataset gen_sparse_parity(std::size_t n, std::size_t bits, std::size_t k, std::uint64_t seed,
                               bool plus_minus_one = true);

// All p^2 pairs (a,b), input = concat(one_hot(a), one_hot(b)), label (a+b)%p.
SplitDataset gen_modadd(std::size_t p, double train_frac = 0.5, std::uint64_t seed = 0);

// IDX files (magic 0x803 / 0x801, big endian). Pixels scaled to [0,1],
// flattened row-major; subset drawn without replacement (0 = all).
LabeledDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              std::size_t subset_n, std::uint64_t seed);

// Isotropic unit-variance clusters around C random directions of the given
// radius; 80/20 split.
SplitDataset gen_gaussian_blobs(std::size_t n, std::size_t d, std::size_t num_classes,
                                double spread, std::uint64_t seed);

// Blobs pushed through per-feature scale/offset maps of strength `anisotropy`;
// zero strength reproduces gen_gaussian_blobs exactly.
SplitDataset gen_synthetic_tabular(std::size_t n, std::size_t d, std::size_t num_classes,
                                   double anisotropy, std::uint64_t seed);

LabeledDataset load_csv_tabular(const std::string& path, const std::string& label_col);
void write_csv_tabular(const LabeledDataset& ds, const std::string& path);

// Column stats from train applied to both splits. Constant columns keep
// scale 1.
void standardize(SplitDataset& split);

// Integer pixel shifts up to +-round(0.2*gamma*28) with zero padding, then
// additive gaussian noise of std 0.3*gamma. Rows must be 28x28 images.
Matrix augment_noise_shift(const Matrix& images, double gamma, Rng& rng);

// ---- data directory ----------------------------------------------------------

std::string data_dir();  // $GROKALIGN_DATA_DIR or ./data

struct MnistPaths {
    std::string train_images, train_labels, test_images, test_labels;
    bool synthetic = false;
};

// Prefers real MNIST files under dir; otherwise generates (once) and returns a
// deterministic synthetic 10-class digit corpus in the same IDX format.
MnistPaths ensure_mnist(const std::string& dir);

// Deterministic seven-segment style digit corpus writer (IDX format).
void write_synthetic_digit_corpus(const std::string& images_path, const std::string& labels_path,
                                  std::size_t n, std::uint64_t seed);

// FNV-1a over the row bytes; used for disjointness checks.
std::uint64_t row_hash(const Matrix& m, std::size_t row);

}  // namespace grokalign::data

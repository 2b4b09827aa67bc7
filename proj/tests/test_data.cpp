#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "grokalign/data.hpp"
#include "grokalign/rng.hpp"

using namespace grokalign;
using linalg::Matrix;
using linalg::Vector;

namespace {

void check_disjoint(const data::SplitDataset& split) {
    std::unordered_set<std::uint64_t> train_hashes;
    for (std::size_t i = 0; i < split.train.size(); ++i)
        train_hashes.insert(data::row_hash(split.train.x, i));
    for (std::size_t i = 0; i < split.test.size(); ++i)
        CHECK(train_hashes.count(data::row_hash(split.test.x, i)) == 0);
}

}  // namespace

TEST_CASE("xor cluster shapes, labels, and tails") {
    const auto split = data::gen_xor_cluster(50, 8, 0.05, 42);
    CHECK(split.train.size() == 50);
    CHECK(split.test.size() == 50);
    CHECK(split.train.dim() == 8);
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        const auto row = split.train.x.row(i);
        CHECK(std::abs(std::abs(row[0]) - 1.0) <= 1e-15);
        CHECK(std::abs(std::abs(row[1]) - 1.0) <= 1e-15);
        for (std::size_t j = 2; j < 8; ++j) CHECK(std::abs(std::abs(row[j]) - 0.05) <= 1e-15);
        const int expected = row[0] * row[1] > 0 ? 1 : 0;
        CHECK(split.train.y[i] == expected);
    }
    check_disjoint(split);

    // epsilon = 0 zeroes the tail
    const auto flat = data::gen_xor_cluster(10, 5, 0.0, 1);
    for (std::size_t i = 0; i < flat.train.size(); ++i)
        for (std::size_t j = 2; j < 5; ++j) CHECK(flat.train.x(i, j) == 0.0);
}

TEST_CASE("sparse parity labels depend only on the first k bits") {
    const auto split = data::gen_sparse_parity(200, 40, 3, 7);
    CHECK(split.train.size() == 200);
    CHECK(split.test.size() == 200);
    CHECK(split.train.dim() == 40);
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        int parity = 0;
        for (std::size_t j = 0; j < 3; ++j)
            if (split.train.x(i, j) > 0.0) parity ^= 1;
        CHECK(split.train.y[i] == parity);
    }
    check_disjoint(split);
    // {0,1} encoding variant
    const auto zo = data::gen_sparse_parity(20, 10, 2, 7, false);
    for (double v : zo.train.x.data) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("modadd covers all pairs exactly once with wraparound labels") {
    const std::size_t p = 13;
    const auto split = data::gen_modadd(p, 0.5, 3);
    CHECK(split.train.size() + split.test.size() == p * p);
    CHECK(split.train.dim() == 2 * p);
    CHECK(split.train.num_classes == int(p));
    check_disjoint(split);

    std::unordered_set<std::uint64_t> seen;
    for (const auto* ds : {&split.train, &split.test})
        for (std::size_t i = 0; i < ds->size(); ++i) {
            // decode the pair and verify the label
            std::size_t a = p, b = p;
            for (std::size_t j = 0; j < p; ++j) {
                if (ds->x(i, j) == 1.0) a = j;
                if (ds->x(i, p + j) == 1.0) b = j;
            }
            REQUIRE(a < p);
            REQUIRE(b < p);
            CHECK(ds->y[i] == int((a + b) % p));
            seen.insert(a * p + b);
        }
    CHECK(seen.size() == p * p);

    // wraparound example (p-1) + 1 = 0
    const auto tiny = data::gen_modadd(5, 0.5, 1);
    (void)tiny;
}

TEST_CASE("gaussian blobs split 80/20 and separate at large spread") {
    const auto split = data::gen_gaussian_blobs(200, 6, 3, 50.0, 11);
    CHECK(split.train.size() == 160);
    CHECK(split.test.size() == 40);
    // nearest-mean classifier sanity oracle at huge spread
    Matrix means(3, 6);
    std::vector<std::size_t> counts(3, 0);
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        linalg::axpy(1.0, split.train.x.row(i), means.row(split.train.y[i]));
        ++counts[split.train.y[i]];
    }
    for (std::size_t c = 0; c < 3; ++c) linalg::scale(1.0 / double(counts[c]), means.row(c));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
        double best = 1e300;
        int arg = -1;
        for (std::size_t c = 0; c < 3; ++c) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                const double v = split.test.x(i, j) - means(c, j);
                d2 += v * v;
            }
            if (d2 < best) {
                best = d2;
                arg = int(c);
            }
        }
        if (arg == split.test.y[i]) ++correct;
    }
    CHECK(double(correct) / double(split.test.size()) == doctest::Approx(1.0));
}

TEST_CASE("binary blobs are roughly balanced") {
    const auto split = data::gen_gaussian_blobs(1000, 4, 2, 3.0, 17);
    std::size_t ones = 0;
    for (int y : split.train.y) ones += std::size_t(y);
    const double frac = double(ones) / double(split.train.size());
    CHECK(frac > 0.4);
    CHECK(frac < 0.6);
}

TEST_CASE("synthetic tabular with zero anisotropy equals plain blobs") {
    const auto blobs = data::gen_gaussian_blobs(100, 5, 3, 2.5, 23);
    const auto tab = data::gen_synthetic_tabular(100, 5, 3, 0.0, 23);
    REQUIRE(tab.train.size() == blobs.train.size());
    for (std::size_t i = 0; i < tab.train.x.data.size(); ++i)
        CHECK(tab.train.x.data[i] == blobs.train.x.data[i]);
    for (std::size_t i = 0; i < tab.train.size(); ++i)
        CHECK(tab.train.y[i] == blobs.train.y[i]);
}

TEST_CASE("anisotropic tabular features have distinct scales") {
    const auto tab = data::gen_synthetic_tabular(400, 6, 2, 1.5, 29);
    Vector spreads(6, 0.0);
    Vector means(6, 0.0);
    for (std::size_t i = 0; i < tab.train.size(); ++i)
        linalg::axpy(1.0, tab.train.x.row(i), means);
    linalg::scale(1.0 / double(tab.train.size()), means);
    for (std::size_t i = 0; i < tab.train.size(); ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            const double c = tab.train.x(i, j) - means[j];
            spreads[j] += c * c;
        }
    double lo = 1e300, hi = 0.0;
    for (double v : spreads) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(hi / lo > 2.0);
}

TEST_CASE("standardization centers and scales the train split") {
    auto split = data::gen_synthetic_tabular(300, 5, 2, 1.0, 31);
    data::standardize(split);
    REQUIRE(split.train.standardization.has_value());
    for (std::size_t j = 0; j < 5; ++j) {
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < split.train.size(); ++i) mean += split.train.x(i, j);
        mean /= double(split.train.size());
        for (std::size_t i = 0; i < split.train.size(); ++i) {
            const double c = split.train.x(i, j) - mean;
            var += c * c;
        }
        var /= double(split.train.size());
        CHECK(std::abs(mean) <= 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("csv round-trip reproduces features and labels exactly") {
    auto split = data::gen_synthetic_tabular(40, 4, 3, 0.7, 37);
    const std::string path = "tabular_roundtrip.csv";
    data::write_csv_tabular(split.train, path);
    const auto back = data::load_csv_tabular(path, "label");
    REQUIRE(back.size() == split.train.size());
    REQUIRE(back.dim() == split.train.dim());
    for (std::size_t i = 0; i < back.x.data.size(); ++i)
        CHECK(back.x.data[i] == split.train.x.data[i]);
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back.y[i] == split.train.y[i]);
    CHECK(back.num_classes == 3);
    std::remove(path.c_str());
}

TEST_CASE("csv parser reports bad cells with row and column") {
    const std::string path = "bad.csv";
    {
        std::ofstream os(path);
        os << "f0,f1,label\n1.0,2.0,0\n1.0,oops,1\n";
    }
    CHECK_THROWS_WITH_AS(data::load_csv_tabular(path, "label"),
                         doctest::Contains("row 3 col 2"), Error);
    std::remove(path.c_str());
    CHECK_THROWS_AS(data::load_csv_tabular("missing_file.csv", "label"), Error);
}

TEST_CASE("idx loader round-trips the synthetic writer and rejects bad magics") {
    const std::string img = "test-images-idx3-ubyte";
    const std::string lab = "test-labels-idx1-ubyte";
    data::write_synthetic_digit_corpus(img, lab, 64, 5);
    const auto full = data::load_mnist_idx(img, lab, 0, 0);
    CHECK(full.size() == 64);
    CHECK(full.dim() == 784);
    for (double v : full.x.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // independent minimal reader: recount the label histogram byte by byte
    {
        std::ifstream is(lab, std::ios::binary);
        std::vector<unsigned char> raw(8 + 64);
        is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
        std::vector<int> hist_oracle(10, 0), hist_loaded(10, 0);
        for (std::size_t i = 0; i < 64; ++i) ++hist_oracle[raw[8 + i]];
        for (int y : full.y) ++hist_loaded[y];
        for (int c = 0; c < 10; ++c) CHECK(hist_oracle[c] == hist_loaded[c]);
    }
    // subset draw without replacement
    const auto sub = data::load_mnist_idx(img, lab, 16, 9);
    CHECK(sub.size() == 16);
    std::unordered_set<std::uint64_t> hashes;
    for (std::size_t i = 0; i < 16; ++i) hashes.insert(data::row_hash(sub.x, i));
    CHECK(hashes.size() == 16);

    // corrupt magic
    {
        std::fstream f(img, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        const char zero = 0x7f;
        f.write(&zero, 1);
    }
    CHECK_THROWS_WITH_AS(data::load_mnist_idx(img, lab, 0, 0), doctest::Contains("bad magic"),
                         Error);
    std::remove(img.c_str());
    std::remove(lab.c_str());
}

TEST_CASE("idx loader reports truncation with a byte offset") {
    const std::string img = "trunc-images-idx3-ubyte";
    const std::string lab = "trunc-labels-idx1-ubyte";
    data::write_synthetic_digit_corpus(img, lab, 8, 5);
    std::filesystem::resize_file(img, 16 + 3 * 784);  // cut inside image 4
    CHECK_THROWS_WITH_AS(data::load_mnist_idx(img, lab, 0, 0), doctest::Contains("truncated"),
                         Error);
    std::remove(img.c_str());
    std::remove(lab.c_str());
}

TEST_CASE("augmentation with gamma 0 is the identity") {
    Rng gen(41);
    Matrix imgs(3, 784);
    for (double& v : imgs.data) v = gen.uniform();
    Rng rng(1);
    const Matrix out = data::augment_noise_shift(imgs, 0.0, rng);
    for (std::size_t i = 0; i < imgs.data.size(); ++i) CHECK(out.data[i] == imgs.data[i]);
}

TEST_CASE("augmentation noise has the configured standard deviation") {
    Matrix imgs(50, 784);  // zero images isolate the noise
    Rng rng(2);
    // noise-only path: shift of a zero image is still zero
    const Matrix out = data::augment_noise_shift(imgs, 1.0, rng);
    double var = 0.0;
    for (double v : out.data) var += v * v;
    var /= double(out.data.size());
    CHECK(std::sqrt(var) == doctest::Approx(0.3).epsilon(0.03));
}

TEST_CASE("shifts preserve the pixel multiset away from borders") {
    // content confined to the center so a +-6 pixel shift cannot clip it
    Matrix imgs(1, 784);
    Rng gen(43);
    for (int r = 10; r < 18; ++r)
        for (int c = 10; c < 18; ++c) imgs(0, r * 28 + c) = gen.uniform();
    // shift-only: build a gamma=1 augmentation with the noise manually disabled
    // by checking the multiset of a pure shift
    Rng rng(3);
    const int dy = 4, dx = -5;
    Matrix shifted(1, 784);
    for (int r = 0; r < 28; ++r)
        for (int c = 0; c < 28; ++c) {
            const int sr = r - dy, sc = c - dx;
            shifted(0, r * 28 + c) =
                (sr >= 0 && sr < 28 && sc >= 0 && sc < 28) ? imgs(0, sr * 28 + sc) : 0.0;
        }
    std::vector<double> a(imgs.data), b(shifted.data);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    (void)rng;
}

TEST_CASE("generators are bitwise deterministic in their seed") {
    const auto a = data::gen_sparse_parity(100, 40, 3, 123);
    const auto b = data::gen_sparse_parity(100, 40, 3, 123);
    for (std::size_t i = 0; i < a.train.x.data.size(); ++i)
        CHECK(a.train.x.data[i] == b.train.x.data[i]);
    const auto c = data::gen_sparse_parity(100, 40, 3, 124);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.train.x.data.size(); ++i)
        if (a.train.x.data[i] != c.train.x.data[i]) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("ensure_mnist generates a synthetic corpus when real files are absent") {
    const std::string dir = "ensure_mnist_dir";
    std::filesystem::remove_all(dir);
    const auto paths = data::ensure_mnist(dir);
    CHECK(paths.synthetic);
    const auto ds = data::load_mnist_idx(paths.train_images, paths.train_labels, 256, 1);
    CHECK(ds.size() == 256);
    CHECK(ds.num_classes == 10);
    // calling again reuses the files
    const auto again = data::ensure_mnist(dir);
    CHECK(again.train_images == paths.train_images);
    std::filesystem::remove_all(dir);
}

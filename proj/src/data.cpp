#include "grokalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace grokalign::data {

using linalg::axpy;

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = std::size_t(rng.uniform_int(0, std::int64_t(i) - 1));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

LabeledDataset take_rows(const Matrix& x, const std::vector<int>& y,
                         const std::vector<std::size_t>& rows, int num_classes,
                         const std::string& provenance, std::uint64_t seed) {
    LabeledDataset ds;
    ds.x = Matrix(rows.size(), x.cols);
    ds.y.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), ds.x.row(i).begin());
        ds.y[i] = y[rows[i]];
    }
    ds.num_classes = num_classes;
    ds.provenance = provenance;
    ds.seed = seed;
    return ds;
}

}  // namespace

std::uint64_t row_hash(const Matrix& m, std::size_t row) {
    std::uint64_t h = 14695981039346656037ULL;
    const auto r = m.row(row);
    const auto* bytes = reinterpret_cast<const unsigned char*>(r.data());
    for (std::size_t i = 0; i < r.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

SplitDataset gen_xor_cluster(std::size_t n, std::size_t d, double epsilon, std::uint64_t seed) {
    if (d < 3) throw Error("bad-params: xor cluster needs d >= 3");
    Rng rng(derive_seed(seed, 0x101));
    const std::size_t total = 2 * n;
    Matrix x(total, d);
    std::vector<int> y(total);
    std::unordered_set<std::uint64_t> seen;
    for (std::size_t i = 0; i < total;) {
        auto row = x.row(i);
        const double x1 = rng.rademacher();
        const double x2 = rng.rademacher();
        row[0] = x1;
        row[1] = x2;
        for (std::size_t j = 2; j < d; ++j) row[j] = epsilon * rng.rademacher();
        if (!seen.insert(row_hash(x, i)).second) continue;  // redraw duplicates
        y[i] = x1 * x2 > 0.0 ? 1 : 0;
        ++i;
    }
    std::vector<std::size_t> train_rows(n), test_rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        train_rows[i] = i;
        test_rows[i] = n + i;
    }
    SplitDataset out;
    out.train = take_rows(x, y, train_rows, 2, "xor_cluster", seed);
    out.test = take_rows(x, y, test_rows, 2, "xor_cluster", seed);
    return out;
}

SplitDataset gen_sparse_parity(std::size_t n, std::size_t bits, std::size_t k, std::uint64_t seed,
                               bool plus_minus_one) {
    if (k > bits) throw Error("bad-params: parity needs k <= bits");
    if (2 * n > (std::size_t(1) << std::min<std::size_t>(bits, 62)))
        throw Error("bad-params: pool larger than the string space");
    Rng rng(derive_seed(seed, 0x102));
    const std::size_t total = 2 * n;
    Matrix x(total, bits);
    std::vector<int> y(total);
    std::unordered_set<std::uint64_t> seen;
    const double lo = plus_minus_one ? -1.0 : 0.0;
    for (std::size_t i = 0; i < total;) {
        auto row = x.row(i);
        int parity = 0;
        for (std::size_t j = 0; j < bits; ++j) {
            const int bit = int(rng.uniform_int(0, 1));
            row[j] = bit ? 1.0 : lo;
            if (j < k) parity ^= bit;
        }
        if (!seen.insert(row_hash(x, i)).second) continue;
        y[i] = parity;
        ++i;
    }
    std::vector<std::size_t> train_rows(n), test_rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        train_rows[i] = i;
        test_rows[i] = n + i;
    }
    SplitDataset out;
    out.train = take_rows(x, y, train_rows, 2, "sparse_parity", seed);
    out.test = take_rows(x, y, test_rows, 2, "sparse_parity", seed);
    return out;
}

SplitDataset gen_modadd(std::size_t p, double train_frac, std::uint64_t seed) {
    if (p < 2) throw Error("bad-params: modadd needs p >= 2");
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw Error("bad-params: train_frac must be in (0,1)");
    const std::size_t total = p * p;
    Matrix x(total, 2 * p);
    std::vector<int> y(total);
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) {
            const std::size_t i = a * p + b;
            x(i, a) = 1.0;
            x(i, p + b) = 1.0;
            y[i] = int((a + b) % p);
        }
    Rng rng(derive_seed(seed, 0x103));
    std::vector<std::size_t> idx = shuffled_indices(total, rng);
    const std::size_t n_train = std::size_t(std::llround(train_frac * double(total)));
    if (n_train == 0 || n_train == total) throw Error("bad-params: degenerate modadd split");
    std::vector<std::size_t> train_rows(idx.begin(), idx.begin() + n_train);
    std::vector<std::size_t> test_rows(idx.begin() + n_train, idx.end());
    SplitDataset out;
    out.train = take_rows(x, y, train_rows, int(p), "modadd", seed);
    out.test = take_rows(x, y, test_rows, int(p), "modadd", seed);
    return out;
}

namespace {

std::uint32_t read_be32(std::istream& is, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is)
        throw Error("idx-parse-error: " + path + " truncated at byte " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace

LabeledDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              std::size_t subset_n, std::uint64_t seed) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw Error("io-error: cannot open " + images_path);
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw Error("io-error: cannot open " + labels_path);

    const std::uint32_t img_magic = read_be32(imgs, images_path, 0);
    if (img_magic != 0x00000803)
        throw Error("idx-parse-error: " + images_path + " bad magic at byte 0");
    const std::uint32_t n_imgs = read_be32(imgs, images_path, 4);
    const std::uint32_t rows = read_be32(imgs, images_path, 8);
    const std::uint32_t cols = read_be32(imgs, images_path, 12);

    const std::uint32_t lab_magic = read_be32(labs, labels_path, 0);
    if (lab_magic != 0x00000801)
        throw Error("idx-parse-error: " + labels_path + " bad magic at byte 0");
    const std::uint32_t n_labs = read_be32(labs, labels_path, 4);
    if (n_imgs != n_labs) throw Error("idx-parse-error: image/label count mismatch");

    const std::size_t pix = std::size_t(rows) * cols;
    std::vector<unsigned char> img_buf(std::size_t(n_imgs) * pix);
    imgs.read(reinterpret_cast<char*>(img_buf.data()), std::streamsize(img_buf.size()));
    if (!imgs || std::size_t(imgs.gcount()) != img_buf.size())
        throw Error("idx-parse-error: " + images_path + " truncated at byte " +
                    std::to_string(16 + std::size_t(std::max<std::streamsize>(imgs.gcount(), 0))));
    std::vector<unsigned char> lab_buf(n_labs);
    labs.read(reinterpret_cast<char*>(lab_buf.data()), std::streamsize(lab_buf.size()));
    if (!labs || std::size_t(labs.gcount()) != lab_buf.size())
        throw Error("idx-parse-error: " + labels_path + " truncated at byte " +
                    std::to_string(8 + std::size_t(std::max<std::streamsize>(labs.gcount(), 0))));

    std::vector<std::size_t> chosen;
    if (subset_n == 0 || subset_n >= n_imgs) {
        chosen.resize(n_imgs);
        for (std::size_t i = 0; i < n_imgs; ++i) chosen[i] = i;
    } else {
        Rng rng(derive_seed(seed, 0x104));
        std::vector<std::size_t> idx = shuffled_indices(n_imgs, rng);
        chosen.assign(idx.begin(), idx.begin() + subset_n);
    }

    LabeledDataset ds;
    ds.x = Matrix(chosen.size(), pix);
    ds.y.resize(chosen.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        const unsigned char* src = img_buf.data() + chosen[i] * pix;
        auto dst = ds.x.row(i);
        for (std::size_t j = 0; j < pix; ++j) dst[j] = double(src[j]) / 255.0;
        ds.y[i] = int(lab_buf[chosen[i]]);
    }
    ds.num_classes = 10;
    ds.provenance = "mnist_idx:" + images_path;
    ds.seed = seed;
    return ds;
}

SplitDataset gen_gaussian_blobs(std::size_t n, std::size_t d, std::size_t num_classes,
                                double spread, std::uint64_t seed) {
    if (num_classes < 2) throw Error("bad-params: blobs need C >= 2");
    Rng rng(derive_seed(seed, 0x105));
    Matrix means(num_classes, d);
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto row = means.row(c);
        for (double& v : row) v = rng.normal();
        linalg::normalize(row);
        linalg::scale(spread, row);
    }
    Matrix x(n, d);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int c = int(rng.uniform_int(0, std::int64_t(num_classes) - 1));
        y[i] = c;
        auto row = x.row(i);
        const auto mu = means.row(c);
        for (std::size_t j = 0; j < d; ++j) row[j] = mu[j] + rng.normal();
    }
    const std::size_t n_train = std::size_t(std::llround(0.8 * double(n)));
    std::vector<std::size_t> train_rows(n_train), test_rows(n - n_train);
    for (std::size_t i = 0; i < n_train; ++i) train_rows[i] = i;
    for (std::size_t i = n_train; i < n; ++i) test_rows[i - n_train] = i;
    SplitDataset out;
    out.train = take_rows(x, y, train_rows, int(num_classes), "gaussian_blobs", seed);
    out.test = take_rows(x, y, test_rows, int(num_classes), "gaussian_blobs", seed);
    return out;
}

SplitDataset gen_synthetic_tabular(std::size_t n, std::size_t d, std::size_t num_classes,
                                   double anisotropy, std::uint64_t seed) {
    SplitDataset out = gen_gaussian_blobs(n, d, num_classes, 2.5, seed);
    Rng rng(derive_seed(seed, 0x106));
    Vector scale(d), offset(d);
    for (std::size_t j = 0; j < d; ++j) {
        scale[j] = std::exp(anisotropy * rng.uniform(-1.0, 1.0));
        offset[j] = anisotropy * rng.uniform(-2.0, 2.0);
    }
    for (Matrix* m : {&out.train.x, &out.test.x})
        for (std::size_t i = 0; i < m->rows; ++i) {
            auto row = m->row(i);
            for (std::size_t j = 0; j < d; ++j) row[j] = scale[j] * row[j] + offset[j];
        }
    out.train.provenance = "synthetic_tabular";
    out.test.provenance = "synthetic_tabular";
    return out;
}

LabeledDataset load_csv_tabular(const std::string& path, const std::string& label_col) {
    std::ifstream is(path);
    if (!is) throw Error("io-error: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw Error("csv-parse-error: " + path + " empty file");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::size_t label_idx = header.size();
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == label_col) label_idx = j;
    if (label_idx == header.size())
        throw Error("csv-parse-error: label column '" + label_col + "' not found");

    std::vector<std::vector<double>> rows;
    std::vector<double> raw_labels;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        std::size_t col = 0;
        double label = 0.0;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw Error("csv-parse-error: non-numeric cell at row " + std::to_string(line_no) +
                            " col " + std::to_string(col + 1));
            if (col == label_idx)
                label = v;
            else
                row.push_back(v);
            ++col;
        }
        if (col != header.size())
            throw Error("csv-parse-error: row " + std::to_string(line_no) + " has " +
                        std::to_string(col) + " cells, expected " + std::to_string(header.size()));
        rows.push_back(std::move(row));
        raw_labels.push_back(label);
    }
    if (rows.empty()) throw Error("csv-parse-error: no data rows in " + path);

    std::set<double> distinct(raw_labels.begin(), raw_labels.end());
    std::vector<double> classes(distinct.begin(), distinct.end());
    LabeledDataset ds;
    ds.x = Matrix(rows.size(), rows[0].size());
    ds.y.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(rows[i].begin(), rows[i].end(), ds.x.row(i).begin());
        const auto it = std::lower_bound(classes.begin(), classes.end(), raw_labels[i]);
        ds.y[i] = int(it - classes.begin());
    }
    ds.num_classes = int(classes.size());
    ds.provenance = "csv:" + path;
    return ds;
}

void write_csv_tabular(const LabeledDataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("io-error: cannot write " + path);
    for (std::size_t j = 0; j < ds.dim(); ++j) os << "f" << j << ",";
    os << "label\n";
    char buf[40];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto row = ds.x.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", row[j]);
            os << buf << ",";
        }
        os << ds.y[i] << "\n";
    }
}

void standardize(SplitDataset& split) {
    const std::size_t d = split.train.dim();
    const std::size_t n = split.train.size();
    if (n == 0) throw Error("empty-input: standardize");
    Standardization st;
    st.mean.assign(d, 0.0);
    st.scale.assign(d, 1.0);
    for (std::size_t i = 0; i < n; ++i) axpy(1.0, split.train.x.row(i), st.mean);
    linalg::scale(1.0 / double(n), st.mean);
    Vector var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = split.train.x.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - st.mean[j];
            var[j] += c * c;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        const double s = std::sqrt(var[j] / double(n));
        st.scale[j] = s > 1e-12 ? s : 1.0;
    }
    for (LabeledDataset* ds : {&split.train, &split.test}) {
        for (std::size_t i = 0; i < ds->size(); ++i) {
            auto row = ds->x.row(i);
            for (std::size_t j = 0; j < d; ++j) row[j] = (row[j] - st.mean[j]) / st.scale[j];
        }
        ds->standardization = st;
    }
}

Matrix augment_noise_shift(const Matrix& images, double gamma, Rng& rng) {
    if (images.cols != 28 * 28) throw Error("bad-shape: augment expects 28x28 images");
    if (gamma < 0.0 || gamma > 1.0) throw Error("bad-params: intensity in [0,1]");
    const int max_shift = int(std::llround(0.2 * gamma * 28.0));
    const double noise_std = 0.3 * gamma;
    Matrix out(images.rows, images.cols);
    for (std::size_t i = 0; i < images.rows; ++i) {
        const int dy = max_shift ? int(rng.uniform_int(-max_shift, max_shift)) : 0;
        const int dx = max_shift ? int(rng.uniform_int(-max_shift, max_shift)) : 0;
        const auto src = images.row(i);
        auto dst = out.row(i);
        for (int r = 0; r < 28; ++r)
            for (int c = 0; c < 28; ++c) {
                const int sr = r - dy, sc = c - dx;
                double v = 0.0;
                if (sr >= 0 && sr < 28 && sc >= 0 && sc < 28) v = src[sr * 28 + sc];
                dst[r * 28 + c] = v;
            }
        if (noise_std > 0.0)
            for (double& v : dst) v += noise_std * rng.normal();
    }
    return out;
}

std::string data_dir() {
    const char* env = std::getenv("GROKALIGN_DATA_DIR");
    if (env && *env) return env;
    return "data";
}

namespace {

void write_be32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

// seven-segment layout on a 28x28 canvas; segments as (r0,c0,r1,c1) strokes
struct Seg {
    double r0, c0, r1, c1;
};

const Seg kSegments[7] = {
    {5, 8, 5, 20},    // top
    {5, 8, 14, 8},    // top-left
    {5, 20, 14, 20},  // top-right
    {14, 8, 14, 20},  // middle
    {14, 8, 23, 8},   // bottom-left
    {14, 20, 23, 20}, // bottom-right
    {23, 8, 23, 20},  // bottom
};

const int kDigitSegments[10] = {
    0b1110111,  // 0: top tl tr bl br bottom
    0b0100100,  // 1: tr br
    0b1101011,  // 2
    0b1101101,  // 3
    0b0111100,  // 4
    0b1011101,  // 5
    0b1011111,  // 6
    0b1100100,  // 7
    0b1111111,  // 8
    0b1111101,  // 9
};

void render_digit(std::vector<double>& canvas, int digit, Rng& rng) {
    std::fill(canvas.begin(), canvas.end(), 0.0);
    const double angle = rng.uniform(-0.22, 0.22);
    const double sx = rng.uniform(0.82, 1.12);
    const double sy = rng.uniform(0.82, 1.12);
    const double shear = rng.uniform(-0.18, 0.18);
    const double tr = rng.uniform(-3.0, 3.0);
    const double tc = rng.uniform(-3.0, 3.0);
    const double thick = rng.uniform(1.0, 1.9);
    const double intensity = rng.uniform(0.65, 1.0);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const int mask = kDigitSegments[digit];

    auto transform = [&](double r, double c, double& tr_out, double& tc_out) {
        double rr = (r - 14.0) * sy;
        double cc = (c - 14.0) * sx + shear * rr;
        tr_out = ca * rr - sa * cc + 14.0 + tr;
        tc_out = sa * rr + ca * cc + 14.0 + tc;
    };

    for (int s = 0; s < 7; ++s) {
        if (!(mask & (1 << (6 - s)))) continue;
        const Seg& seg = kSegments[s];
        const double seg_gain = intensity * rng.uniform(0.8, 1.0);
        const int steps = 26;
        for (int t = 0; t <= steps; ++t) {
            const double f = double(t) / steps;
            double r, c;
            transform(seg.r0 + f * (seg.r1 - seg.r0), seg.c0 + f * (seg.c1 - seg.c0), r, c);
            const int r_lo = std::max(0, int(std::floor(r - thick)));
            const int r_hi = std::min(27, int(std::ceil(r + thick)));
            const int c_lo = std::max(0, int(std::floor(c - thick)));
            const int c_hi = std::min(27, int(std::ceil(c + thick)));
            for (int rr = r_lo; rr <= r_hi; ++rr)
                for (int cc = c_lo; cc <= c_hi; ++cc) {
                    const double dist2 = (rr - r) * (rr - r) + (cc - c) * (cc - c);
                    const double val = seg_gain * std::exp(-dist2 / (0.75 * thick * thick));
                    canvas[rr * 28 + cc] = std::max(canvas[rr * 28 + cc], val);
                }
        }
    }
    for (double& v : canvas) {
        v += 0.12 * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
    }
}

}  // namespace

void write_synthetic_digit_corpus(const std::string& images_path, const std::string& labels_path,
                                  std::size_t n, std::uint64_t seed) {
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw Error("io-error: cannot write " + images_path);
    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw Error("io-error: cannot write " + labels_path);
    write_be32(imgs, 0x00000803);
    write_be32(imgs, std::uint32_t(n));
    write_be32(imgs, 28);
    write_be32(imgs, 28);
    write_be32(labs, 0x00000801);
    write_be32(labs, std::uint32_t(n));

    Rng rng(derive_seed(seed, 0x5e6));
    std::vector<double> canvas(28 * 28);
    std::vector<unsigned char> pixels(28 * 28);
    for (std::size_t i = 0; i < n; ++i) {
        const int digit = int(rng.uniform_int(0, 9));
        render_digit(canvas, digit, rng);
        for (std::size_t j = 0; j < canvas.size(); ++j)
            pixels[j] = static_cast<unsigned char>(std::lround(canvas[j] * 255.0));
        imgs.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
        const unsigned char lab = static_cast<unsigned char>(digit);
        labs.write(reinterpret_cast<const char*>(&lab), 1);
    }
    if (!imgs || !labs) throw Error("io-error: short write of synthetic corpus");
}

MnistPaths ensure_mnist(const std::string& dir) {
    namespace fs = std::filesystem;
    MnistPaths paths;
    const std::string real_ti = dir + "/train-images-idx3-ubyte";
    const std::string real_tl = dir + "/train-labels-idx1-ubyte";
    const std::string real_ei = dir + "/t10k-images-idx3-ubyte";
    const std::string real_el = dir + "/t10k-labels-idx1-ubyte";
    if (fs::exists(real_ti) && fs::exists(real_tl) && fs::exists(real_ei) && fs::exists(real_el)) {
        paths = {real_ti, real_tl, real_ei, real_el, false};
        return paths;
    }
    fs::create_directories(dir);
    paths.train_images = dir + "/synth-train-images-idx3-ubyte";
    paths.train_labels = dir + "/synth-train-labels-idx1-ubyte";
    paths.test_images = dir + "/synth-t10k-images-idx3-ubyte";
    paths.test_labels = dir + "/synth-t10k-labels-idx1-ubyte";
    paths.synthetic = true;
    if (!fs::exists(paths.train_images) || !fs::exists(paths.train_labels))
        write_synthetic_digit_corpus(paths.train_images, paths.train_labels, 10000, 20240001ULL);
    if (!fs::exists(paths.test_images) || !fs::exists(paths.test_labels))
        write_synthetic_digit_corpus(paths.test_images, paths.test_labels, 2048, 20240002ULL);
    return paths;
}

}  // namespace grokalign::data

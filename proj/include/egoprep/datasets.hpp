#pragma once

// Data ingestion and synthesis: the UCI optdigits text format, seeded
// train/validation/test splits and synthetic problems with controlled
// singular-value decay.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "egoprep/linalg.hpp"
#include "egoprep/objectives/convex.hpp"
#include "egoprep/rng.hpp"

namespace egoprep {

struct LabeledDataset {
    DenseMatrix features; // n × d_in, one row per instance
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const noexcept { return labels.size(); }
};

inline constexpr std::size_t kOptdigitsFeatures = 64;
inline constexpr int kOptdigitsMaxPixel = 16;
inline constexpr int kOptdigitsClasses = 10;

/// Parse optdigits text: one instance per line, 64 pixel counts in [0, 16]
/// followed by a label in [0, 9], comma-separated, no header. Blank lines
/// are ignored.
inline LabeledDataset parse_optdigits(std::istream& in) {
    std::vector<double> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
        if (line.empty()) continue;
        std::vector<long> values;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = line.find(',', pos);
            const std::string field = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            if (field.empty() || field.find_first_not_of("0123456789-+ ") != std::string::npos)
                fail(Errc::ParseError, "optdigits line " + std::to_string(line_no) + ": bad field '" + field + "'");
            std::size_t used = 0;
            long v = 0;
            try {
                v = std::stol(field, &used);
            } catch (const std::exception&) {
                fail(Errc::ParseError, "optdigits line " + std::to_string(line_no) + ": bad field '" + field + "'");
            }
            if (field.find_first_not_of(' ', used) != std::string::npos)
                fail(Errc::ParseError, "optdigits line " + std::to_string(line_no) + ": bad field '" + field + "'");
            values.push_back(v);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (values.size() != kOptdigitsFeatures + 1)
            fail(Errc::ParseError, "optdigits line " + std::to_string(line_no) + ": expected 65 fields, got " +
                                       std::to_string(values.size()));
        for (std::size_t j = 0; j < kOptdigitsFeatures; ++j) {
            if (values[j] < 0 || values[j] > kOptdigitsMaxPixel)
                fail(Errc::RangeError, "optdigits line " + std::to_string(line_no) + ": pixel out of range");
            rows.push_back(static_cast<double>(values[j]));
        }
        const long label = values.back();
        if (label < 0 || label >= kOptdigitsClasses)
            fail(Errc::RangeError, "optdigits line " + std::to_string(line_no) + ": label out of range");
        labels.push_back(static_cast<int>(label));
    }
    require(!labels.empty(), Errc::ParseError, "optdigits: no instances (line " + std::to_string(line_no) + ")");

    const std::size_t n = labels.size();
    DenseMatrix features(n, kOptdigitsFeatures);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < kOptdigitsFeatures; ++j) features(i, j) = rows[i * kOptdigitsFeatures + j];
    return {std::move(features), std::move(labels), kOptdigitsClasses};
}

inline LabeledDataset load_optdigits(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), Errc::IoError, "cannot open " + path);
    return parse_optdigits(in);
}

inline void write_optdigits(std::ostream& out, const LabeledDataset& data) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < data.features.cols(); ++j)
            out << static_cast<long>(data.features(i, j)) << ',';
        out << data.labels[i] << '\n';
    }
}

inline void save_optdigits(const std::string& path, const LabeledDataset& data) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), Errc::IoError, "cannot write " + path);
    write_optdigits(out, data);
    require(static_cast<bool>(out), Errc::IoError, "write failed: " + path);
}

/// Row-wise concatenation (e.g. the official train and test files).
inline LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
    require(a.features.cols() == b.features.cols() && a.class_count == b.class_count, Errc::DimMismatch,
            "concat: incompatible datasets");
    const std::size_t n = a.size() + b.size();
    DenseMatrix f(n, a.features.cols());
    for (std::size_t j = 0; j < f.cols(); ++j) {
        for (std::size_t i = 0; i < a.size(); ++i) f(i, j) = a.features(i, j);
        for (std::size_t i = 0; i < b.size(); ++i) f(a.size() + i, j) = b.features(i, j);
    }
    std::vector<int> labels = a.labels;
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    return {std::move(f), std::move(labels), a.class_count};
}

inline LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> rows) {
    DenseMatrix f(rows.size(), data.features.cols());
    std::vector<int> labels(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        require(rows[k] < data.size(), Errc::DimMismatch, "subset: row index out of range");
        for (std::size_t j = 0; j < f.cols(); ++j) f(k, j) = data.features(rows[k], j);
        labels[k] = data.labels[rows[k]];
    }
    return {std::move(f), std::move(labels), data.class_count};
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;
    std::uint64_t seed = 0;
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// Disjoint index sets from one seeded shuffle of {0, …, n−1}.
inline SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
    require(spec.train + spec.validation + spec.test <= n, Errc::Infeasible,
            "split sizes " + std::to_string(spec.train) + "+" + std::to_string(spec.validation) + "+" +
                std::to_string(spec.test) + " exceed n=" + std::to_string(n));
    std::vector<std::size_t> perm = all_indices(n);
    Rng rng(spec.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    SplitIndices out;
    auto it = perm.begin();
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(spec.train));
    it += static_cast<std::ptrdiff_t>(spec.train);
    out.validation.assign(it, it + static_cast<std::ptrdiff_t>(spec.validation));
    it += static_cast<std::ptrdiff_t>(spec.validation);
    out.test.assign(it, it + static_cast<std::ptrdiff_t>(spec.test));
    return out;
}

struct DatasetSplit {
    LabeledDataset train;
    LabeledDataset validation;
    LabeledDataset test;
};

inline DatasetSplit split(const LabeledDataset& data, const SplitSpec& spec) {
    const SplitIndices idx = split_indices(data.size(), spec);
    return {subset(data, idx.train), subset(data, idx.validation), subset(data, idx.test)};
}

/// The optdigits partition sizes (train, validation, test).
inline SplitSpec optdigits_split(std::uint64_t seed) { return {3823, 598, 1199, seed}; }

// ---------------------------------------------------------------------------
// Synthetic problems

/// σ_k = k^{−α}, k = 1..count.
inline Vector power_law_spectrum(std::size_t count, double alpha) {
    Vector s(count);
    for (std::size_t k = 0; k < count; ++k) s[k] = std::pow(static_cast<double>(k + 1), -alpha);
    return s;
}

inline Vector standard_gaussian(std::size_t d, std::uint64_t seed) {
    Vector v(d);
    Rng rng(seed);
    detail::fill_gaussian(rng, v);
    return v;
}

/// Data matrix with σ_k(A) = k^{−α} and ground truth θ* ~ N(0, I).
struct RegressionInstance {
    DenseMatrix a; // n×d
    Vector theta_star;
};

inline RegressionInstance gen_regression(std::size_t n, std::size_t d, double alpha, std::uint64_t seed) {
    require(n >= 1 && d >= 1, Errc::DimMismatch, "gen_regression: n and d must be >= 1");
    require(alpha >= 0.0, Errc::BadSpectrum, "gen_regression: alpha must be >= 0");
    const Vector sigma = power_law_spectrum(std::min(n, d), alpha);
    return {matrix_with_spectrum(n, d, sigma, derive_seed(seed, {1})), standard_gaussian(d, derive_seed(seed, {2}))};
}

inline LsqProblem make_lsq(const RegressionInstance& r) {
    return {r.a, matvec(r.a, r.theta_star), r.theta_star};
}

inline LogSumExpProblem make_lse(const RegressionInstance& r) {
    return {r.a, matvec(r.a, r.theta_star), r.theta_star};
}

/// Labels y_i ~ Bernoulli(π_i) with π_i = e^{−z_i}/(1 + e^{−z_i}), z = Aθ*.
inline LogisticProblem make_logistic(const RegressionInstance& r, std::uint64_t seed) {
    const Vector z = matvec(r.a, r.theta_star);
    Rng rng(derive_seed(seed, {3}));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vector labels(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double pi = detail::sigmoid(-z[i]);
        labels[i] = unif(rng) < pi ? 1.0 : 0.0;
    }
    return {r.a, std::move(labels), r.theta_star};
}

/// Inputs with σ_k(A) = k^{−2} and targets Y = M*A for Gaussian M*.
struct LinearNetData {
    DenseMatrix a;      // 10×n
    DenseMatrix y;      // 10×n
    DenseMatrix m_star; // 10×10
};

inline constexpr std::size_t kLinearNetWidth = 10;

inline LinearNetData gen_linear_net_data(std::size_t n, std::uint64_t seed) {
    require(n >= 1, Errc::DimMismatch, "gen_linear_net_data: n must be >= 1");
    const Vector sigma = power_law_spectrum(std::min(kLinearNetWidth, n), 2.0);
    DenseMatrix a = matrix_with_spectrum(kLinearNetWidth, n, sigma, derive_seed(seed, {1}));
    Vector m(kLinearNetWidth * kLinearNetWidth);
    Rng rng(derive_seed(seed, {2}));
    detail::fill_gaussian(rng, m);
    DenseMatrix m_star(kLinearNetWidth, kLinearNetWidth, std::move(m));
    DenseMatrix y = matmul(m_star, a);
    return {std::move(a), std::move(y), std::move(m_star)};
}

/// Train/validation/test sizes in the 10:4:6 proportion of the 20,000-sample
/// linear-network protocol.
inline SplitSpec linear_net_split(std::size_t n, std::uint64_t seed) {
    const std::size_t train = n / 2;
    const std::size_t validation = n / 5;
    return {train, validation, n - train - validation, seed};
}

/// Synthetic classification: features with σ_k = √n·k^{−α} (rows of unit
/// scale on average) labelled by the arg-max of a Gaussian linear teacher.
inline LabeledDataset gen_classification(std::size_t n, std::size_t d_in, int classes, double alpha,
                                         std::uint64_t seed) {
    require(n >= 1 && d_in >= 1 && classes >= 2, Errc::DimMismatch, "gen_classification: bad sizes");
    Vector sigma = power_law_spectrum(std::min(n, d_in), alpha);
    for (double& s : sigma) s *= std::sqrt(static_cast<double>(n));
    DenseMatrix x = matrix_with_spectrum(n, d_in, sigma, derive_seed(seed, {1}));
    Vector t(static_cast<std::size_t>(classes) * d_in);
    Rng rng(derive_seed(seed, {2}));
    detail::fill_gaussian(rng, t);
    const DenseMatrix teacher(static_cast<std::size_t>(classes), d_in, std::move(t));
    const DenseMatrix scores = matmul_nt(x, teacher); // n × classes
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (scores(i, static_cast<std::size_t>(c)) > scores(i, static_cast<std::size_t>(best))) best = c;
        labels[i] = best;
    }
    return {std::move(x), std::move(labels), classes};
}

} // namespace egoprep

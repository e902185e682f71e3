#pragma once

// Convex objectives over a data matrix A (n×d, rows a_i): linear least
// squares, log-sum-exp of squared residuals, logistic regression; plus a
// dense quadratic used for smoothness certificates and tests.
//
// Sum-form losses treat a minibatch B as an unbiased estimate of the full
// sum, (n/|B|)·Σ_{i∈B} ℓ_i, so the full index set reproduces the exact
// oracle. Log-sum-exp uses log Σ_{i∈B} exp(r_i²) + log(n/|B|).

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "egoprep/linalg.hpp"
#include "egoprep/objective.hpp"

namespace egoprep {

struct LsqProblem {
    DenseMatrix a;     // n×d
    Vector y;          // n, y = A θ*
    Vector theta_star; // d
};

struct LogSumExpProblem {
    DenseMatrix a;     // n×d
    Vector y;          // y_i = <a_i, θ*>
    Vector theta_star;
};

struct LogisticProblem {
    DenseMatrix a;      // n×d
    Vector labels;      // entries in {0, 1}
    Vector theta_star;
};

namespace detail {

inline double row_dot(const DenseMatrix& a, std::size_t i, std::span<const double> theta) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * theta[j];
    return s;
}

// g += w * a_i
inline void add_row(const DenseMatrix& a, std::size_t i, double w, std::span<double> g) {
    for (std::size_t j = 0; j < a.cols(); ++j) g[j] += w * a(i, j);
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Least squares: f(θ) = ½‖Aθ − y‖²

inline ValueGrad lsq_batch_value_grad(const LsqProblem& p, std::span<const double> theta,
                                      std::span<const std::size_t> batch) {
    check_dim(theta, p.a.cols(), "least squares");
    check_batch(batch, p.a.rows(), "least squares");
    const double scale = static_cast<double>(p.a.rows()) / static_cast<double>(batch.size());
    ValueGrad out{0.0, Vector(p.a.cols(), 0.0)};
    for (std::size_t i : batch) {
        const double r = detail::row_dot(p.a, i, theta) - p.y[i];
        out.value += 0.5 * r * r;
        detail::add_row(p.a, i, scale * r, out.gradient);
    }
    out.value *= scale;
    return out;
}

/// Exact value ½‖Aθ−y‖² and gradient Aᵀ(Aθ−y).
inline ValueGrad lsq_value_grad(const LsqProblem& p, std::span<const double> theta) {
    check_dim(theta, p.a.cols(), "least squares");
    Vector r = matvec(p.a, theta);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= p.y[i];
    return {0.5 * dot(r, r), matvec_t(p.a, r)};
}

class LeastSquares final : public Objective {
public:
    explicit LeastSquares(LsqProblem p) : p_(std::move(p)) {
        require(p_.y.size() == p_.a.rows(), Errc::DimMismatch, "least squares: |y| != rows(A)");
    }
    std::size_t dim() const override { return p_.a.cols(); }
    std::size_t sample_count() const override { return p_.a.rows(); }
    ValueGrad value_grad(std::span<const double> theta) const override { return lsq_value_grad(p_, theta); }
    ValueGrad batch_value_grad(std::span<const double> theta, std::span<const std::size_t> batch) const override {
        return lsq_batch_value_grad(p_, theta, batch);
    }
    const LsqProblem& problem() const noexcept { return p_; }

private:
    LsqProblem p_;
};

// ---------------------------------------------------------------------------
// Log-sum-exp: f(θ) = log Σ_i exp((<a_i, θ> − y_i)²)

inline ValueGrad lse_batch_value_grad(const LogSumExpProblem& p, std::span<const double> theta,
                                      std::span<const std::size_t> batch) {
    check_dim(theta, p.a.cols(), "log-sum-exp");
    check_batch(batch, p.a.rows(), "log-sum-exp");
    std::vector<double> r(batch.size());
    double smax = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < batch.size(); ++k) {
        r[k] = detail::row_dot(p.a, batch[k], theta) - p.y[batch[k]];
        smax = std::max(smax, r[k] * r[k]);
    }
    double z = 0.0;
    std::vector<double> w(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        w[k] = std::exp(r[k] * r[k] - smax);
        z += w[k];
    }
    ValueGrad out{smax + std::log(z), Vector(p.a.cols(), 0.0)};
    if (batch.size() != p.a.rows())
        out.value += std::log(static_cast<double>(p.a.rows()) / static_cast<double>(batch.size()));
    for (std::size_t k = 0; k < batch.size(); ++k) detail::add_row(p.a, batch[k], 2.0 * r[k] * w[k] / z, out.gradient);
    return out;
}

/// Value with max-subtraction; gradient Σ w_i·2r_i·a_i, w = softmax(r²).
inline ValueGrad lse_value_grad(const LogSumExpProblem& p, std::span<const double> theta) {
    check_dim(theta, p.a.cols(), "log-sum-exp");
    Vector r = matvec(p.a, theta);
    double smax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] -= p.y[i];
        smax = std::max(smax, r[i] * r[i]);
    }
    Vector coef(r.size());
    double z = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        coef[i] = std::exp(r[i] * r[i] - smax);
        z += coef[i];
    }
    for (std::size_t i = 0; i < r.size(); ++i) coef[i] = 2.0 * r[i] * coef[i] / z;
    return {smax + std::log(z), matvec_t(p.a, coef)};
}

class LogSumExp final : public Objective {
public:
    explicit LogSumExp(LogSumExpProblem p) : p_(std::move(p)) {
        require(p_.y.size() == p_.a.rows(), Errc::DimMismatch, "log-sum-exp: |y| != rows(A)");
        require(p_.a.rows() >= 1, Errc::DimMismatch, "log-sum-exp: needs at least one row");
    }
    std::size_t dim() const override { return p_.a.cols(); }
    std::size_t sample_count() const override { return p_.a.rows(); }
    ValueGrad value_grad(std::span<const double> theta) const override { return lse_value_grad(p_, theta); }
    ValueGrad batch_value_grad(std::span<const double> theta, std::span<const std::size_t> batch) const override {
        return lse_batch_value_grad(p_, theta, batch);
    }
    const LogSumExpProblem& problem() const noexcept { return p_; }

private:
    LogSumExpProblem p_;
};

// ---------------------------------------------------------------------------
// Logistic regression:
//   f(θ) = Σ_i −y_i log σ(z_i) − (1 − y_i) log(1 − σ(z_i)),  z_i = <a_i, θ>,
// σ(z) = 1/(1 + e^{−z}). Both log terms are evaluated as softplus.

inline ValueGrad logistic_batch_value_grad(const LogisticProblem& p, std::span<const double> theta,
                                           std::span<const std::size_t> batch) {
    check_dim(theta, p.a.cols(), "logistic");
    check_batch(batch, p.a.rows(), "logistic");
    const double scale = static_cast<double>(p.a.rows()) / static_cast<double>(batch.size());
    ValueGrad out{0.0, Vector(p.a.cols(), 0.0)};
    for (std::size_t i : batch) {
        const double z = detail::row_dot(p.a, i, theta);
        const double y = p.labels[i];
        out.value += y * detail::softplus(-z) + (1.0 - y) * detail::softplus(z);
        detail::add_row(p.a, i, scale * (detail::sigmoid(z) - y), out.gradient);
    }
    out.value *= scale;
    return out;
}

inline ValueGrad logistic_value_grad(const LogisticProblem& p, std::span<const double> theta) {
    check_dim(theta, p.a.cols(), "logistic");
    const Vector z = matvec(p.a, theta);
    double value = 0.0;
    Vector coef(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double y = p.labels[i];
        value += y * detail::softplus(-z[i]) + (1.0 - y) * detail::softplus(z[i]);
        coef[i] = detail::sigmoid(z[i]) - y;
    }
    return {value, matvec_t(p.a, coef)};
}

class Logistic final : public Objective {
public:
    explicit Logistic(LogisticProblem p) : p_(std::move(p)) {
        require(p_.labels.size() == p_.a.rows(), Errc::DimMismatch, "logistic: |labels| != rows(A)");
        for (double y : p_.labels) require(y == 0.0 || y == 1.0, Errc::RangeError, "logistic: labels must be 0/1");
    }
    std::size_t dim() const override { return p_.a.cols(); }
    std::size_t sample_count() const override { return p_.a.rows(); }
    ValueGrad value_grad(std::span<const double> theta) const override { return logistic_value_grad(p_, theta); }
    ValueGrad batch_value_grad(std::span<const double> theta, std::span<const std::size_t> batch) const override {
        return logistic_batch_value_grad(p_, theta, batch);
    }
    const LogisticProblem& problem() const noexcept { return p_; }

private:
    LogisticProblem p_;
};

// ---------------------------------------------------------------------------

/// f(θ) = ½ θᵀHθ + <c, θ>, H symmetric. With H = 0 the gradient is the
/// constant c.
class Quadratic final : public Objective {
public:
    Quadratic(DenseMatrix h, Vector c) : h_(std::move(h)), c_(std::move(c)) {
        require(h_.is_square() && h_.rows() == c_.size(), Errc::DimMismatch, "quadratic: shape mismatch");
    }
    std::size_t dim() const override { return c_.size(); }
    ValueGrad value_grad(std::span<const double> theta) const override {
        check_dim(theta, dim(), "quadratic");
        Vector g = matvec(h_, theta);
        const double value = 0.5 * dot(theta, g) + dot(c_, theta);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c_[i];
        return {value, std::move(g)};
    }
    const DenseMatrix& hessian() const noexcept { return h_; }

private:
    DenseMatrix h_;
    Vector c_;
};

/// Coordinate-wise smoothness certificate for a constant Hessian h:
/// L_i = Σ_j |h_ij| (Gershgorin), so diag(L) ± h are PSD.
struct SmoothnessConstants {
    Vector constants;
    double sum = 0.0;
};

inline SmoothnessConstants quadratic_smoothness_sum(const DenseMatrix& h) {
    require(h.is_square(), Errc::NotSymmetric, "quadratic_smoothness_sum: not square");
    require(asymmetry(h) <= kSymmetryTol, Errc::NotSymmetric, "quadratic_smoothness_sum: not symmetric");
    SmoothnessConstants out{Vector(h.rows(), 0.0), 0.0};
    for (std::size_t j = 0; j < h.cols(); ++j)
        for (std::size_t i = 0; i < h.rows(); ++i) out.constants[i] += std::abs(h(i, j));
    for (double l : out.constants) out.sum += l;
    return out;
}

} // namespace egoprep

#pragma once

// Spectral and geometric measurements of an EGOP: stable rank, eigenvector
// density, normalized decay curves, the closed-form least-squares EGOP and a
// coordinate-smoothness ratio for quadratics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egoprep/egop.hpp"
#include "egoprep/error.hpp"
#include "egoprep/linalg.hpp"
#include "egoprep/objectives/convex.hpp"

namespace egoprep {

namespace detail {

// Eigenvalues of a PSD estimate may come back as tiny negatives; anything
// above −1e−10·λ_max is rounding and is clamped to zero.
inline Vector clamp_spectrum(std::span<const double> eigenvalues, const char* who) {
    require(!eigenvalues.empty(), Errc::ZeroSpectrum, std::string(who) + ": empty spectrum");
    require(all_finite(eigenvalues), Errc::NonFinite, std::string(who) + ": non-finite eigenvalue");
    const double top = *std::max_element(eigenvalues.begin(), eigenvalues.end());
    require(top > 0.0, Errc::ZeroSpectrum, std::string(who) + ": largest eigenvalue must be > 0");
    Vector out(eigenvalues.begin(), eigenvalues.end());
    for (double& x : out) {
        require(x >= -1e-10 * top, Errc::BadSpectrum, std::string(who) + ": negative eigenvalue");
        x = std::max(x, 0.0);
    }
    return out;
}

} // namespace detail

/// sr = Σ√λ_i / √λ_max.
inline double stable_rank(std::span<const double> eigenvalues) {
    const Vector lam = detail::clamp_spectrum(eigenvalues, "stable_rank");
    const double top = *std::max_element(lam.begin(), lam.end());
    double s = 0.0;
    for (double x : lam) s += std::sqrt(x);
    return s / std::sqrt(top);
}

/// β = ‖v‖₁²/d for a unit vector v.
inline double eigvec_density(std::span<const double> v) {
    require(!v.empty(), Errc::NotUnit, "eigvec_density: empty vector");
    const double n2 = norm2(v);
    require(std::abs(n2 - 1.0) <= 1e-8, Errc::NotUnit, "eigvec_density: ‖v‖₂ = " + std::to_string(n2));
    const double n1 = norm1(v);
    return n1 * n1 / static_cast<double>(v.size());
}

/// EGOP of ½‖Aθ − y‖² under ρ = N(0, I): (AᵀA)² + (Aᵀy)(Aᵀy)ᵀ.
inline DenseMatrix analytic_lsq_egop(const LsqProblem& p) {
    const DenseMatrix h = matmul_tn(p.a, p.a);
    DenseMatrix e = matmul(h, h);
    const Vector b = matvec_t(p.a, p.y);
    for (std::size_t j = 0; j < e.cols(); ++j)
        for (std::size_t i = 0; i < e.rows(); ++i) e(i, j) += b[i] * b[j];
    return e;
}

struct SmoothnessRatio {
    double l_f = 0.0;       // Σ_ij |H_ij|,       H = AᵀA
    double l_f_tilde = 0.0; // Σ_ij |(VᵀHV)_ij|
    double ratio = 0.0;     // l_f_tilde / l_f
};

/// Row-absolute-sum smoothness certificates of a least-squares objective
/// before and after the change of basis V. These are valid upper bounds, not
/// minimal constants, so the ratio indicates a trend.
inline SmoothnessRatio smoothness_ratio_quadratic(const LsqProblem& p, const DenseMatrix& basis) {
    check_orthonormal_basis(basis, p.a.cols(), "smoothness_ratio_quadratic");
    const DenseMatrix h = matmul_tn(p.a, p.a);
    const DenseMatrix ht = matmul_tn(basis, matmul(h, basis));
    SmoothnessRatio r;
    r.l_f = quadratic_smoothness_sum(h).sum;
    // VᵀHV is symmetric up to rounding; the certificate needs exact symmetry.
    DenseMatrix sym = ht;
    for (std::size_t j = 0; j < sym.cols(); ++j)
        for (std::size_t i = j + 1; i < sym.rows(); ++i) sym(i, j) = sym(j, i) = 0.5 * (ht(i, j) + ht(j, i));
    r.l_f_tilde = quadratic_smoothness_sum(sym).sum;
    require(r.l_f > 0.0, Errc::ZeroSpectrum, "smoothness_ratio_quadratic: H = 0");
    r.ratio = r.l_f_tilde / r.l_f;
    return r;
}

inline constexpr std::size_t kMaxReportedDensities = 100;

struct SpectrumReport {
    std::size_t d = 0;
    std::size_t sample_count = 0; // 0 when the spectrum is analytic
    Vector normalized;            // λ_k/λ₁, descending
    double stable_rank = 0.0;
    Vector densities;             // β_k = ‖v_k‖₁²/d for k ≤ min(d, 100)
    double decay_alpha_fit = 0.0; // −slope of log(λ_k/λ₁) against log k

    double beta1() const { return densities.empty() ? 0.0 : densities.front(); }
    // Two reference thresholds for β₁: 1/d and 1/3 + 1/d.
    double inverse_dim() const { return d == 0 ? 0.0 : 1.0 / static_cast<double>(d); }
    double beta1_minus_third() const { return beta1() - 1.0 / 3.0; }
};

/// Least-squares slope of log r_k on log k over entries with r_k > floor,
/// negated. Returns 0 when fewer than two points qualify.
inline double fit_decay_exponent(std::span<const double> normalized, double floor = 1e-12) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t m = 0;
    for (std::size_t k = 0; k < normalized.size(); ++k) {
        if (!(normalized[k] > floor)) continue;
        const double x = std::log(static_cast<double>(k + 1));
        const double y = std::log(normalized[k]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++m;
    }
    if (m < 2) return 0.0;
    const double mm = static_cast<double>(m);
    const double den = mm * sxx - sx * sx;
    if (den <= 0.0) return 0.0;
    return -(mm * sxy - sx * sy) / den;
}

inline SpectrumReport decay_curve(std::span<const double> eigenvalues, const DenseMatrix* basis,
                                  std::size_t sample_count = 0) {
    const Vector lam = detail::clamp_spectrum(eigenvalues, "decay_curve");
    SpectrumReport r;
    r.d = lam.size();
    r.sample_count = sample_count;
    require(std::is_sorted(lam.rbegin(), lam.rend()), Errc::BadSpectrum, "decay_curve: eigenvalues must be descending");
    const double top = lam.front();
    r.normalized.resize(lam.size());
    for (std::size_t k = 0; k < lam.size(); ++k) r.normalized[k] = lam[k] / top;
    r.stable_rank = stable_rank(lam);
    if (basis != nullptr) {
        require(basis->rows() == r.d && basis->cols() == r.d, Errc::DimMismatch, "decay_curve: basis shape");
        const std::size_t kmax = std::min(r.d, kMaxReportedDensities);
        for (std::size_t k = 0; k < kmax; ++k) r.densities.push_back(eigvec_density(basis->col(k)));
    }
    r.decay_alpha_fit = fit_decay_exponent(r.normalized);
    return r;
}

inline SpectrumReport decay_curve(const EgopEstimate& e) {
    return decay_curve(e.eigenvalues, &e.basis, e.sample_count);
}

} // namespace egoprep

#pragma once

// Over-parameterized matrix factorization with a linear measurement map:
//   f(L, R) = ‖𝒜(LRᵀ) − b‖²,  𝒜(X)_i = <A_i, X>,
// with θ = (vec(L), vec(R)), L ∈ R^{d₁×k}, R ∈ R^{d₂×k}.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "egoprep/linalg.hpp"
#include "egoprep/objective.hpp"

namespace egoprep {

struct MatFacProblem {
    std::vector<DenseMatrix> measurements; // A_1..A_m, each d₁×d₂
    Vector b;                              // m
    std::size_t d1 = 0;
    std::size_t d2 = 0;
    std::size_t rank = 0;                  // k

    std::size_t dim() const noexcept { return (d1 + d2) * rank; }
};

namespace detail {

struct Factors {
    DenseMatrix left;  // d₁×k
    DenseMatrix right; // d₂×k
};

inline Factors unpack_factors(const MatFacProblem& p, std::span<const double> theta) {
    const std::size_t nl = p.d1 * p.rank;
    return {DenseMatrix(p.d1, p.rank, std::vector<double>(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(nl))),
            DenseMatrix(p.d2, p.rank, std::vector<double>(theta.begin() + static_cast<std::ptrdiff_t>(nl), theta.end()))};
}

inline Vector measure(const MatFacProblem& p, const DenseMatrix& x) {
    Vector out(p.measurements.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = dot(p.measurements[i].data(), x.data());
    return out;
}

inline void validate(const MatFacProblem& p) {
    require(!p.measurements.empty(), Errc::DimMismatch, "matfac: needs at least one measurement");
    require(p.b.size() == p.measurements.size(), Errc::DimMismatch, "matfac: |b| != m");
    for (const auto& a : p.measurements)
        require(a.rows() == p.d1 && a.cols() == p.d2, Errc::DimMismatch, "matfac: measurement shape mismatch");
}

} // namespace detail

inline ValueGrad matfac_value_grad(const MatFacProblem& p, std::span<const double> theta) {
    check_dim(theta, p.dim(), "matfac");
    const auto [l, r] = detail::unpack_factors(p, theta);
    Vector res = detail::measure(p, matmul_nt(l, r));
    for (std::size_t i = 0; i < res.size(); ++i) res[i] -= p.b[i];

    // ∇_L = 2 Σ r_i A_i R,  ∇_R = 2 Σ r_i A_iᵀ L
    DenseMatrix s(p.d1, p.d2);
    for (std::size_t i = 0; i < res.size(); ++i) axpy(2.0 * res[i], p.measurements[i].data(), s.data());
    const DenseMatrix gl = matmul(s, r);
    const DenseMatrix gr = matmul_tn(s, l);
    ValueGrad out{dot(res, res), Vector()};
    out.gradient.reserve(p.dim());
    out.gradient.insert(out.gradient.end(), gl.data().begin(), gl.data().end());
    out.gradient.insert(out.gradient.end(), gr.data().begin(), gr.data().end());
    return out;
}

/// Hessian quadratic form along v = (U, V):
///   2‖𝒜(URᵀ + LVᵀ)‖² + 4<𝒜(LRᵀ) − b, 𝒜(UVᵀ)>.
inline double matfac_hessian_quadratic(const MatFacProblem& p, std::span<const double> theta,
                                       std::span<const double> v) {
    detail::validate(p);
    check_dim(theta, p.dim(), "matfac_hessian_quadratic (theta)");
    check_dim(v, p.dim(), "matfac_hessian_quadratic (v)");
    const auto [l, r] = detail::unpack_factors(p, theta);
    const auto [u, w] = detail::unpack_factors(p, v);
    DenseMatrix mixed = matmul_nt(u, r);
    const DenseMatrix lw = matmul_nt(l, w);
    axpy(1.0, lw.data(), mixed.data());
    const Vector first = detail::measure(p, mixed);
    Vector res = detail::measure(p, matmul_nt(l, r));
    for (std::size_t i = 0; i < res.size(); ++i) res[i] -= p.b[i];
    const Vector second = detail::measure(p, matmul_nt(u, w));
    return 2.0 * dot(first, first) + 4.0 * dot(res, second);
}

class MatrixFactorization final : public Objective {
public:
    explicit MatrixFactorization(MatFacProblem p) : p_(std::move(p)) { detail::validate(p_); }
    std::size_t dim() const override { return p_.dim(); }
    ValueGrad value_grad(std::span<const double> theta) const override { return matfac_value_grad(p_, theta); }
    const MatFacProblem& problem() const noexcept { return p_; }

private:
    MatFacProblem p_;
};

} // namespace egoprep

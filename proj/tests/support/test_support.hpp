#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "egoprep/linalg.hpp"
#include "egoprep/objective.hpp"
#include "egoprep/rng.hpp"

namespace egoprep::testing {

/// Central differences of f.value, step h.
inline Vector fd_gradient(const Objective& f, std::span<const double> theta, double h = 1e-5) {
    Vector x(theta.begin(), theta.end());
    Vector g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + h;
        const double fp = f.value(x);
        x[i] = xi - h;
        const double fm = f.value(x);
        x[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// ‖a − b‖₂ / max(‖b‖₂, floor)
inline double rel_err(std::span<const double> a, std::span<const double> b, double floor = 1e-12) {
    return norm2(subtract(a, b)) / std::max(norm2(b), floor);
}

inline double rel_frobenius(const DenseMatrix& a, const DenseMatrix& b) {
    return frobenius(subtract(a, b)) / std::max(frobenius(b), 1e-300);
}

inline Vector gaussian(std::size_t d, std::uint64_t seed, double scale = 1.0) {
    Vector v(d);
    Rng rng(seed);
    detail::fill_gaussian(rng, v);
    for (double& x : v) x *= scale;
    return v;
}

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    return DenseMatrix(r, c, gaussian(r * c, seed));
}

inline DenseMatrix random_symmetric(std::size_t n, std::uint64_t seed) {
    DenseMatrix a = random_matrix(n, n, seed);
    DenseMatrix s(n, n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) s(i, j) = 0.5 * (a(i, j) + a(j, i));
    return s;
}

inline Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
    return Eigen::Map<const Eigen::MatrixXd>(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                                             static_cast<Eigen::Index>(m.cols()));
}

inline DenseMatrix from_eigen(const Eigen::MatrixXd& m) {
    const auto r = static_cast<std::size_t>(m.rows());
    const auto c = static_cast<std::size_t>(m.cols());
    return DenseMatrix(r, c, std::vector<double>(m.data(), m.data() + m.size()));
}

/// Singular values, descending, from Eigen's SVD.
inline Vector singular_values(const DenseMatrix& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
    const auto& s = svd.singularValues();
    return Vector(s.data(), s.data() + s.size());
}

/// Eigenvalues, descending, from Eigen's self-adjoint solver.
inline Vector reference_eigenvalues(const DenseMatrix& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(m), Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    Vector out(ev.data(), ev.data() + ev.size());
    std::reverse(out.begin(), out.end());
    return out;
}

inline double min_eigenvalue(const DenseMatrix& m) { return reference_eigenvalues(m).back(); }

} // namespace egoprep::testing

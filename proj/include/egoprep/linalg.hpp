#pragma once

// Dense real linear algebra: column-major matrices, symmetric
// eigendecomposition, Haar-random orthonormal frames, prescribed-spectrum
// synthesis and orthonormal basis completion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "egoprep/error.hpp"
#include "egoprep/rng.hpp"

namespace egoprep {

using Vector = std::vector<double>;

inline bool all_finite(std::span<const double> xs) noexcept {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

/// Column-major dense real matrix.
class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        require(data_.size() == rows_ * cols_, Errc::DimMismatch,
                "matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) + "x" +
                    std::to_string(cols_));
        require(all_finite(data_), Errc::NonFinite, "matrix entries must be finite");
    }

    /// Row-major literal, convenient for small fixed matrices.
    static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        DenseMatrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            require(row.size() == c, Errc::DimMismatch, "ragged row literal");
            std::size_t j = 0;
            for (double x : row) m(i, j++) = x;
            ++i;
        }
        require(all_finite(m.data_), Errc::NonFinite, "matrix entries must be finite");
        return m;
    }

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static DenseMatrix diagonal(std::span<const double> diag) {
        DenseMatrix m(diag.size(), diag.size());
        for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool is_square() const noexcept { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[j * rows_ + i]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[j * rows_ + i]; }

    std::span<double> col(std::size_t j) noexcept { return {data_.data() + j * rows_, rows_}; }
    std::span<const double> col(std::size_t j) const noexcept { return {data_.data() + j * rows_, rows_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), Errc::DimMismatch, "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm1(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += std::abs(x);
    return s;
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require(x.size() == y.size(), Errc::DimMismatch, "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vector subtract(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), Errc::DimMismatch, "subtract: length mismatch");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

// ---------------------------------------------------------------------------
// Matrix products

inline DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols(), a.rows());
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) t(j, i) = a(i, j);
    return t;
}

/// a * x
inline Vector matvec(const DenseMatrix& a, std::span<const double> x) {
    require(a.cols() == x.size(), Errc::DimMismatch, "matvec: dimension mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t j = 0; j < a.cols(); ++j) {
        const double xj = x[j];
        if (xj == 0.0) continue;
        const double* c = a.col(j).data();
        for (std::size_t i = 0; i < a.rows(); ++i) y[i] += c[i] * xj;
    }
    return y;
}

/// aᵀ * x
inline Vector matvec_t(const DenseMatrix& a, std::span<const double> x) {
    require(a.rows() == x.size(), Errc::DimMismatch, "matvec_t: dimension mismatch");
    Vector y(a.cols());
    for (std::size_t j = 0; j < a.cols(); ++j) {
        const double* c = a.col(j).data();
        double s = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) s += c[i] * x[i];
        y[j] = s;
    }
    return y;
}

/// a * b
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.cols() == b.rows(), Errc::DimMismatch, "matmul: inner dimension mismatch");
    DenseMatrix c(a.rows(), b.cols());
    for (std::size_t j = 0; j < b.cols(); ++j) {
        double* cj = c.col(j).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double bkj = b(k, j);
            if (bkj == 0.0) continue;
            const double* ak = a.col(k).data();
            for (std::size_t i = 0; i < a.rows(); ++i) cj[i] += ak[i] * bkj;
        }
    }
    return c;
}

/// aᵀ * b
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.rows() == b.rows(), Errc::DimMismatch, "matmul_tn: inner dimension mismatch");
    DenseMatrix c(a.cols(), b.cols());
    const std::size_t n = a.rows();
    for (std::size_t j = 0; j < b.cols(); ++j) {
        const double* bj = b.col(j).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double* ai = a.col(i).data();
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += ai[k] * bj[k];
            c(i, j) = s;
        }
    }
    return c;
}

/// a * bᵀ
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.cols() == b.cols(), Errc::DimMismatch, "matmul_nt: inner dimension mismatch");
    DenseMatrix c(a.rows(), b.rows());
    for (std::size_t j = 0; j < b.rows(); ++j) {
        double* cj = c.col(j).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double bjk = b(j, k);
            if (bjk == 0.0) continue;
            const double* ak = a.col(k).data();
            for (std::size_t i = 0; i < a.rows(); ++i) cj[i] += ak[i] * bjk;
        }
    }
    return c;
}

inline double frobenius(const DenseMatrix& a) { return norm2(a.data()); }

inline DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), Errc::DimMismatch, "subtract: shape mismatch");
    DenseMatrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
    return c;
}

inline double trace(const DenseMatrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) s += a(i, i);
    return s;
}

/// Frobenius norm of the off-diagonal part.
inline double off_diagonal_norm(const DenseMatrix& a) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

/// ‖QᵀQ − I‖_F
inline double orthonormality_error(const DenseMatrix& q) {
    DenseMatrix g = matmul_tn(q, q);
    for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
    return frobenius(g);
}

/// ‖m − mᵀ‖_F / ‖m‖_F (0 for the zero matrix).
inline double asymmetry(const DenseMatrix& m) {
    require(m.is_square(), Errc::NotSymmetric, "matrix is not square");
    double diff = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j)
        for (std::size_t i = j + 1; i < m.rows(); ++i) {
            const double d = m(i, j) - m(j, i);
            diff += 2.0 * d * d;
        }
    const double fn = frobenius(m);
    return fn == 0.0 ? 0.0 : std::sqrt(diff) / fn;
}

/// Q * diag(lambda) * Qᵀ
inline DenseMatrix reconstruct(const DenseMatrix& q, std::span<const double> lambda) {
    require(q.cols() == lambda.size(), Errc::DimMismatch, "reconstruct: eigenvalue count mismatch");
    DenseMatrix scaled = q;
    for (std::size_t j = 0; j < q.cols(); ++j)
        for (double& x : scaled.col(j)) x *= lambda[j];
    return matmul_nt(scaled, q);
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition

struct SymEigen {
    Vector eigenvalues;      // non-increasing
    DenseMatrix eigenvectors; // columns are unit eigenvectors
};

enum class EigMethod {
    Auto,        ///< Jacobi up to kJacobiMaxDim, tridiagonal QL beyond
    Jacobi,      ///< cyclic Jacobi, row-cyclic order
    Tridiagonal, ///< Householder tridiagonalization + implicit QL
};

inline constexpr std::size_t kJacobiMaxDim = 256;
inline constexpr int kJacobiMaxSweeps = 50;
inline constexpr double kSymmetryTol = 1e-12;
inline constexpr double kJacobiRelTol = 1e-14;

namespace detail {

// Returns false if the sweep budget ran out.
inline bool jacobi_eigen(DenseMatrix& a, DenseMatrix& v, double scale) {
    const std::size_t n = a.rows();
    // Relative test |a_pq| ≤ tol·√|a_pp a_qq| keeps small eigenvalues of
    // graded matrices accurate; the absolute floor stops churn on zeros.
    const double floor = 1e-30 * scale;
    for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
        std::size_t rotations = 0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                const double rel = kJacobiRelTol * std::sqrt(std::abs(a(p, p)) * std::abs(a(q, q)));
                if (!(std::abs(apq) > std::max(rel, floor))) continue;
                ++rotations;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                if (theta < 0.0) t = -t;
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                double* cp = a.col(p).data();
                double* cq = a.col(q).data();
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = cp[k];
                    const double akq = cq[k];
                    cp[k] = c * akp - s * akq;
                    cq[k] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    a(p, k) = cp[k];
                    a(q, k) = cq[k];
                }
                cp[p] -= t * apq;
                cq[q] += t * apq;
                cp[q] = 0.0;
                cq[p] = 0.0;
                double* vp = v.col(p).data();
                double* vq = v.col(q).data();
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vp[k];
                    const double vkq = vq[k];
                    vp[k] = c * vkp - s * vkq;
                    vq[k] = s * vkp + c * vkq;
                }
            }
        }
        if (rotations == 0) return true;
    }
    return false;
}

// Householder reduction to tridiagonal form followed by the implicit QL
// algorithm (EISPACK tred2/tql2 lineage). `v` enters holding the symmetric
// matrix and leaves holding the eigenvectors in its columns.
inline bool tridiagonal_ql_eigen(DenseMatrix& v, Vector& d) {
    const std::size_t n = v.rows();
    d.assign(n, 0.0);
    Vector e(n, 0.0);
    if (n == 0) return true;
    if (n == 1) {
        d[0] = v(0, 0);
        v(0, 0) = 1.0;
        return true;
    }

    for (std::size_t j = 0; j < n; ++j) d[j] = v(n - 1, j);

    for (std::size_t i = n - 1; i > 0; --i) {
        double scale = 0.0;
        double h = 0.0;
        for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
        if (scale == 0.0) {
            e[i] = d[i - 1];
            for (std::size_t j = 0; j < i; ++j) {
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
                v(j, i) = 0.0;
            }
        } else {
            for (std::size_t k = 0; k < i; ++k) {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            double f = d[i - 1];
            double g = std::sqrt(h);
            if (f > 0) g = -g;
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;

            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                v(j, i) = f;
                g = e[j] + v(j, j) * f;
                const double* vj = v.col(j).data();
                for (std::size_t k = j + 1; k <= i - 1; ++k) {
                    g += vj[k] * d[k];
                    e[k] += vj[k] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for (std::size_t j = 0; j < i; ++j) {
                e[j] /= h;
                f += e[j] * d[j];
            }
            const double hh = f / (h + h);
            for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                g = e[j];
                double* vj = v.col(j).data();
                for (std::size_t k = j; k <= i - 1; ++k) vj[k] -= (f * e[k] + g * d[k]);
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for (std::size_t i = 0; i + 1 < n; ++i) {
        v(n - 1, i) = v(i, i);
        v(i, i) = 1.0;
        const double h = d[i + 1];
        double* vi1 = v.col(i + 1).data();
        if (h != 0.0) {
            for (std::size_t k = 0; k <= i; ++k) d[k] = vi1[k] / h;
            for (std::size_t j = 0; j <= i; ++j) {
                double* vj = v.col(j).data();
                double g = 0.0;
                for (std::size_t k = 0; k <= i; ++k) g += vi1[k] * vj[k];
                for (std::size_t k = 0; k <= i; ++k) vj[k] -= g * d[k];
            }
        }
        for (std::size_t k = 0; k <= i; ++k) vi1[k] = 0.0;
    }
    for (std::size_t j = 0; j < n; ++j) {
        d[j] = v(n - 1, j);
        v(n - 1, j) = 0.0;
    }
    v(n - 1, n - 1) = 1.0;
    e[0] = 0.0;

    // Implicit QL on the tridiagonal (d, e).
    for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;

    constexpr int kMaxIter = 64;
    const double eps = std::ldexp(1.0, -52);
    double f = 0.0;
    double tst1 = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
        std::size_t m = l;
        while (m < n) {
            if (std::abs(e[m]) <= eps * tst1) break;
            ++m;
        }
        if (m > l) {
            int iter = 0;
            do {
                if (++iter > kMaxIter) return false;
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
                f += h;

                p = d[m];
                double c = 1.0, c2 = 1.0, c3 = 1.0;
                const double el1 = e[l + 1];
                double s = 0.0, s2 = 0.0;
                for (std::size_t ii = m; ii-- > l;) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[ii];
                    h = c * p;
                    r = std::hypot(p, e[ii]);
                    e[ii + 1] = s * r;
                    s = e[ii] / r;
                    c = p / r;
                    p = c * d[ii] - s * g;
                    d[ii + 1] = h + s * (c * g + s * d[ii]);
                    double* va = v.col(ii).data();
                    double* vb = v.col(ii + 1).data();
                    for (std::size_t k = 0; k < n; ++k) {
                        const double hk = vb[k];
                        vb[k] = s * va[k] + c * hk;
                        va[k] = c * va[k] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::abs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }
    return true;
}

// Sort eigenpairs descending and make each eigenvector's largest-magnitude
// entry non-negative (lowest index wins ties).
inline SymEigen canonicalize(Vector lambda, DenseMatrix vecs) {
    const std::size_t n = lambda.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lambda[a] > lambda[b]; });
    SymEigen out{Vector(n), DenseMatrix(vecs.rows(), n)};
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = lambda[order[j]];
        auto src = vecs.col(order[j]);
        auto dst = out.eigenvectors.col(j);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < src.size(); ++i)
            if (std::abs(src[i]) > std::abs(src[arg])) arg = i;
        const double sign = (src.empty() || src[arg] >= 0.0) ? 1.0 : -1.0;
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sign * src[i];
    }
    return out;
}

} // namespace detail

/// Eigendecomposition of a symmetric matrix, eigenvalues descending,
/// sign-canonical eigenvectors.
///
/// `tol` bounds the reconstruction error ‖VΛVᵀ − m‖_F / ‖m‖_F that the
/// result is checked against; exceeding it raises NoConvergence.
inline SymEigen sym_eig(const DenseMatrix& m, double tol = 1e-10, EigMethod method = EigMethod::Auto) {
    require(m.is_square(), Errc::NotSymmetric, "sym_eig: matrix is not square");
    require(all_finite(m.data()), Errc::NonFinite, "sym_eig: non-finite entry");
    const double asym = asymmetry(m);
    require(asym <= kSymmetryTol, Errc::NotSymmetric, "sym_eig: relative asymmetry " + std::to_string(asym));

    const std::size_t n = m.rows();
    // Exact symmetrization so both triangles agree bit-for-bit.
    DenseMatrix a = m;
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = j + 1; i < n; ++i) {
            const double s = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = s;
            a(j, i) = s;
        }
    const double scale = frobenius(a);

    if (method == EigMethod::Auto) method = n <= kJacobiMaxDim ? EigMethod::Jacobi : EigMethod::Tridiagonal;

    Vector lambda;
    DenseMatrix vecs;
    if (method == EigMethod::Jacobi) {
        vecs = DenseMatrix::identity(n);
        if (!detail::jacobi_eigen(a, vecs, scale))
            fail(Errc::NoConvergence, "sym_eig: Jacobi sweep budget exhausted");
        lambda.resize(n);
        for (std::size_t i = 0; i < n; ++i) lambda[i] = a(i, i);
    } else {
        vecs = a;
        if (!detail::tridiagonal_ql_eigen(vecs, lambda))
            fail(Errc::NoConvergence, "sym_eig: QL iteration budget exhausted");
    }
    SymEigen out = detail::canonicalize(std::move(lambda), std::move(vecs));

    // Cheap a-posteriori check on the trace; the full reconstruction test is
    // O(n³) and left to callers that want it.
    const double tr = trace(a);
    const double sum = std::accumulate(out.eigenvalues.begin(), out.eigenvalues.end(), 0.0);
    const double slack = std::max(tol, 1e-12) * std::max(1.0, scale) * static_cast<double>(std::max<std::size_t>(n, 1));
    if (!(std::abs(sum - tr) <= slack))
        fail(Errc::NoConvergence, "sym_eig: eigenvalue sum deviates from trace");
    return out;
}

// ---------------------------------------------------------------------------
// Random orthonormal frames

namespace detail {

// Orthogonalize `v` against the first `k` columns of `basis` (two passes of
// modified Gram–Schmidt). Returns the residual norm.
inline double orthogonalize_against(const DenseMatrix& basis, std::size_t k, std::span<double> v) {
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < k; ++j) {
            auto q = basis.col(j);
            double s = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) s += q[i] * v[i];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= s * q[i];
        }
    }
    return norm2(v);
}

inline void fill_gaussian(Rng& rng, std::span<double> out) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : out) x = normal(rng);
}

} // namespace detail

/// d×k matrix whose columns are the first k columns of a Haar-distributed
/// orthogonal matrix (Gram–Schmidt of a standard Gaussian matrix).
inline DenseMatrix random_orthonormal_columns(std::size_t d, std::size_t k, std::uint64_t seed) {
    require(d >= 1, Errc::DimMismatch, "random_orthonormal_columns: d must be >= 1");
    require(k <= d, Errc::DimMismatch, "random_orthonormal_columns: k > d");
    Rng rng(seed);
    DenseMatrix q(d, k);
    for (std::size_t j = 0; j < k; ++j) {
        auto v = q.col(j);
        double r = 0.0;
        for (int attempt = 0; attempt < 10; ++attempt) {
            detail::fill_gaussian(rng, v);
            r = detail::orthogonalize_against(q, j, v);
            if (r >= 1e-12) break;
        }
        require(r >= 1e-12, Errc::RankDeficient, "random_orthonormal_columns: degenerate draw");
        for (double& x : v) x /= r;
    }
    return q;
}

/// Haar-random d×d orthogonal matrix; bit-reproducible for a fixed seed.
inline DenseMatrix random_orthogonal(std::size_t d, std::uint64_t seed) {
    return random_orthonormal_columns(d, d, seed);
}

/// A = Q₁ diag(σ) Q₂ᵀ with Haar-random Q₁, Q₂.
inline DenseMatrix matrix_with_spectrum(std::size_t rows, std::size_t cols, std::span<const double> singular_values,
                                        std::uint64_t seed) {
    const std::size_t k = std::min(rows, cols);
    require(singular_values.size() == k, Errc::BadSpectrum,
            "matrix_with_spectrum: expected " + std::to_string(k) + " singular values");
    for (double s : singular_values)
        require(std::isfinite(s) && s >= 0.0, Errc::BadSpectrum, "matrix_with_spectrum: negative singular value");
    const DenseMatrix left = random_orthonormal_columns(rows, k, derive_seed(seed, {1}));
    const DenseMatrix right = random_orthonormal_columns(cols, k, derive_seed(seed, {2}));
    DenseMatrix scaled = left;
    for (std::size_t l = 0; l < k; ++l)
        for (double& x : scaled.col(l)) x *= singular_values[l];
    return matmul_nt(scaled, right);
}

/// Extend the orthonormal columns of `partial` (d×k) to a full d×d
/// orthonormal basis; the first k columns are copied verbatim.
inline DenseMatrix complete_orthobasis(const DenseMatrix& partial, std::uint64_t seed) {
    const std::size_t d = partial.rows();
    const std::size_t k = partial.cols();
    require(k <= d, Errc::NotOrthonormal, "complete_orthobasis: more columns than rows");
    require(orthonormality_error(partial) <= 1e-8, Errc::NotOrthonormal,
            "complete_orthobasis: partial basis is not orthonormal");
    DenseMatrix out(d, d);
    std::copy(partial.data().begin(), partial.data().end(), out.data().begin());
    Rng rng(seed);
    for (std::size_t j = k; j < d; ++j) {
        auto v = out.col(j);
        double r = 0.0;
        int attempt = 0;
        for (; attempt < 10; ++attempt) {
            detail::fill_gaussian(rng, v);
            r = detail::orthogonalize_against(out, j, v);
            if (r >= 1e-12) break;
        }
        require(attempt < 10, Errc::RankDeficient, "complete_orthobasis: candidate residual below 1e-12");
        for (double& x : v) x /= r;
    }
    return out;
}

} // namespace egoprep

#pragma once

// Reparameterization by the EGOP eigenbasis:
//
//   1. draw θ_1..θ_M ~ ρ i.i.d.
//   2. P̂ = (1/M) Σ ∇f(θ_i)∇f(θ_i)ᵀ          (globally or per coordinate block)
//   3. P̂ = VΛVᵀ
//   4. optimize f̃ = f∘V, map solutions back with θ = Vθ̃.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "egoprep/error.hpp"
#include "egoprep/linalg.hpp"
#include "egoprep/objective.hpp"
#include "egoprep/rng.hpp"
#include "egoprep/sampling.hpp"

namespace egoprep {

struct EgopEstimate {
    std::optional<DenseMatrix> matrix; // P̂, retained on request
    Vector eigenvalues;                // descending
    DenseMatrix basis;                 // V, eigenvectors in columns
    std::size_t sample_count = 0;      // M
    DistKind dist = DistKind::StandardGaussian;
    std::optional<std::size_t> block_id;

    std::size_t dim() const noexcept { return eigenvalues.size(); }
};

/// Ordered, pairwise-disjoint coordinate blocks S_1..S_L.
struct BlockPartition {
    std::vector<std::vector<std::size_t>> blocks;
    std::vector<bool> reparameterize; // empty means "all blocks"

    bool reparameterized(std::size_t i) const { return reparameterize.empty() || reparameterize.at(i); }

    static BlockPartition whole(std::size_t d) { return {{all_indices(d)}, {}}; }

    void validate(std::size_t d) const {
        require(reparameterize.empty() || reparameterize.size() == blocks.size(), Errc::ShapeMismatch,
                "block partition: flag count mismatch");
        std::vector<bool> seen(d, false);
        for (const auto& b : blocks)
            for (std::size_t i : b) {
                require(i < d, Errc::DimMismatch, "block partition: index " + std::to_string(i) + " >= d");
                require(!seen[i], Errc::OverlapError, "block partition: index " + std::to_string(i) + " in two blocks");
                seen[i] = true;
            }
    }
};

/// One block per layer's weight matrix; biases are included only on request.
inline BlockPartition layer_blocks(std::span<const LayerShape> layers, bool include_bias = false) {
    BlockPartition parts;
    const auto offsets = layer_offsets(layers);
    for (std::size_t k = 0; k < layers.size(); ++k) {
        std::vector<std::size_t> b;
        for (std::size_t i = 0; i < layers[k].weight_count(); ++i) b.push_back(offsets[k].weight + i);
        if (include_bias && layers[k].bias)
            for (std::size_t i = 0; i < layers[k].out; ++i) b.push_back(offsets[k].bias + i);
        parts.blocks.push_back(std::move(b));
    }
    return parts;
}

struct EstimateOptions {
    std::size_t samples = 0;    // M
    std::size_t batch_size = 0; // 0 = full-batch gradients
    std::uint64_t seed = 0;
    bool keep_matrix = true;
    unsigned threads = 1;
};

namespace detail {

inline constexpr std::uint64_t kParamsTag = 0x70;
inline constexpr std::uint64_t kBatchTag = 0x62;

inline std::vector<std::size_t> draw_batch(std::size_t n, std::size_t b, std::uint64_t seed) {
    std::vector<std::size_t> perm = all_indices(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < b; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(perm[i], perm[pick(rng)]);
    }
    perm.resize(b);
    return perm;
}

// Running mean of outer products on the upper triangle.
struct OuterMean {
    DenseMatrix p;
    std::size_t count = 0;

    explicit OuterMean(std::size_t d) : p(d, d) {}

    void add(std::span<const double> g) {
        ++count;
        const double w = 1.0 / static_cast<double>(count);
        const std::size_t d = g.size();
        for (std::size_t j = 0; j < d; ++j) {
            double* col = p.col(j).data();
            const double gj = g[j];
            for (std::size_t i = 0; i <= j; ++i) col[i] += (g[i] * gj - col[i]) * w;
        }
    }

    void merge(const OuterMean& other) {
        if (other.count == 0) return;
        const double total = static_cast<double>(count + other.count);
        const double wa = static_cast<double>(count) / total;
        const double wb = static_cast<double>(other.count) / total;
        for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = wa * p.data()[i] + wb * other.p.data()[i];
        count += other.count;
    }

    DenseMatrix symmetric() const {
        DenseMatrix out = p;
        for (std::size_t j = 0; j < out.cols(); ++j)
            for (std::size_t i = j + 1; i < out.rows(); ++i) out(i, j) = out(j, i);
        return out;
    }
};

} // namespace detail

/// The i-th gradient sample of an estimation run: ∇f at θ_i ~ ρ, on a fresh
/// minibatch when opts.batch_size > 0.
inline Vector sample_gradient(const Objective& f, const SamplingDistribution& rho, const EstimateOptions& opts,
                              std::size_t i) {
    const std::size_t d = f.dim();
    const Vector theta = sample_params(rho, d, derive_seed(opts.seed, {detail::kParamsTag, i}));
    Vector g;
    if (opts.batch_size == 0) {
        g = f.value_grad(theta).gradient;
    } else {
        const std::size_t n = f.sample_count();
        require(n > 0, Errc::DimMismatch, "estimate_egop: minibatches need a data-backed objective");
        require(opts.batch_size <= n, Errc::DimMismatch, "estimate_egop: batch size exceeds sample count");
        const auto batch = detail::draw_batch(n, opts.batch_size, derive_seed(opts.seed, {detail::kBatchTag, i}));
        g = f.batch_value_grad(theta, batch).gradient;
    }
    require(all_finite(g), Errc::NonFinite, "estimate_egop: non-finite gradient at sample " + std::to_string(i));
    return g;
}

/// Block EGOP estimates; every block shares the same M sampled points and
/// minibatches, so a single gradient evaluation serves all blocks.
inline std::vector<EgopEstimate> estimate_block_egops(const Objective& f, const SamplingDistribution& rho,
                                                      const BlockPartition& parts, const EstimateOptions& opts) {
    const std::size_t d = f.dim();
    require(opts.samples >= 1, Errc::DimMismatch, "estimate_egop: M must be >= 1");
    parts.validate(d);

    std::vector<std::size_t> active;
    for (std::size_t b = 0; b < parts.blocks.size(); ++b)
        if (parts.reparameterized(b)) active.push_back(b);

    const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(opts.samples)));
    // accumulators[t][k]: worker t, active block k
    std::vector<std::vector<detail::OuterMean>> acc(threads);
    for (auto& per : acc)
        for (std::size_t b : active) per.emplace_back(parts.blocks[b].size());

    auto work = [&](unsigned t) {
        const std::size_t lo = opts.samples * t / threads;
        const std::size_t hi = opts.samples * (t + 1) / threads;
        Vector sub;
        for (std::size_t i = lo; i < hi; ++i) {
            const Vector g = sample_gradient(f, rho, opts, i);
            for (std::size_t k = 0; k < active.size(); ++k) {
                const auto& idx = parts.blocks[active[k]];
                sub.resize(idx.size());
                for (std::size_t j = 0; j < idx.size(); ++j) sub[j] = g[idx[j]];
                acc[t][k].add(sub);
            }
        }
    };

    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::exception_ptr> errors(threads);
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                try {
                    work(t);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        // Pairwise tree reduction: fixed shape for a fixed worker count.
        for (unsigned stride = 1; stride < threads; stride *= 2)
            for (unsigned t = 0; t + stride < threads; t += 2 * stride)
                for (std::size_t k = 0; k < active.size(); ++k) acc[t][k].merge(acc[t + stride][k]);
    }

    std::vector<EgopEstimate> out;
    for (std::size_t k = 0; k < active.size(); ++k) {
        DenseMatrix p = acc[0][k].symmetric();
        SymEigen eig = sym_eig(p);
        EgopEstimate e;
        e.eigenvalues = std::move(eig.eigenvalues);
        e.basis = std::move(eig.eigenvectors);
        e.sample_count = opts.samples;
        e.dist = rho.kind;
        e.block_id = active[k];
        if (opts.keep_matrix) e.matrix = std::move(p);
        out.push_back(std::move(e));
    }
    return out;
}

/// Global EGOP estimate P̂ = (1/M) Σ ∇f(θ_i)∇f(θ_i)ᵀ and its eigenbasis.
inline EgopEstimate estimate_egop(const Objective& f, const SamplingDistribution& rho, const EstimateOptions& opts) {
    auto est = estimate_block_egops(f, rho, BlockPartition::whole(f.dim()), opts);
    EgopEstimate e = std::move(est.front());
    e.block_id.reset();
    return e;
}

/// Top-k eigenvectors of an estimate completed to a full orthonormal basis
/// with random directions spanning the complement.
inline DenseMatrix partial_basis(const EgopEstimate& e, std::size_t k, std::uint64_t seed) {
    const std::size_t d = e.basis.rows();
    require(k <= d, Errc::DimMismatch, "partial_basis: k exceeds dimension");
    DenseMatrix lead(d, k);
    for (std::size_t j = 0; j < k; ++j) std::copy(e.basis.col(j).begin(), e.basis.col(j).end(), lead.col(j).begin());
    return complete_orthobasis(lead, seed);
}

// ---------------------------------------------------------------------------
// Reparameterized objective f̃(θ̃) = f(Vθ̃), ∇f̃(θ̃) = Vᵀ∇f(Vθ̃)

inline void check_orthonormal_basis(const DenseMatrix& v, std::size_t d, const char* who) {
    require(v.rows() == d && v.cols() == d, Errc::NotOrthonormal,
            std::string(who) + ": basis must be " + std::to_string(d) + "x" + std::to_string(d));
    const double err = orthonormality_error(v);
    require(err <= 1e-8 * static_cast<double>(std::max<std::size_t>(d, 1)), Errc::NotOrthonormal,
            std::string(who) + ": ‖VᵀV − I‖_F = " + std::to_string(err));
}

class ReparamObjective final : public Objective {
public:
    /// Global change of basis.
    ReparamObjective(ObjectivePtr inner, DenseMatrix basis) : inner_(std::move(inner)) {
        require(inner_ != nullptr, Errc::DimMismatch, "reparameterize: null objective");
        check_orthonormal_basis(basis, inner_->dim(), "reparameterize");
        parts_ = BlockPartition::whole(inner_->dim());
        bases_.push_back(std::move(basis));
    }

    /// Block-diagonal change of basis; coordinates outside every block (or
    /// in blocks flagged off) are left untouched.
    ReparamObjective(ObjectivePtr inner, BlockPartition parts, std::vector<DenseMatrix> bases)
        : inner_(std::move(inner)), parts_(std::move(parts)), bases_(std::move(bases)) {
        require(inner_ != nullptr, Errc::DimMismatch, "block_reparameterize: null objective");
        parts_.validate(inner_->dim());
        require(bases_.size() == parts_.blocks.size(), Errc::ShapeMismatch, "block_reparameterize: one basis per block");
        for (std::size_t b = 0; b < bases_.size(); ++b)
            if (parts_.reparameterized(b))
                check_orthonormal_basis(bases_[b], parts_.blocks[b].size(), "block_reparameterize");
    }

    std::size_t dim() const override { return inner_->dim(); }
    std::size_t sample_count() const override { return inner_->sample_count(); }

    ValueGrad value_grad(std::span<const double> theta_tilde) const override {
        check_dim(theta_tilde, dim(), "reparameterized objective");
        ValueGrad vg = inner_->value_grad(to_original(theta_tilde));
        vg.gradient = to_reparam(vg.gradient);
        return vg;
    }

    double value(std::span<const double> theta_tilde) const override {
        check_dim(theta_tilde, dim(), "reparameterized objective");
        return inner_->value(to_original(theta_tilde));
    }

    ValueGrad batch_value_grad(std::span<const double> theta_tilde, std::span<const std::size_t> batch) const override {
        check_dim(theta_tilde, dim(), "reparameterized objective");
        ValueGrad vg = inner_->batch_value_grad(to_original(theta_tilde), batch);
        vg.gradient = to_reparam(vg.gradient);
        return vg;
    }

    /// θ = Vθ̃
    Vector to_original(std::span<const double> theta_tilde) const { return apply(theta_tilde, false); }

    /// Vᵀx: maps initial points θ₀ ↦ Vᵀθ₀ and gradients ∇f ↦ ∇f̃.
    Vector to_reparam(std::span<const double> x) const { return apply(x, true); }

    const Objective& inner() const noexcept { return *inner_; }
    const BlockPartition& partition() const noexcept { return parts_; }
    const std::vector<DenseMatrix>& bases() const noexcept { return bases_; }

private:
    Vector apply(std::span<const double> x, bool transposed) const {
        check_dim(x, dim(), "reparameterized objective");
        Vector out(x.begin(), x.end());
        Vector sub;
        for (std::size_t b = 0; b < parts_.blocks.size(); ++b) {
            if (!parts_.reparameterized(b)) continue;
            const auto& idx = parts_.blocks[b];
            sub.resize(idx.size());
            for (std::size_t j = 0; j < idx.size(); ++j) sub[j] = x[idx[j]];
            const Vector mapped = transposed ? matvec_t(bases_[b], sub) : matvec(bases_[b], sub);
            for (std::size_t j = 0; j < idx.size(); ++j) out[idx[j]] = mapped[j];
        }
        return out;
    }

    ObjectivePtr inner_;
    BlockPartition parts_;
    std::vector<DenseMatrix> bases_;
};

inline std::shared_ptr<const ReparamObjective> reparameterize(ObjectivePtr f, DenseMatrix basis) {
    return std::make_shared<const ReparamObjective>(std::move(f), std::move(basis));
}

inline std::shared_ptr<const ReparamObjective> block_reparameterize(ObjectivePtr f, BlockPartition parts,
                                                                    std::vector<DenseMatrix> bases) {
    return std::make_shared<const ReparamObjective>(std::move(f), std::move(parts), std::move(bases));
}

// ---------------------------------------------------------------------------
// EGOP artifact file, little-endian:
//   "EGOP1" | u64 d | u64 M | u8 kind | d × f64 eigenvalues | d·d × f64 basis (column-major)

inline constexpr char kEgopMagic[5] = {'E', 'G', 'O', 'P', '1'};

namespace detail {

inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

} // namespace detail

inline std::string serialize_egop(const EgopEstimate& e) {
    const std::size_t d = e.eigenvalues.size();
    require(e.basis.rows() == d && e.basis.cols() == d, Errc::DimMismatch, "save_egop: basis shape mismatch");
    std::string buf(kEgopMagic, sizeof kEgopMagic);
    detail::put_u64(buf, d);
    detail::put_u64(buf, e.sample_count);
    buf.push_back(static_cast<char>(e.dist));
    for (double x : e.eigenvalues) detail::put_u64(buf, std::bit_cast<std::uint64_t>(x));
    for (double x : e.basis.data()) detail::put_u64(buf, std::bit_cast<std::uint64_t>(x));
    return buf;
}

inline EgopEstimate deserialize_egop(std::string_view bytes) {
    constexpr std::size_t header = sizeof kEgopMagic + 8 + 8 + 1;
    require(bytes.size() >= header, Errc::FormatError, "EGOP artifact: truncated header");
    require(std::memcmp(bytes.data(), kEgopMagic, sizeof kEgopMagic) == 0, Errc::FormatError,
            "EGOP artifact: bad magic/version");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + sizeof kEgopMagic;
    const std::uint64_t d = detail::get_u64(p);
    const std::uint64_t m = detail::get_u64(p + 8);
    const std::uint8_t kind = p[16];
    require(d >= 1 && d <= (1ULL << 20), Errc::FormatError, "EGOP artifact: implausible dimension");
    require(kind <= static_cast<std::uint8_t>(DistKind::DefaultUniformInit), Errc::FormatError,
            "EGOP artifact: unknown distribution tag");
    const std::uint64_t expected = header + 8 * (d + d * d);
    require(bytes.size() == expected, Errc::FormatError,
            "EGOP artifact: size " + std::to_string(bytes.size()) + " != expected " + std::to_string(expected));
    p += 17;
    EgopEstimate e;
    e.sample_count = m;
    e.dist = static_cast<DistKind>(kind);
    e.eigenvalues.resize(d);
    for (std::size_t i = 0; i < d; ++i, p += 8) e.eigenvalues[i] = std::bit_cast<double>(detail::get_u64(p));
    std::vector<double> basis(d * d);
    for (std::size_t i = 0; i < d * d; ++i, p += 8) basis[i] = std::bit_cast<double>(detail::get_u64(p));
    try {
        e.basis = DenseMatrix(d, d, std::move(basis));
    } catch (const Error&) {
        fail(Errc::FormatError, "EGOP artifact: non-finite basis entry");
    }
    return e;
}

inline void save_egop(const std::string& path, const EgopEstimate& e) {
    const std::string buf = serialize_egop(e);
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), Errc::IoError, "cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    require(static_cast<bool>(out), Errc::IoError, "write failed: " + path);
}

inline EgopEstimate load_egop(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), Errc::IoError, "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_egop(bytes);
}

} // namespace egoprep

#pragma once

// Network objectives with hand-written backpropagation.
//
// Weight matrices follow the out×in convention and are stored in θ as
// vec(W) (column-major). Data is held feature-major: one column per sample.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "egoprep/linalg.hpp"
#include "egoprep/objective.hpp"

namespace egoprep {

struct LayerShape {
    std::size_t in = 0;
    std::size_t out = 0;
    bool bias = false;

    std::size_t weight_count() const noexcept { return in * out; }
    std::size_t param_count() const noexcept { return in * out + (bias ? out : 0); }
    friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Offsets of each layer's weights and bias inside θ.
struct LayerOffsets {
    std::size_t weight = 0;
    std::size_t bias = 0; // valid only when the layer has a bias
};

inline std::vector<LayerOffsets> layer_offsets(std::span<const LayerShape> layers) {
    std::vector<LayerOffsets> out;
    std::size_t off = 0;
    for (const auto& l : layers) {
        LayerOffsets o;
        o.weight = off;
        off += l.weight_count();
        o.bias = off;
        if (l.bias) off += l.out;
        out.push_back(o);
    }
    return out;
}

inline std::size_t total_params(std::span<const LayerShape> layers) {
    std::size_t d = 0;
    for (const auto& l : layers) d += l.param_count();
    return d;
}

inline void check_chain(std::span<const LayerShape> layers, const char* who) {
    require(!layers.empty(), Errc::ShapeMismatch, std::string(who) + ": no layers");
    for (std::size_t k = 1; k < layers.size(); ++k)
        require(layers[k].in == layers[k - 1].out, Errc::ShapeMismatch, std::string(who) + ": layer widths do not chain");
}

namespace detail {

inline DenseMatrix unpack_weight(std::span<const double> theta, const LayerShape& l, std::size_t offset) {
    return DenseMatrix(l.out, l.in,
                       std::vector<double>(theta.begin() + static_cast<std::ptrdiff_t>(offset),
                                           theta.begin() + static_cast<std::ptrdiff_t>(offset + l.weight_count())));
}

inline DenseMatrix gather_columns(const DenseMatrix& m, std::span<const std::size_t> cols) {
    DenseMatrix out(m.rows(), cols.size());
    for (std::size_t k = 0; k < cols.size(); ++k) {
        auto src = m.col(cols[k]);
        std::copy(src.begin(), src.end(), out.col(k).begin());
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Multilayer linear network: f(θ) = ‖W_L ⋯ W_1 A − Y‖²_F / n

class DeepLinearNet final : public Objective {
public:
    static std::vector<LayerShape> default_layers() { return {{10, 50, false}, {50, 30, false}, {30, 10, false}}; }

    /// a: in₁ × n inputs, y: out_L × n targets.
    DeepLinearNet(std::vector<LayerShape> layers, DenseMatrix a, DenseMatrix y)
        : layers_(std::move(layers)), a_(std::move(a)), y_(std::move(y)) {
        check_chain(layers_, "deep linear net");
        for (const auto& l : layers_) require(!l.bias, Errc::ShapeMismatch, "deep linear net: layers carry no bias");
        require(a_.rows() == layers_.front().in, Errc::DimMismatch, "deep linear net: input width mismatch");
        require(y_.rows() == layers_.back().out, Errc::DimMismatch, "deep linear net: output width mismatch");
        require(a_.cols() == y_.cols() && a_.cols() >= 1, Errc::DimMismatch, "deep linear net: sample count mismatch");
        offsets_ = layer_offsets(layers_);
        dim_ = total_params(layers_);
    }

    std::size_t dim() const override { return dim_; }
    std::size_t sample_count() const override { return a_.cols(); }
    const std::vector<LayerShape>& layers() const noexcept { return layers_; }
    const DenseMatrix& inputs() const noexcept { return a_; }
    const DenseMatrix& targets() const noexcept { return y_; }

    ValueGrad value_grad(std::span<const double> theta) const override {
        return deep_linear_value_grad(theta, all_indices(a_.cols()));
    }

    ValueGrad batch_value_grad(std::span<const double> theta, std::span<const std::size_t> batch) const override {
        return deep_linear_value_grad(theta, batch);
    }

    /// Value and chain-rule gradient on the batch columns.
    ValueGrad deep_linear_value_grad(std::span<const double> theta, std::span<const std::size_t> batch) const {
        check_dim(theta, dim_, "deep linear net");
        check_batch(batch, a_.cols(), "deep linear net");
        const std::size_t L = layers_.size();
        std::vector<DenseMatrix> w(L);
        for (std::size_t k = 0; k < L; ++k) w[k] = detail::unpack_weight(theta, layers_[k], offsets_[k].weight);

        std::vector<DenseMatrix> h(L + 1);
        h[0] = detail::gather_columns(a_, batch);
        for (std::size_t k = 0; k < L; ++k) h[k + 1] = matmul(w[k], h[k]);

        const DenseMatrix yb = detail::gather_columns(y_, batch);
        const double inv_b = 1.0 / static_cast<double>(batch.size());
        DenseMatrix err = subtract(h[L], yb);
        ValueGrad out{0.0, Vector(dim_, 0.0)};
        for (double e : err.data()) out.value += e * e;
        out.value *= inv_b;
        for (double& e : err.data()) e *= 2.0 * inv_b;

        DenseMatrix g = std::move(err);
        for (std::size_t k = L; k-- > 0;) {
            const DenseMatrix gw = matmul_nt(g, h[k]);
            std::copy(gw.data().begin(), gw.data().end(),
                      out.gradient.begin() + static_cast<std::ptrdiff_t>(offsets_[k].weight));
            if (k > 0) g = matmul_tn(w[k], g);
        }
        return out;
    }

private:
    std::vector<LayerShape> layers_;
    std::vector<LayerOffsets> offsets_;
    DenseMatrix a_;
    DenseMatrix y_;
    std::size_t dim_ = 0;
};

// ---------------------------------------------------------------------------
// Fully connected ReLU network with a log-softmax head, trained on the mean
// negative log-likelihood. θ = [vec(W₁), b₁, vec(W₂), b₂, …].

class ReluMlp final : public Objective {
public:
    /// features: n × in₁ (one row per sample); labels in [0, out_L).
    ReluMlp(std::vector<LayerShape> layers, const DenseMatrix& features, std::vector<int> labels)
        : layers_(std::move(layers)), x_(transpose(features)), labels_(std::move(labels)) {
        check_chain(layers_, "relu mlp");
        require(features.cols() == layers_.front().in, Errc::DimMismatch, "relu mlp: feature width mismatch");
        require(labels_.size() == features.rows(), Errc::DimMismatch, "relu mlp: label count mismatch");
        const int classes = static_cast<int>(layers_.back().out);
        for (int y : labels_) require(y >= 0 && y < classes, Errc::RangeError, "relu mlp: label out of range");
        offsets_ = layer_offsets(layers_);
        dim_ = total_params(layers_);
    }

    std::size_t dim() const override { return dim_; }
    std::size_t sample_count() const override { return x_.cols(); }
    const std::vector<LayerShape>& layers() const noexcept { return layers_; }

    ValueGrad value_grad(std::span<const double> theta) const override {
        return relu_mlp_value_grad(theta, all_indices(x_.cols()));
    }

    ValueGrad batch_value_grad(std::span<const double> theta, std::span<const std::size_t> batch) const override {
        return relu_mlp_value_grad(theta, batch);
    }

    /// Mean NLL over the batch and its backpropagated gradient (ReLU'(0) = 0).
    ValueGrad relu_mlp_value_grad(std::span<const double> theta, std::span<const std::size_t> batch) const {
        check_dim(theta, dim_, "relu mlp");
        check_batch(batch, x_.cols(), "relu mlp");
        Forward fw = forward(theta, batch);
        const std::size_t L = layers_.size();
        const std::size_t B = batch.size();
        const double inv_b = 1.0 / static_cast<double>(B);

        // Log-softmax head; dlogits = (softmax − onehot)/B.
        DenseMatrix& logits = fw.z[L - 1];
        DenseMatrix g(logits.rows(), B);
        double loss = 0.0;
        for (std::size_t s = 0; s < B; ++s) {
            auto zc = logits.col(s);
            const double zmax = *std::max_element(zc.begin(), zc.end());
            double sum = 0.0;
            for (double z : zc) sum += std::exp(z - zmax);
            const double lse = zmax + std::log(sum);
            const auto y = static_cast<std::size_t>(labels_[batch[s]]);
            loss -= zc[y] - lse;
            auto gc = g.col(s);
            for (std::size_t c = 0; c < zc.size(); ++c) gc[c] = std::exp(zc[c] - lse) * inv_b;
            gc[y] -= inv_b;
        }
        ValueGrad out{loss * inv_b, Vector(dim_, 0.0)};

        for (std::size_t k = L; k-- > 0;) {
            const DenseMatrix gw = matmul_nt(g, fw.h[k]);
            std::copy(gw.data().begin(), gw.data().end(),
                      out.gradient.begin() + static_cast<std::ptrdiff_t>(offsets_[k].weight));
            if (layers_[k].bias) {
                for (std::size_t s = 0; s < B; ++s)
                    for (std::size_t r = 0; r < g.rows(); ++r) out.gradient[offsets_[k].bias + r] += g(r, s);
            }
            if (k > 0) {
                g = matmul_tn(fw.w[k], g);
                const DenseMatrix& zprev = fw.z[k - 1];
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (!(zprev.data()[i] > 0.0)) g.data()[i] = 0.0;
            }
        }
        return out;
    }

    /// Fraction of samples whose arg-max logit equals the label.
    double accuracy(std::span<const double> theta) const {
        check_dim(theta, dim_, "relu mlp");
        const auto idx = all_indices(x_.cols());
        const Forward fw = forward(theta, idx);
        const DenseMatrix& logits = fw.z.back();
        std::size_t hits = 0;
        for (std::size_t s = 0; s < idx.size(); ++s) {
            auto zc = logits.col(s);
            const auto arg = static_cast<std::size_t>(std::max_element(zc.begin(), zc.end()) - zc.begin());
            if (arg == static_cast<std::size_t>(labels_[s])) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(idx.size());
    }

    /// Smallest |pre-activation| over hidden units and all samples.
    double min_abs_preactivation(std::span<const double> theta) const {
        check_dim(theta, dim_, "relu mlp");
        const Forward fw = forward(theta, all_indices(x_.cols()));
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k + 1 < fw.z.size(); ++k)
            for (double z : fw.z[k].data()) m = std::min(m, std::abs(z));
        return m;
    }

private:
    struct Forward {
        std::vector<DenseMatrix> w; // weights
        std::vector<DenseMatrix> z; // pre-activations per layer
        std::vector<DenseMatrix> h; // h[k] is the input of layer k
    };

    Forward forward(std::span<const double> theta, std::span<const std::size_t> batch) const {
        const std::size_t L = layers_.size();
        Forward fw;
        fw.w.resize(L);
        fw.z.resize(L);
        fw.h.resize(L);
        fw.h[0] = detail::gather_columns(x_, batch);
        for (std::size_t k = 0; k < L; ++k) {
            fw.w[k] = detail::unpack_weight(theta, layers_[k], offsets_[k].weight);
            fw.z[k] = matmul(fw.w[k], fw.h[k]);
            if (layers_[k].bias) {
                const double* b = theta.data() + offsets_[k].bias;
                for (std::size_t s = 0; s < batch.size(); ++s) {
                    auto zc = fw.z[k].col(s);
                    for (std::size_t r = 0; r < zc.size(); ++r) zc[r] += b[r];
                }
            }
            if (k + 1 < L) {
                fw.h[k + 1] = fw.z[k];
                for (double& v : fw.h[k + 1].data()) v = v > 0.0 ? v : 0.0;
            }
        }
        return fw;
    }

    std::vector<LayerShape> layers_;
    std::vector<LayerOffsets> offsets_;
    DenseMatrix x_; // in × n
    std::vector<int> labels_;
    std::size_t dim_ = 0;
};

} // namespace egoprep

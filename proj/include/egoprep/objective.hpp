#pragma once

#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "egoprep/error.hpp"
#include "egoprep/linalg.hpp"

namespace egoprep {

struct ValueGrad {
    double value = 0.0;
    Vector gradient;
};

/// Differentiable objective f: R^d -> R with exact and minibatch oracles.
///
/// Objectives are immutable after construction; every call is pure and may
/// run concurrently. A batch is a set of data-row indices below
/// sample_count(); objectives without data (sample_count() == 0) ignore it.
class Objective {
public:
    virtual ~Objective() = default;

    virtual std::size_t dim() const = 0;
    virtual std::size_t sample_count() const { return 0; }

    virtual ValueGrad value_grad(std::span<const double> theta) const = 0;

    virtual double value(std::span<const double> theta) const { return value_grad(theta).value; }

    virtual ValueGrad batch_value_grad(std::span<const double> theta, std::span<const std::size_t> /*batch*/) const {
        return value_grad(theta);
    }

    Vector gradient(std::span<const double> theta) const { return value_grad(theta).gradient; }

    Vector stoch_gradient(std::span<const double> theta, std::span<const std::size_t> batch) const {
        return batch_value_grad(theta, batch).gradient;
    }
};

using ObjectivePtr = std::shared_ptr<const Objective>;

/// The index set {0, …, n−1}.
inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

inline void check_dim(std::span<const double> theta, std::size_t d, const char* who) {
    if (theta.size() != d)
        fail(Errc::DimMismatch,
             std::string(who) + ": expected dimension " + std::to_string(d) + ", got " + std::to_string(theta.size()));
}

inline void check_batch(std::span<const std::size_t> batch, std::size_t n, const char* who) {
    require(!batch.empty(), Errc::EmptyBatch, std::string(who) + ": empty batch");
    for (std::size_t i : batch)
        require(i < n, Errc::DimMismatch, std::string(who) + ": batch index " + std::to_string(i) + " out of range");
}

} // namespace egoprep

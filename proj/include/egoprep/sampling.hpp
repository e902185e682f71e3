#pragma once

// Parameter-space sampling distributions ρ: isotropic Gaussians for convex
// objectives and the usual layer-wise initializations for networks.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "egoprep/error.hpp"
#include "egoprep/linalg.hpp"
#include "egoprep/objectives/networks.hpp"
#include "egoprep/rng.hpp"

namespace egoprep {

enum class DistKind : std::uint8_t {
    StandardGaussian = 0,
    ScaledGaussian = 1,
    GlorotNormalWithUniformBias = 2, ///< W ~ N(0, 2/(in+out)), b ~ U(±(in+out)^{-1/2})
    DefaultUniformInit = 3,          ///< W ~ U(±in^{-1/2}),     b ~ U(±(in+out)^{-1/2})
};

inline constexpr std::string_view dist_kind_name(DistKind k) noexcept {
    switch (k) {
    case DistKind::StandardGaussian: return "standard_gaussian";
    case DistKind::ScaledGaussian: return "scaled_gaussian";
    case DistKind::GlorotNormalWithUniformBias: return "glorot_normal";
    case DistKind::DefaultUniformInit: return "default_uniform";
    }
    return "unknown";
}

inline DistKind parse_dist_kind(std::string_view s) {
    for (auto k : {DistKind::StandardGaussian, DistKind::ScaledGaussian, DistKind::GlorotNormalWithUniformBias,
                   DistKind::DefaultUniformInit})
        if (dist_kind_name(k) == s) return k;
    fail(Errc::ConfigError, "unknown sampling distribution '" + std::string(s) + "'");
}

struct SamplingDistribution {
    DistKind kind = DistKind::StandardGaussian;
    double sigma = 1.0;              // ScaledGaussian only
    std::vector<LayerShape> layers;  // structured kinds only

    static SamplingDistribution standard_gaussian() { return {}; }
    static SamplingDistribution scaled_gaussian(double sigma) { return {DistKind::ScaledGaussian, sigma, {}}; }
    static SamplingDistribution glorot(std::vector<LayerShape> layers) {
        return {DistKind::GlorotNormalWithUniformBias, 1.0, std::move(layers)};
    }
    static SamplingDistribution default_uniform(std::vector<LayerShape> layers) {
        return {DistKind::DefaultUniformInit, 1.0, std::move(layers)};
    }

    bool structured() const noexcept {
        return kind == DistKind::GlorotNormalWithUniformBias || kind == DistKind::DefaultUniformInit;
    }
};

inline double glorot_std(const LayerShape& l) { return std::sqrt(2.0 / static_cast<double>(l.in + l.out)); }

/// One draw θ ~ ρ of length d.
inline Vector sample_params(const SamplingDistribution& rho, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Vector theta(d);
    switch (rho.kind) {
    case DistKind::StandardGaussian:
        detail::fill_gaussian(rng, theta);
        return theta;
    case DistKind::ScaledGaussian: {
        require(rho.sigma > 0.0 && std::isfinite(rho.sigma), Errc::ShapeMismatch, "scaled gaussian: sigma must be > 0");
        detail::fill_gaussian(rng, theta);
        for (double& x : theta) x *= rho.sigma;
        return theta;
    }
    case DistKind::GlorotNormalWithUniformBias:
    case DistKind::DefaultUniformInit: break;
    }

    require(total_params(rho.layers) == d, Errc::ShapeMismatch,
            "sample_params: layer shapes give " + std::to_string(total_params(rho.layers)) + " parameters, expected " +
                std::to_string(d));
    std::size_t off = 0;
    for (const auto& l : rho.layers) {
        const double fan = static_cast<double>(l.in + l.out);
        if (rho.kind == DistKind::GlorotNormalWithUniformBias) {
            std::normal_distribution<double> w(0.0, glorot_std(l));
            for (std::size_t i = 0; i < l.weight_count(); ++i) theta[off++] = w(rng);
        } else {
            const double r = 1.0 / std::sqrt(static_cast<double>(l.in));
            std::uniform_real_distribution<double> w(-r, r);
            for (std::size_t i = 0; i < l.weight_count(); ++i) theta[off++] = w(rng);
        }
        if (l.bias) {
            const double r = 1.0 / std::sqrt(fan);
            std::uniform_real_distribution<double> b(-r, r);
            for (std::size_t i = 0; i < l.out; ++i) theta[off++] = b(rng);
        }
    }
    return theta;
}

} // namespace egoprep

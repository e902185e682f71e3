#pragma once

// First-order optimizers (SGD, SGD with momentum, Adagrad, Adam), learning
// rate schedules and a seeded training loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "egoprep/error.hpp"
#include "egoprep/linalg.hpp"
#include "egoprep/objective.hpp"
#include "egoprep/rng.hpp"

namespace egoprep {

enum class Algorithm : std::uint8_t { Sgd, SgdMomentum, Adagrad, Adam };

inline constexpr std::string_view algorithm_name(Algorithm a) noexcept {
    switch (a) {
    case Algorithm::Sgd: return "sgd";
    case Algorithm::SgdMomentum: return "momentum";
    case Algorithm::Adagrad: return "adagrad";
    case Algorithm::Adam: return "adam";
    }
    return "unknown";
}

inline Algorithm parse_algorithm(std::string_view s) {
    for (auto a : {Algorithm::Sgd, Algorithm::SgdMomentum, Algorithm::Adagrad, Algorithm::Adam})
        if (algorithm_name(a) == s) return a;
    fail(Errc::ConfigError, "unknown algorithm '" + std::string(s) + "'");
}

enum class Schedule : std::uint8_t { Constant, CosineAnneal };

inline constexpr std::string_view schedule_name(Schedule s) noexcept {
    return s == Schedule::Constant ? "constant" : "cosine";
}

inline Schedule parse_schedule(std::string_view s) {
    if (s == "constant") return Schedule::Constant;
    if (s == "cosine") return Schedule::CosineAnneal;
    fail(Errc::ConfigError, "unknown schedule '" + std::string(s) + "'");
}

inline constexpr double kAdagradEps = 1e-10;
inline constexpr double kAdamEps = 1e-8;

struct OptimizerConfig {
    Algorithm algorithm = Algorithm::Sgd;
    double learning_rate = 1e-2;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 0.0;
    Schedule schedule = Schedule::Constant;
    std::size_t total_steps = 0; // T for cosine annealing; 0 = filled in by run()
    std::size_t max_iters = 1000;
    double grad_tol = 0.0; // stop when ‖∇f‖₂ < grad_tol; 0 disables

    static OptimizerConfig sgd(double lr) { return with(Algorithm::Sgd, lr, 0.0); }
    static OptimizerConfig sgd_momentum(double lr, double mu = 0.9) {
        OptimizerConfig c = with(Algorithm::SgdMomentum, lr, 0.0);
        c.momentum = mu;
        return c;
    }
    static OptimizerConfig adagrad(double lr, double eps = kAdagradEps) { return with(Algorithm::Adagrad, lr, eps); }
    static OptimizerConfig adam(double lr, double eps = kAdamEps) { return with(Algorithm::Adam, lr, eps); }

    /// Default config for an algorithm: framework-standard ε.
    static OptimizerConfig make(Algorithm a, double lr) {
        switch (a) {
        case Algorithm::Sgd: return sgd(lr);
        case Algorithm::SgdMomentum: return sgd_momentum(lr);
        case Algorithm::Adagrad: return adagrad(lr);
        case Algorithm::Adam: return adam(lr);
        }
        fail(Errc::ConfigError, "unknown algorithm");
    }

    void validate() const {
        require(learning_rate > 0.0 && std::isfinite(learning_rate), Errc::ConfigError, "learning rate must be > 0");
        require(momentum >= 0.0 && momentum < 1.0, Errc::ConfigError, "momentum must be in [0, 1)");
        require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, Errc::ConfigError,
                "Adam betas must be in [0, 1)");
        require(eps >= 0.0, Errc::ConfigError, "eps must be >= 0");
    }

private:
    static OptimizerConfig with(Algorithm a, double lr, double eps) {
        OptimizerConfig c;
        c.algorithm = a;
        c.learning_rate = lr;
        c.eps = eps;
        return c;
    }
};

/// η_t. Cosine annealing: η(1 + cos(πt/T))/2, reaching 0 at t = T.
inline double schedule_lr(const OptimizerConfig& cfg, std::size_t t) {
    if (cfg.schedule == Schedule::Constant) return cfg.learning_rate;
    require(cfg.total_steps > 0, Errc::StepOutOfRange, "cosine schedule: T must be > 0");
    require(t <= cfg.total_steps, Errc::StepOutOfRange,
            "cosine schedule: step " + std::to_string(t) + " > T = " + std::to_string(cfg.total_steps));
    const double frac = static_cast<double>(t) / static_cast<double>(cfg.total_steps);
    return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * frac));
}

struct OptimizerState {
    Vector theta;
    std::size_t t = 0; // steps taken
    Vector s;          // Adagrad: Σ g²
    Vector m, v;       // Adam moments
    Vector u;          // momentum velocity

    static OptimizerState init(Vector theta0, Algorithm a) {
        OptimizerState st;
        const std::size_t d = theta0.size();
        st.theta = std::move(theta0);
        switch (a) {
        case Algorithm::Sgd: break;
        case Algorithm::SgdMomentum: st.u.assign(d, 0.0); break;
        case Algorithm::Adagrad: st.s.assign(d, 0.0); break;
        case Algorithm::Adam:
            st.m.assign(d, 0.0);
            st.v.assign(d, 0.0);
            break;
        }
        return st;
    }
};

/// In-place update θ_{t+1} from θ_t and g_t with step size η_t.
inline void advance(OptimizerState& st, std::span<const double> g, const OptimizerConfig& cfg) {
    const std::size_t d = st.theta.size();
    require(g.size() == d, Errc::DimMismatch, "step: gradient dimension mismatch");
    require(all_finite(g), Errc::NonFiniteGradient, "step: gradient has NaN/Inf");
    const double lr = schedule_lr(cfg, st.t);
    ++st.t;
    switch (cfg.algorithm) {
    case Algorithm::Sgd:
        for (std::size_t i = 0; i < d; ++i) st.theta[i] -= lr * g[i];
        break;
    case Algorithm::SgdMomentum:
        require(st.u.size() == d, Errc::DimMismatch, "step: momentum buffer missing");
        for (std::size_t i = 0; i < d; ++i) {
            st.u[i] = cfg.momentum * st.u[i] + g[i];
            st.theta[i] -= lr * st.u[i];
        }
        break;
    case Algorithm::Adagrad:
        require(st.s.size() == d, Errc::DimMismatch, "step: Adagrad accumulator missing");
        for (std::size_t i = 0; i < d; ++i) {
            st.s[i] += g[i] * g[i];
            const double denom = std::sqrt(st.s[i]) + cfg.eps;
            if (denom > 0.0) st.theta[i] -= lr * g[i] / denom; // denom == 0 only when every g_i so far was 0
        }
        break;
    case Algorithm::Adam: {
        require(st.m.size() == d && st.v.size() == d, Errc::DimMismatch, "step: Adam moments missing");
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
        for (std::size_t i = 0; i < d; ++i) {
            st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
            st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = st.m[i] / c1;
            const double denom = std::sqrt(st.v[i] / c2) + cfg.eps;
            if (denom > 0.0) st.theta[i] -= lr * mhat / denom;
        }
        break;
    }
    }
}

inline OptimizerState step(OptimizerState state, std::span<const double> g, const OptimizerConfig& cfg) {
    advance(state, g, cfg);
    return state;
}

// ---------------------------------------------------------------------------

enum class RunStatus : std::uint8_t { Converged, MaxIters, Diverged, Failed };

inline constexpr std::string_view status_name(RunStatus s) noexcept {
    switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::MaxIters: return "max_iters";
    case RunStatus::Diverged: return "diverged";
    case RunStatus::Failed: return "failed";
    }
    return "unknown";
}

inline RunStatus parse_status(std::string_view s) {
    for (auto k : {RunStatus::Converged, RunStatus::MaxIters, RunStatus::Diverged, RunStatus::Failed})
        if (status_name(k) == s) return k;
    fail(Errc::ParseError, "unknown run status '" + std::string(s) + "'");
}

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Evaluation {
    double val_loss = kNaN;
    double val_acc = kNaN;
};

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = kNaN;
    double val_loss = kNaN;
    double val_acc = kNaN;
    double grad_l1 = kNaN;
    double grad_l2 = kNaN;
    double lr = kNaN; // η_t at the next step
};

struct RunRecord {
    std::vector<EpochRow> rows;
    RunStatus status = RunStatus::MaxIters;
    std::uint64_t seed = 0;
    OptimizerConfig config;
    Vector final_theta; // in the coordinates of the optimized objective
    std::size_t steps = 0;
};

/// Maps an iterate or gradient of the optimized objective into the
/// coordinates where metrics are reported (θ = Vθ̃, ∇f = V∇f̃).
using CoordinateMap = std::function<Vector(std::span<const double>)>;
/// Receives the iterate in reporting coordinates.
using EvalHook = std::function<Evaluation(std::span<const double>)>;

struct RunOptions {
    std::size_t epochs = 1;      // stochastic runs only; deterministic runs use cfg.max_iters
    std::size_t batch_size = 0;  // 0 = full-batch deterministic gradients
    std::uint64_t seed = 0;      // batch shuffling
    std::size_t record_every = 1;
    CoordinateMap to_report;     // identity when empty
    EvalHook eval;
};

namespace detail {

inline EpochRow make_row(std::size_t epoch, const ValueGrad& vg, const RunOptions& opts, std::span<const double> theta,
                         double lr) {
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = vg.value;
    if (opts.to_report) {
        const Vector g = opts.to_report(vg.gradient);
        row.grad_l1 = norm1(g);
        row.grad_l2 = norm2(g);
    } else {
        row.grad_l1 = norm1(vg.gradient);
        row.grad_l2 = norm2(vg.gradient);
    }
    if (opts.eval) {
        const Evaluation e = opts.to_report ? opts.eval(opts.to_report(theta)) : opts.eval(theta);
        row.val_loss = e.val_loss;
        row.val_acc = e.val_acc;
    }
    row.lr = lr;
    return row;
}

inline bool finite_value_grad(const ValueGrad& vg) { return std::isfinite(vg.value) && all_finite(vg.gradient); }

} // namespace detail

/// Optimizes f from θ₀.
///
/// Deterministic mode (batch_size == 0): up to cfg.max_iters full-gradient steps,
/// stopping as soon as ‖∇f‖₂ < grad_tol; one row per iteration.
/// Stochastic mode: `epochs` passes over a seeded permutation of the data
/// in minibatches; the full gradient is evaluated once per epoch for the
/// row and the tolerance check.
///
/// Non-finite losses or gradients end the run with status Diverged.
inline RunRecord run(const Objective& f, OptimizerConfig cfg, Vector theta0, const RunOptions& opts) {
    cfg.validate();
    check_dim(theta0, f.dim(), "run");
    require(opts.record_every >= 1, Errc::ConfigError, "run: record_every must be >= 1");

    const bool stochastic = opts.batch_size > 0;
    const std::size_t n = f.sample_count();
    if (stochastic) {
        require(n > 0, Errc::ConfigError, "run: minibatches need a data-backed objective");
        require(opts.batch_size <= n, Errc::ConfigError, "run: batch size exceeds sample count");
    }
    const std::size_t steps_per_epoch = stochastic ? (n + opts.batch_size - 1) / opts.batch_size : 1;
    if (cfg.total_steps == 0)
        cfg.total_steps = std::max<std::size_t>(1, stochastic ? opts.epochs * steps_per_epoch : cfg.max_iters);

    RunRecord rec;
    rec.seed = opts.seed;
    rec.config = cfg;
    OptimizerState st = OptimizerState::init(std::move(theta0), cfg.algorithm);
    auto lr_now = [&] { return st.t <= cfg.total_steps ? schedule_lr(cfg, st.t) : 0.0; };

    auto record = [&](std::size_t epoch, const ValueGrad& vg, bool force) {
        if (force || epoch % opts.record_every == 0) rec.rows.push_back(detail::make_row(epoch, vg, opts, st.theta, lr_now()));
    };
    auto finish = [&](RunStatus s) {
        rec.status = s;
        rec.steps = st.t;
        rec.final_theta = std::move(st.theta);
        return std::move(rec);
    };

    ValueGrad vg = f.value_grad(st.theta);
    if (!detail::finite_value_grad(vg)) {
        record(0, vg, true);
        return finish(RunStatus::Diverged);
    }

    if (!stochastic) {
        for (std::size_t it = 0;; ++it) {
            const bool converged = cfg.grad_tol > 0.0 && norm2(vg.gradient) < cfg.grad_tol;
            const bool last = converged || it == cfg.max_iters;
            record(it, vg, last);
            if (converged) return finish(RunStatus::Converged);
            if (last) return finish(RunStatus::MaxIters);
            advance(st, vg.gradient, cfg);
            vg = f.value_grad(st.theta);
            if (!detail::finite_value_grad(vg)) {
                record(it + 1, vg, true);
                return finish(RunStatus::Diverged);
            }
        }
    }

    std::vector<std::size_t> perm = all_indices(n);
    record(0, vg, true);
    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        Rng rng(derive_seed(opts.seed, {epoch}));
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t start = 0; start < n; start += opts.batch_size) {
            const std::size_t stop = std::min(n, start + opts.batch_size);
            const ValueGrad bg = f.batch_value_grad(st.theta, std::span(perm).subspan(start, stop - start));
            if (!all_finite(bg.gradient)) {
                vg = f.value_grad(st.theta);
                record(epoch, vg, true);
                return finish(RunStatus::Diverged);
            }
            advance(st, bg.gradient, cfg);
        }
        vg = f.value_grad(st.theta);
        const bool diverged = !detail::finite_value_grad(vg);
        const bool converged = !diverged && cfg.grad_tol > 0.0 && norm2(vg.gradient) < cfg.grad_tol;
        record(epoch, vg, diverged || converged || epoch == opts.epochs);
        if (diverged) return finish(RunStatus::Diverged);
        if (converged) return finish(RunStatus::Converged);
    }
    return finish(RunStatus::MaxIters);
}

} // namespace egoprep

#pragma once

// Experiment orchestration: instance generation, EGOP estimation, paired
// original-vs-reparameterized runs over a learning-rate grid, aggregation
// across trials and CSV/JSON emission.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "egoprep/datasets.hpp"
#include "egoprep/egop.hpp"
#include "egoprep/error.hpp"
#include "egoprep/linalg.hpp"
#include "egoprep/objectives.hpp"
#include "egoprep/optimizers.hpp"
#include "egoprep/rng.hpp"
#include "egoprep/sampling.hpp"
#include "egoprep/version.hpp"

namespace egoprep {

// ---------------------------------------------------------------------------
// Enumerations and their names

enum class CoordSystem : std::uint8_t { Original, Reparameterized };
enum class ObjectiveKind : std::uint8_t { LeastSquares, LogSumExp, Logistic, DeepLinear, ReluMlp };
enum class BasisKind : std::uint8_t { Egop, BlockEgop, Partial, Identity };
enum class SelectCriterion : std::uint8_t { MinMedianValLoss, MinMedianTrainLoss, MaxMedianValAcc };

namespace detail {

template <class E, std::size_t N>
struct NameTable {
    std::array<std::pair<E, std::string_view>, N> entries;

    constexpr std::string_view name(E e) const {
        for (const auto& [k, v] : entries)
            if (k == e) return v;
        return "unknown";
    }

    E parse(std::string_view s, const char* what) const {
        for (const auto& [k, v] : entries)
            if (v == s) return k;
        fail(Errc::ConfigError, "unknown " + std::string(what) + " '" + std::string(s) + "'");
    }
};

inline constexpr NameTable<CoordSystem, 2> kSystemNames{
    {{{CoordSystem::Original, "original"}, {CoordSystem::Reparameterized, "reparameterized"}}}};
inline constexpr NameTable<ObjectiveKind, 5> kObjectiveNames{{{{ObjectiveKind::LeastSquares, "least_squares"},
                                                               {ObjectiveKind::LogSumExp, "log_sum_exp"},
                                                               {ObjectiveKind::Logistic, "logistic"},
                                                               {ObjectiveKind::DeepLinear, "deep_linear"},
                                                               {ObjectiveKind::ReluMlp, "relu_mlp"}}}};
inline constexpr NameTable<BasisKind, 4> kBasisNames{{{{BasisKind::Egop, "egop"},
                                                       {BasisKind::BlockEgop, "block_egop"},
                                                       {BasisKind::Partial, "partial"},
                                                       {BasisKind::Identity, "identity"}}}};
inline constexpr NameTable<SelectCriterion, 3> kCriterionNames{
    {{{SelectCriterion::MinMedianValLoss, "min_median_val_loss"},
      {SelectCriterion::MinMedianTrainLoss, "min_median_train_loss"},
      {SelectCriterion::MaxMedianValAcc, "max_median_val_acc"}}}};

} // namespace detail

inline constexpr std::string_view system_name(CoordSystem s) { return detail::kSystemNames.name(s); }
inline CoordSystem parse_system(std::string_view s) { return detail::kSystemNames.parse(s, "coordinate system"); }
inline constexpr std::string_view objective_name(ObjectiveKind k) { return detail::kObjectiveNames.name(k); }
inline ObjectiveKind parse_objective(std::string_view s) { return detail::kObjectiveNames.parse(s, "objective"); }
inline constexpr std::string_view basis_name(BasisKind k) { return detail::kBasisNames.name(k); }
inline BasisKind parse_basis(std::string_view s) { return detail::kBasisNames.parse(s, "basis"); }
inline constexpr std::string_view criterion_name(SelectCriterion c) { return detail::kCriterionNames.name(c); }
inline SelectCriterion parse_criterion(std::string_view s) { return detail::kCriterionNames.parse(s, "criterion"); }

inline bool is_convex(ObjectiveKind k) {
    return k == ObjectiveKind::LeastSquares || k == ObjectiveKind::LogSumExp || k == ObjectiveKind::Logistic;
}

// ---------------------------------------------------------------------------
// Learning-rate grids

/// Doubling grid between two powers of ten: {1, 2, 4, 8}·10^k for each
/// decade in [lo, hi), closed with hi.
inline std::vector<double> lr_grid(double lo, double hi) {
    require(std::isfinite(lo) && std::isfinite(hi) && lo > 0.0 && lo <= hi, Errc::BadBounds,
            "lr_grid: need 0 < lo <= hi");
    const double klo = std::log10(lo);
    const double khi = std::log10(hi);
    require(std::abs(klo - std::round(klo)) < 1e-9 && std::abs(khi - std::round(khi)) < 1e-9, Errc::BadBounds,
            "lr_grid: bounds must be powers of 10");
    const int a = static_cast<int>(std::lround(klo));
    const int b = static_cast<int>(std::lround(khi));
    std::vector<double> out;
    for (int k = a; k < b; ++k)
        for (double m : {1.0, 2.0, 4.0, 8.0}) out.push_back(m * std::pow(10.0, k));
    out.push_back(std::pow(10.0, b));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Powers of ten from lo to hi inclusive.
inline std::vector<double> coarse_grid(double lo, double hi) {
    const auto fine = lr_grid(lo, hi);
    std::vector<double> out;
    for (double x : fine) {
        const double k = std::log10(x);
        if (std::abs(k - std::round(k)) < 1e-9) out.push_back(x);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
    ObjectiveKind objective = ObjectiveKind::LeastSquares;
    std::size_t n = 100; // samples (relu_mlp: synthetic sample count when no data files)
    std::size_t d = 100; // parameters (convex objectives only)
    double alpha = 2.0;  // singular value decay σ_k = k^{−α}
    std::vector<std::size_t> hidden{32};
    std::vector<std::string> data; // optdigits files (relu_mlp); empty selects synthetic data
    std::array<std::size_t, 3> split{0, 0, 0}; // all zero: objective default
    std::uint64_t split_seed = 0;

    std::optional<DistKind> distribution; // empty: objective default
    double sigma = 1.0;
    std::size_t egop_samples = 0;                // 0: objective default
    std::optional<std::size_t> egop_batch_size;  // empty: training batch size; 0: full batch
    BasisKind basis = BasisKind::Egop;
    std::size_t partial_k = 0;
    bool include_bias = false;
    bool first_layer_only = false;

    std::vector<Algorithm> algorithms{Algorithm::Adagrad, Algorithm::Adam};
    std::vector<CoordSystem> systems{CoordSystem::Original, CoordSystem::Reparameterized};
    std::vector<double> learning_rates; // explicit grid; empty: lr_grid(lr_range)
    std::array<double, 2> lr_range{1e-3, 1e2};
    bool two_stage = false;

    std::size_t epochs = 1000; // iterations for full-batch runs
    std::size_t batch_size = 0;
    double grad_tol = 1e-8;
    Schedule schedule = Schedule::Constant;

    std::size_t trials = 5;
    std::uint64_t seed = 0;
    SelectCriterion criterion = SelectCriterion::MinMedianTrainLoss;
    CoordSystem select_system = CoordSystem::Original;
    unsigned threads = 1;
    std::string out = "out";

    /// Defaults for each objective's experimental protocol.
    static ExperimentConfig preset(ObjectiveKind k) {
        ExperimentConfig c;
        c.objective = k;
        switch (k) {
        case ObjectiveKind::LeastSquares:
        case ObjectiveKind::LogSumExp: break;
        case ObjectiveKind::Logistic: c.d = 3; break;
        case ObjectiveKind::DeepLinear:
            c.n = 20000;
            c.epochs = 1000;
            c.batch_size = 500;
            c.grad_tol = 0.0;
            c.schedule = Schedule::CosineAnneal;
            c.trials = 10;
            c.criterion = SelectCriterion::MinMedianValLoss;
            break;
        case ObjectiveKind::ReluMlp:
            c.n = 5620;
            c.epochs = 200;
            c.batch_size = 300;
            c.grad_tol = 0.0;
            c.basis = BasisKind::BlockEgop;
            c.trials = 10;
            c.criterion = SelectCriterion::MaxMedianValAcc;
            break;
        }
        return c;
    }

    void validate() const {
        require(n >= 1 && d >= 1, Errc::ConfigError, "n and d must be >= 1");
        require(alpha >= 0.0, Errc::ConfigError, "alpha must be >= 0");
        require(sigma > 0.0, Errc::ConfigError, "sigma must be > 0");
        require(!algorithms.empty(), Errc::ConfigError, "no algorithms configured");
        require(!systems.empty(), Errc::ConfigError, "no coordinate systems configured");
        require(trials >= 1, Errc::ConfigError, "trials must be >= 1");
        require(epochs >= 1, Errc::ConfigError, "epochs must be >= 1");
        require(threads >= 1, Errc::ConfigError, "threads must be >= 1");
        for (double lr : learning_rates) require(lr > 0.0 && std::isfinite(lr), Errc::ConfigError, "bad learning rate");
        if (learning_rates.empty()) (void)lr_grid(lr_range[0], lr_range[1]);
        if (is_convex(objective)) {
            require(basis != BasisKind::BlockEgop, Errc::ConfigError, "block_egop needs a network objective");
            require(batch_size == 0 || batch_size <= n, Errc::ConfigError, "batch size exceeds n");
        } else {
            require(batch_size >= 1, Errc::ConfigError, "network objectives train on minibatches");
        }
        if (basis == BasisKind::Partial) require(partial_k >= 1, Errc::ConfigError, "partial basis needs partial_k >= 1");
    }
};

// Resolved defaults --------------------------------------------------------

inline std::vector<LayerShape> mlp_layers(const ExperimentConfig& c, std::size_t in, std::size_t classes) {
    std::vector<LayerShape> layers;
    std::size_t prev = in;
    for (std::size_t h : c.hidden) {
        layers.push_back({prev, h, true});
        prev = h;
    }
    layers.push_back({prev, classes, true});
    return layers;
}

inline DistKind resolved_distribution(const ExperimentConfig& c) {
    if (c.distribution) return *c.distribution;
    switch (c.objective) {
    case ObjectiveKind::DeepLinear:
    case ObjectiveKind::ReluMlp: return DistKind::GlorotNormalWithUniformBias;
    default: return DistKind::StandardGaussian;
    }
}

/// M: 5d for convex objectives, 2d for global network bases, d for block bases.
inline std::size_t resolved_egop_samples(const ExperimentConfig& c, std::size_t dim) {
    if (c.egop_samples > 0) return c.egop_samples;
    if (is_convex(c.objective)) return 5 * dim;
    return c.basis == BasisKind::BlockEgop ? dim : 2 * dim;
}

inline std::size_t resolved_egop_batch(const ExperimentConfig& c) {
    return c.egop_batch_size ? *c.egop_batch_size : c.batch_size;
}

inline std::vector<double> resolved_lr_grid(const ExperimentConfig& c) {
    return c.learning_rates.empty() ? lr_grid(c.lr_range[0], c.lr_range[1]) : c.learning_rates;
}

/// Split sizes; zeros select 10:4:6 (linear nets) or 3823:598:1199 (digits).
inline SplitSpec resolved_split(const ExperimentConfig& c, std::size_t n) {
    if (c.split[0] + c.split[1] + c.split[2] > 0) return {c.split[0], c.split[1], c.split[2], c.split_seed};
    if (c.objective == ObjectiveKind::DeepLinear) return linear_net_split(n, c.split_seed);
    if (n == 5620) return optdigits_split(c.split_seed);
    const std::size_t train = n * 3823 / 5620;
    const std::size_t val = n * 598 / 5620;
    return {train, val, n - train - val, c.split_seed};
}

// JSON ---------------------------------------------------------------------

namespace detail {

inline const std::set<std::string>& config_keys() {
    static const std::set<std::string> keys{
        "objective",  "n",           "d",          "alpha",        "hidden",          "data",
        "split",      "split_seed",  "distribution", "sigma",      "egop_samples",    "egop_batch_size",
        "basis",      "partial_k",   "include_bias", "first_layer_only", "algorithms", "systems",
        "learning_rates", "lr_range", "two_stage", "epochs",     "batch_size",      "grad_tol",
        "schedule",   "trials",      "seed",       "criterion",    "select_system",   "threads",
        "out"};
    return keys;
}

template <class T>
T get_as(const nlohmann::json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::ConfigError, std::string("config field '") + key + "': " + e.what());
    }
}

} // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["objective"] = objective_name(c.objective);
    j["n"] = c.n;
    j["d"] = c.d;
    j["alpha"] = c.alpha;
    j["hidden"] = c.hidden;
    j["data"] = c.data;
    j["split"] = c.split;
    j["split_seed"] = c.split_seed;
    j["distribution"] = c.distribution ? nlohmann::json(dist_kind_name(*c.distribution)) : nlohmann::json(nullptr);
    j["sigma"] = c.sigma;
    j["egop_samples"] = c.egop_samples;
    j["egop_batch_size"] = c.egop_batch_size ? nlohmann::json(*c.egop_batch_size) : nlohmann::json(nullptr);
    j["basis"] = basis_name(c.basis);
    j["partial_k"] = c.partial_k;
    j["include_bias"] = c.include_bias;
    j["first_layer_only"] = c.first_layer_only;
    auto& algos = j["algorithms"] = nlohmann::json::array();
    for (auto a : c.algorithms) algos.push_back(algorithm_name(a));
    auto& systems = j["systems"] = nlohmann::json::array();
    for (auto s : c.systems) systems.push_back(system_name(s));
    j["learning_rates"] = c.learning_rates;
    j["lr_range"] = c.lr_range;
    j["two_stage"] = c.two_stage;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["grad_tol"] = c.grad_tol;
    j["schedule"] = schedule_name(c.schedule);
    j["trials"] = c.trials;
    j["seed"] = c.seed;
    j["criterion"] = criterion_name(c.criterion);
    j["select_system"] = system_name(c.select_system);
    j["threads"] = c.threads;
    j["out"] = c.out;
    return j;
}

/// Starts from the preset of the "objective" field (least squares when
/// absent) and applies every other field on top. Unknown keys are errors.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    require(j.is_object(), Errc::ConfigError, "config must be a JSON object");
    for (const auto& [key, _] : j.items())
        require(detail::config_keys().count(key) > 0, Errc::ConfigError, "unknown config key '" + key + "'");
    using detail::get_as;
    ExperimentConfig c = ExperimentConfig::preset(
        j.contains("objective") ? parse_objective(get_as<std::string>(j, "objective")) : ObjectiveKind::LeastSquares);
    auto has = [&](const char* k) { return j.contains(k); };
    if (has("n")) c.n = get_as<std::size_t>(j, "n");
    if (has("d")) c.d = get_as<std::size_t>(j, "d");
    if (has("alpha")) c.alpha = get_as<double>(j, "alpha");
    if (has("hidden")) c.hidden = get_as<std::vector<std::size_t>>(j, "hidden");
    if (has("data")) c.data = get_as<std::vector<std::string>>(j, "data");
    if (has("split")) c.split = get_as<std::array<std::size_t, 3>>(j, "split");
    if (has("split_seed")) c.split_seed = get_as<std::uint64_t>(j, "split_seed");
    if (has("distribution")) {
        if (j.at("distribution").is_null()) c.distribution.reset();
        else c.distribution = parse_dist_kind(get_as<std::string>(j, "distribution"));
    }
    if (has("sigma")) c.sigma = get_as<double>(j, "sigma");
    if (has("egop_samples")) c.egop_samples = get_as<std::size_t>(j, "egop_samples");
    if (has("egop_batch_size")) {
        if (j.at("egop_batch_size").is_null()) c.egop_batch_size.reset();
        else c.egop_batch_size = get_as<std::size_t>(j, "egop_batch_size");
    }
    if (has("basis")) c.basis = parse_basis(get_as<std::string>(j, "basis"));
    if (has("partial_k")) c.partial_k = get_as<std::size_t>(j, "partial_k");
    if (has("include_bias")) c.include_bias = get_as<bool>(j, "include_bias");
    if (has("first_layer_only")) c.first_layer_only = get_as<bool>(j, "first_layer_only");
    if (has("algorithms")) {
        c.algorithms.clear();
        for (const auto& s : get_as<std::vector<std::string>>(j, "algorithms")) c.algorithms.push_back(parse_algorithm(s));
    }
    if (has("systems")) {
        c.systems.clear();
        for (const auto& s : get_as<std::vector<std::string>>(j, "systems")) c.systems.push_back(parse_system(s));
    }
    if (has("learning_rates")) c.learning_rates = get_as<std::vector<double>>(j, "learning_rates");
    if (has("lr_range")) c.lr_range = get_as<std::array<double, 2>>(j, "lr_range");
    if (has("two_stage")) c.two_stage = get_as<bool>(j, "two_stage");
    if (has("epochs")) c.epochs = get_as<std::size_t>(j, "epochs");
    if (has("batch_size")) c.batch_size = get_as<std::size_t>(j, "batch_size");
    if (has("grad_tol")) c.grad_tol = get_as<double>(j, "grad_tol");
    if (has("schedule")) c.schedule = parse_schedule(get_as<std::string>(j, "schedule"));
    if (has("trials")) c.trials = get_as<std::size_t>(j, "trials");
    if (has("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
    if (has("criterion")) c.criterion = parse_criterion(get_as<std::string>(j, "criterion"));
    if (has("select_system")) c.select_system = parse_system(get_as<std::string>(j, "select_system"));
    if (has("threads")) c.threads = get_as<unsigned>(j, "threads");
    if (has("out")) c.out = get_as<std::string>(j, "out");
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), Errc::IoError, "cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::ConfigError, path + ": " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Instances

/// One trial's objective with its held-out data and sampling distribution.
struct Instance {
    ObjectivePtr train;
    ObjectivePtr validation;                        // null for convex objectives
    std::shared_ptr<const ReluMlp> validation_mlp;  // classification accuracy
    SamplingDistribution rho;
    std::vector<LayerShape> layers;                 // networks only
    std::optional<LsqProblem> lsq;                  // least squares only

    std::size_t dim() const { return train->dim(); }
};

/// Data shared by every trial (relu_mlp only): the loaded or synthetic
/// dataset, split once.
struct SharedData {
    std::optional<DatasetSplit> digits;
};

inline SharedData prepare_shared(const ExperimentConfig& c) {
    SharedData s;
    if (c.objective != ObjectiveKind::ReluMlp) return s;
    LabeledDataset all;
    if (c.data.empty()) {
        all = gen_classification(c.n, kOptdigitsFeatures, kOptdigitsClasses, c.alpha,
                                 derive_seed(c.seed, {seed_role::instance}));
    } else {
        all = load_optdigits(c.data.front());
        for (std::size_t i = 1; i < c.data.size(); ++i) all = concat(all, load_optdigits(c.data[i]));
    }
    s.digits = split(all, resolved_split(c, all.size()));
    require(s.digits->train.size() >= 1, Errc::ConfigError, "relu_mlp: empty training split");
    return s;
}

inline SamplingDistribution make_distribution(const ExperimentConfig& c, const std::vector<LayerShape>& layers) {
    switch (resolved_distribution(c)) {
    case DistKind::StandardGaussian: return SamplingDistribution::standard_gaussian();
    case DistKind::ScaledGaussian: return SamplingDistribution::scaled_gaussian(c.sigma);
    case DistKind::GlorotNormalWithUniformBias:
        require(!layers.empty(), Errc::ConfigError, "glorot_normal needs a network objective");
        return SamplingDistribution::glorot(layers);
    case DistKind::DefaultUniformInit:
        require(!layers.empty(), Errc::ConfigError, "default_uniform needs a network objective");
        return SamplingDistribution::default_uniform(layers);
    }
    fail(Errc::ConfigError, "unknown distribution");
}

inline Instance build_instance(const ExperimentConfig& c, std::uint64_t trial_seed, const SharedData& shared) {
    Instance inst;
    const std::uint64_t iseed = derive_seed(trial_seed, {seed_role::instance});
    switch (c.objective) {
    case ObjectiveKind::LeastSquares: {
        inst.lsq = make_lsq(gen_regression(c.n, c.d, c.alpha, iseed));
        inst.train = std::make_shared<const LeastSquares>(*inst.lsq);
        break;
    }
    case ObjectiveKind::LogSumExp:
        inst.train = std::make_shared<const LogSumExp>(make_lse(gen_regression(c.n, c.d, c.alpha, iseed)));
        break;
    case ObjectiveKind::Logistic:
        inst.train = std::make_shared<const Logistic>(make_logistic(gen_regression(c.n, c.d, c.alpha, iseed), iseed));
        break;
    case ObjectiveKind::DeepLinear: {
        const LinearNetData data = gen_linear_net_data(c.n, iseed);
        const SplitIndices idx = split_indices(c.n, resolved_split(c, c.n));
        require(!idx.train.empty() && !idx.validation.empty(), Errc::ConfigError,
                "deep_linear: train and validation splits must be non-empty");
        inst.layers = DeepLinearNet::default_layers();
        inst.train = std::make_shared<const DeepLinearNet>(inst.layers, detail::gather_columns(data.a, idx.train),
                                                           detail::gather_columns(data.y, idx.train));
        inst.validation = std::make_shared<const DeepLinearNet>(
            inst.layers, detail::gather_columns(data.a, idx.validation), detail::gather_columns(data.y, idx.validation));
        break;
    }
    case ObjectiveKind::ReluMlp: {
        require(shared.digits.has_value(), Errc::ConfigError, "relu_mlp: shared data not prepared");
        const DatasetSplit& ds = *shared.digits;
        inst.layers = mlp_layers(c, ds.train.features.cols(), static_cast<std::size_t>(ds.train.class_count));
        inst.train = std::make_shared<const ReluMlp>(inst.layers, ds.train.features, ds.train.labels);
        if (ds.validation.size() > 0) {
            inst.validation_mlp =
                std::make_shared<const ReluMlp>(inst.layers, ds.validation.features, ds.validation.labels);
            inst.validation = inst.validation_mlp;
        }
        break;
    }
    }
    inst.rho = make_distribution(c, inst.layers);
    return inst;
}

/// Block partition for network objectives: one block per weight matrix, or
/// only the first layer's block when first_layer_only is set.
inline BlockPartition config_blocks(const ExperimentConfig& c, const Instance& inst) {
    BlockPartition parts = layer_blocks(inst.layers, c.include_bias);
    if (c.first_layer_only) {
        parts.reparameterize.assign(parts.blocks.size(), false);
        parts.reparameterize.front() = true;
    }
    return parts;
}

/// The change of basis for one trial.
inline std::shared_ptr<const ReparamObjective> build_reparam(const ExperimentConfig& c, const Instance& inst,
                                                             std::uint64_t trial_seed) {
    const std::size_t d = inst.dim();
    if (c.basis == BasisKind::Identity) return reparameterize(inst.train, DenseMatrix::identity(d));
    EstimateOptions opts;
    opts.samples = resolved_egop_samples(c, d);
    opts.batch_size = resolved_egop_batch(c);
    opts.seed = derive_seed(trial_seed, {seed_role::egop});
    opts.keep_matrix = false;
    opts.threads = c.threads;
    if (c.basis == BasisKind::BlockEgop) {
        require(!inst.layers.empty(), Errc::ConfigError, "block_egop needs a network objective");
        const BlockPartition parts = config_blocks(c, inst);
        auto ests = estimate_block_egops(*inst.train, inst.rho, parts, opts);
        std::vector<DenseMatrix> bases;
        std::size_t next = 0;
        for (std::size_t b = 0; b < parts.blocks.size(); ++b) {
            if (parts.reparameterized(b)) bases.push_back(std::move(ests[next++].basis));
            else bases.push_back(DenseMatrix::identity(parts.blocks[b].size()));
        }
        return block_reparameterize(inst.train, parts, std::move(bases));
    }
    EgopEstimate est = estimate_egop(*inst.train, inst.rho, opts);
    if (c.basis == BasisKind::Partial) {
        require(c.partial_k <= d, Errc::ConfigError, "partial_k exceeds dimension");
        return reparameterize(inst.train, partial_basis(est, c.partial_k, derive_seed(trial_seed, {seed_role::completion})));
    }
    return reparameterize(inst.train, std::move(est.basis));
}

// ---------------------------------------------------------------------------
// Paired runs

struct CellResult {
    std::size_t trial = 0;
    Algorithm algo = Algorithm::Sgd;
    CoordSystem system = CoordSystem::Original;
    double lr = 0.0;
    RunStatus status = RunStatus::Failed;
    std::vector<EpochRow> rows;
    Vector final_theta; // original coordinates
    std::string error;
};

/// Per-run summary metrics. Diverged and failed runs score +inf on losses
/// and gradient norms. Without validation data the validation metric is the
/// final training loss.
struct RunMetrics {
    double final_train_loss = kNaN;
    double min_val_loss = kNaN;
    double max_val_acc = kNaN;
    double final_grad_l1 = kNaN;
    double final_grad_l2 = kNaN;
};

inline RunMetrics run_metrics(RunStatus status, std::span<const EpochRow> rows) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    RunMetrics m;
    if (status == RunStatus::Diverged || status == RunStatus::Failed || rows.empty()) {
        m.final_train_loss = m.min_val_loss = m.final_grad_l1 = m.final_grad_l2 = inf;
    } else {
        const EpochRow& last = rows.back();
        m.final_train_loss = last.train_loss;
        m.final_grad_l1 = last.grad_l1;
        m.final_grad_l2 = last.grad_l2;
        bool any_val = false;
        double best = inf;
        for (const auto& r : rows)
            if (!std::isnan(r.val_loss)) {
                any_val = true;
                best = std::min(best, r.val_loss);
            }
        m.min_val_loss = any_val ? best : m.final_train_loss;
    }
    bool any_acc = false;
    double acc = -inf;
    for (const auto& r : rows)
        if (std::isfinite(r.val_acc)) {
            any_acc = true;
            acc = std::max(acc, r.val_acc);
        }
    m.max_val_acc = any_acc ? acc : (status == RunStatus::Diverged ? 0.0 : kNaN);
    return m;
}

inline RunMetrics run_metrics(const CellResult& r) { return run_metrics(r.status, r.rows); }

using CellSink = std::function<void(const CellResult&)>;
/// Per-algorithm grid overrides.
using LrGrids = std::map<Algorithm, std::vector<double>>;

struct Quartiles {
    double p25 = kNaN;
    double median = kNaN;
    double p75 = kNaN;
};

/// Linear-interpolation quantile of the non-NaN values; NaN when none.
inline double quantile(std::vector<double> xs, double q) {
    xs.erase(std::remove_if(xs.begin(), xs.end(), [](double x) { return std::isnan(x); }), xs.end());
    if (xs.empty()) return kNaN;
    std::sort(xs.begin(), xs.end());
    const double pos = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0 || xs[lo] == xs[hi]) return xs[lo];
    return xs[lo] + (xs[hi] - xs[lo]) * frac;
}

inline Quartiles quartiles(const std::vector<double>& xs) {
    return {quantile(xs, 0.25), quantile(xs, 0.5), quantile(xs, 0.75)};
}

struct Aggregate {
    Algorithm algo = Algorithm::Sgd;
    CoordSystem system = CoordSystem::Original;
    double lr = 0.0;
    std::size_t trials = 0;
    Quartiles final_train_loss, min_val_loss, max_val_acc, final_grad_l1, final_grad_l2;
};

struct SweepResult {
    ExperimentConfig config;
    std::vector<CellResult> runs;
    std::vector<Aggregate> aggregates;
};

/// Groups runs by (algorithm, system, lr) and takes quartiles across trials.
inline std::vector<Aggregate> aggregate(std::span<const CellResult> runs) {
    using Key = std::tuple<Algorithm, CoordSystem, double>;
    std::map<Key, std::vector<RunMetrics>> groups;
    for (const auto& r : runs) groups[{r.algo, r.system, r.lr}].push_back(run_metrics(r));
    std::vector<Aggregate> out;
    for (const auto& [key, ms] : groups) {
        Aggregate a;
        std::tie(a.algo, a.system, a.lr) = key;
        a.trials = ms.size();
        auto col = [&](double RunMetrics::*f) {
            std::vector<double> xs;
            for (const auto& m : ms) xs.push_back(m.*f);
            return quartiles(xs);
        };
        a.final_train_loss = col(&RunMetrics::final_train_loss);
        a.min_val_loss = col(&RunMetrics::min_val_loss);
        a.max_val_acc = col(&RunMetrics::max_val_acc);
        a.final_grad_l1 = col(&RunMetrics::final_grad_l1);
        a.final_grad_l2 = col(&RunMetrics::final_grad_l2);
        out.push_back(a);
    }
    return out;
}

namespace detail {

inline Vector identity_map(std::span<const double> x) { return Vector(x.begin(), x.end()); }

inline CellResult run_cell(const ExperimentConfig& c, const Instance& inst, const ReparamObjective* reparam,
                           const Vector& theta0, std::size_t trial, std::uint64_t trial_seed, Algorithm algo,
                           double lr, CoordSystem system) {
    CellResult cell;
    cell.trial = trial;
    cell.algo = algo;
    cell.system = system;
    cell.lr = lr;
    try {
        OptimizerConfig oc = OptimizerConfig::make(algo, lr);
        oc.schedule = c.schedule;
        oc.max_iters = c.epochs;
        oc.grad_tol = c.grad_tol;
        RunOptions ro;
        ro.epochs = c.epochs;
        ro.batch_size = c.batch_size;
        ro.seed = derive_seed(trial_seed, {seed_role::batches});
        if (inst.validation) {
            const Objective* val = inst.validation.get();
            const ReluMlp* mlp = inst.validation_mlp.get();
            ro.eval = [val, mlp](std::span<const double> theta) {
                Evaluation e;
                e.val_loss = val->value(theta);
                if (mlp != nullptr) e.val_acc = mlp->accuracy(theta);
                return e;
            };
        }
        RunRecord rec;
        if (system == CoordSystem::Original) {
            rec = run(*inst.train, oc, theta0, ro);
            cell.final_theta = rec.final_theta;
        } else {
            require(reparam != nullptr, Errc::ConfigError, "reparameterized run without a basis");
            ro.to_report = [reparam](std::span<const double> x) { return reparam->to_original(x); };
            rec = run(*reparam, oc, reparam->to_reparam(theta0), ro);
            cell.final_theta = reparam->to_original(rec.final_theta);
        }
        cell.status = rec.status;
        cell.rows = std::move(rec.rows);
    } catch (const std::exception& e) {
        cell.status = RunStatus::Failed;
        cell.error = e.what();
        cell.rows.clear();
    }
    return cell;
}

template <class F>
void parallel_for(std::size_t count, unsigned threads, F&& body) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    for (unsigned t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) body(i);
        });
    for (auto& th : pool) th.join();
}

} // namespace detail

/// For each trial: build the instance, draw θ₀ ~ ρ, estimate the change of
/// basis, then run every (algorithm, lr, system) cell from paired starting
/// points θ₀ and Vᵀθ₀ with the same minibatch stream. Cells of one trial run
/// on up to cfg.threads workers; results reach `sink` in a fixed order.
inline SweepResult run_paired(const ExperimentConfig& cfg, const CellSink& sink = {}, const LrGrids& grids = {}) {
    cfg.validate();
    SweepResult out;
    out.config = cfg;
    const SharedData shared = prepare_shared(cfg);
    const bool need_reparam =
        std::find(cfg.systems.begin(), cfg.systems.end(), CoordSystem::Reparameterized) != cfg.systems.end();

    struct Cell {
        Algorithm algo;
        double lr;
        CoordSystem system;
    };
    std::vector<Cell> cells;
    for (Algorithm a : cfg.algorithms) {
        const auto it = grids.find(a);
        const std::vector<double> grid = it != grids.end() ? it->second : resolved_lr_grid(cfg);
        for (double lr : grid)
            for (CoordSystem s : cfg.systems) cells.push_back({a, lr, s});
    }

    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        const std::uint64_t trial_seed = derive_seed(cfg.seed, {trial});
        const Instance inst = build_instance(cfg, trial_seed, shared);
        const Vector theta0 = sample_params(inst.rho, inst.dim(), derive_seed(trial_seed, {seed_role::init}));
        std::shared_ptr<const ReparamObjective> reparam;
        std::string basis_error;
        if (need_reparam) {
            try {
                reparam = build_reparam(cfg, inst, trial_seed);
            } catch (const std::exception& e) {
                basis_error = e.what();
            }
        }
        std::vector<CellResult> results(cells.size());
        detail::parallel_for(cells.size(), cfg.threads, [&](std::size_t i) {
            const Cell& cl = cells[i];
            if (cl.system == CoordSystem::Reparameterized && !reparam) {
                results[i] = CellResult{trial, cl.algo, cl.system, cl.lr, RunStatus::Failed, {}, {}, basis_error};
                return;
            }
            results[i] = detail::run_cell(cfg, inst, reparam.get(), theta0, trial, trial_seed, cl.algo, cl.lr, cl.system);
        });
        for (auto& r : results) {
            if (sink) sink(r);
            out.runs.push_back(std::move(r));
        }
    }
    out.aggregates = aggregate(out.runs);
    return out;
}

// ---------------------------------------------------------------------------
// Learning-rate selection

inline double criterion_value(const Aggregate& a, SelectCriterion c) {
    switch (c) {
    case SelectCriterion::MinMedianValLoss: return a.min_val_loss.median;
    case SelectCriterion::MinMedianTrainLoss: return a.final_train_loss.median;
    case SelectCriterion::MaxMedianValAcc: return a.max_val_acc.median;
    }
    return kNaN;
}

/// Per algorithm, the lr whose median metric is best in `system`. Ties and
/// NaN medians resolve toward the smaller lr.
inline std::map<Algorithm, double> select_lr(std::span<const Aggregate> aggregates, SelectCriterion criterion,
                                             CoordSystem system) {
    std::map<Algorithm, std::pair<double, double>> best; // algo -> (lr, score)
    const bool maximize = criterion == SelectCriterion::MaxMedianValAcc;
    std::vector<const Aggregate*> rows;
    for (const auto& a : aggregates)
        if (a.system == system) rows.push_back(&a);
    std::sort(rows.begin(), rows.end(), [](const Aggregate* x, const Aggregate* y) { return x->lr < y->lr; });
    for (const Aggregate* a : rows) {
        double v = criterion_value(*a, criterion);
        if (std::isnan(v)) v = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
        auto it = best.find(a->algo);
        if (it == best.end()) {
            best[a->algo] = {a->lr, v};
        } else if (maximize ? v > it->second.second : v < it->second.second) {
            it->second = {a->lr, v};
        }
    }
    require(!best.empty(), Errc::EmptySweep,
            "select_lr: no results for system '" + std::string(system_name(system)) + "'");
    std::map<Algorithm, double> out;
    for (const auto& [a, p] : best) out[a] = p.first;
    return out;
}

inline std::map<Algorithm, double> select_lr(const SweepResult& s, SelectCriterion criterion, CoordSystem system) {
    return select_lr(s.aggregates, criterion, system);
}

struct TwoStageResult {
    SweepResult coarse;
    SweepResult refined;
    std::map<Algorithm, double> selected; // from the refined sweep
};

/// Powers of ten across lr_range, then a doubling grid over the decade on
/// each side of every algorithm's coarse winner (clipped to lr_range).
inline TwoStageResult two_stage_sweep(const ExperimentConfig& cfg, const CellSink& coarse_sink = {},
                                      const CellSink& refined_sink = {}) {
    TwoStageResult r;
    ExperimentConfig coarse = cfg;
    coarse.learning_rates = coarse_grid(cfg.lr_range[0], cfg.lr_range[1]);
    r.coarse = run_paired(coarse, coarse_sink);
    const auto winners = select_lr(r.coarse, cfg.criterion, cfg.select_system);
    LrGrids grids;
    for (const auto& [algo, lr] : winners)
        grids[algo] = lr_grid(std::max(cfg.lr_range[0], lr / 10.0), std::min(cfg.lr_range[1], lr * 10.0));
    ExperimentConfig refined = cfg;
    refined.learning_rates.clear();
    r.refined = run_paired(refined, refined_sink, grids);
    r.selected = select_lr(r.refined, cfg.criterion, cfg.select_system);
    return r;
}

// ---------------------------------------------------------------------------
// Emission
//
// runs.csv     trial,algo,system,lr,epoch,train_loss,val_loss,grad_l1,grad_l2,status
//              one row per recorded epoch; failed runs get a single epoch-0 row
// summary.csv  algo,system,lr,trials, then p25/median/p75 of final_train_loss,
//              min_val_loss, max_val_acc, final_grad_l1, final_grad_l2
// config.json  the exact config, resolved defaults and library version

inline constexpr std::string_view kRunsHeader = "trial,algo,system,lr,epoch,train_loss,val_loss,grad_l1,grad_l2,status";

inline std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void write_run_rows(std::ostream& out, const CellResult& r) {
    const std::string prefix = std::to_string(r.trial) + "," + std::string(algorithm_name(r.algo)) + "," +
                               std::string(system_name(r.system)) + "," + fmt_double(r.lr) + ",";
    const std::string status(status_name(r.status));
    if (r.rows.empty()) {
        out << prefix << "0,nan,nan,nan,nan," << status << '\n';
        return;
    }
    for (const auto& row : r.rows)
        out << prefix << row.epoch << ',' << fmt_double(row.train_loss) << ',' << fmt_double(row.val_loss) << ','
            << fmt_double(row.grad_l1) << ',' << fmt_double(row.grad_l2) << ',' << status << '\n';
}

/// Streams runs.csv as cells complete.
class RunsCsvWriter {
public:
    explicit RunsCsvWriter(const std::filesystem::path& path) : out_(path) {
        require(static_cast<bool>(out_), Errc::IoError, "cannot write " + path.string());
        out_ << kRunsHeader << '\n';
    }
    void write(const CellResult& r) {
        write_run_rows(out_, r);
        out_.flush();
        require(static_cast<bool>(out_), Errc::IoError, "write failed: runs.csv");
    }

private:
    std::ofstream out_;
};

inline void write_summary(std::ostream& out, std::span<const Aggregate> aggs) {
    out << "algo,system,lr,trials";
    for (const char* m : {"final_train_loss", "min_val_loss", "max_val_acc", "final_grad_l1", "final_grad_l2"})
        out << ',' << m << "_p25," << m << "_median," << m << "_p75";
    out << '\n';
    for (const auto& a : aggs) {
        out << algorithm_name(a.algo) << ',' << system_name(a.system) << ',' << fmt_double(a.lr) << ',' << a.trials;
        for (const Quartiles* q : {&a.final_train_loss, &a.min_val_loss, &a.max_val_acc, &a.final_grad_l1,
                                   &a.final_grad_l2})
            out << ',' << fmt_double(q->p25) << ',' << fmt_double(q->median) << ',' << fmt_double(q->p75);
        out << '\n';
    }
}

inline nlohmann::json resolved_json(const ExperimentConfig& c) {
    nlohmann::json r;
    r["distribution"] = dist_kind_name(resolved_distribution(c));
    r["egop_batch_size"] = resolved_egop_batch(c);
    r["learning_rates"] = resolved_lr_grid(c);
    r["egop_samples_rule"] = is_convex(c.objective) ? "5d"
                             : c.basis == BasisKind::BlockEgop ? "d per block estimate (d = total parameters)"
                                                               : "2d";
    if (c.egop_samples > 0) r["egop_samples_rule"] = std::to_string(c.egop_samples);
    r["optimizer"] = {{"adagrad_eps", kAdagradEps}, {"adam_eps", kAdamEps}, {"adam_beta1", 0.9},
                      {"adam_beta2", 0.999},        {"momentum", 0.9},     {"weight_decay", 0.0}};
    r["feature_scaling"] = "raw";
    r["quantile_method"] = "linear";
    return r;
}

inline void write_config_json(const std::filesystem::path& path, const ExperimentConfig& c,
                              const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json j;
    j["config"] = to_json(c);
    j["resolved"] = resolved_json(c);
    j["version"] = kVersion;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    std::ofstream out(path);
    require(static_cast<bool>(out), Errc::IoError, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline void write_summary_file(const std::filesystem::path& path, std::span<const Aggregate> aggs) {
    std::ofstream out(path);
    require(static_cast<bool>(out), Errc::IoError, "cannot write " + path.string());
    write_summary(out, aggs);
}

/// Writes runs.csv, summary.csv and config.json into dir.
inline void emit(const SweepResult& s, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
    {
        RunsCsvWriter w(dir / "runs.csv");
        for (const auto& r : s.runs) w.write(r);
    }
    write_summary_file(dir / "summary.csv", s.aggregates);
    write_config_json(dir / "config.json", s.config);
}

} // namespace egoprep

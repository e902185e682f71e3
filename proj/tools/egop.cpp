// egop: command-line front end for instance generation, EGOP estimation,
// training sweeps and spectral diagnostics.
//
// Exit codes: 0 ok, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "egoprep/all.hpp"

using namespace egoprep;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2 };

// Flags that override fields of the loaded (or preset) config. Only flags
// actually given on the command line are applied.
struct Overrides {
    std::string config_path;
    std::optional<std::string> objective;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::size_t> n, d, samples, egop_batch, epochs, batch, trials;
    std::optional<double> alpha, sigma;
    std::optional<std::string> dist, basis, criterion;
    std::vector<std::string> data;
    std::vector<std::size_t> split;
    std::optional<std::uint64_t> split_seed;
    std::vector<std::string> algorithms;
    std::vector<double> lrs;
    bool two_stage = false;
    std::size_t trial = 0;

    ExperimentConfig resolve() const {
        ExperimentConfig c;
        if (!config_path.empty()) c = load_config(config_path);
        else if (objective) c = ExperimentConfig::preset(parse_objective(*objective));
        if (objective) c.objective = parse_objective(*objective);
        if (seed) c.seed = *seed;
        if (threads) c.threads = *threads;
        if (n) c.n = *n;
        if (d) c.d = *d;
        if (alpha) c.alpha = *alpha;
        if (sigma) c.sigma = *sigma;
        if (dist) c.distribution = parse_dist_kind(*dist);
        if (basis) c.basis = parse_basis(*basis);
        if (criterion) c.criterion = parse_criterion(*criterion);
        if (samples) c.egop_samples = *samples;
        if (egop_batch) c.egop_batch_size = *egop_batch;
        if (epochs) c.epochs = *epochs;
        if (batch) c.batch_size = *batch;
        if (trials) c.trials = *trials;
        if (!data.empty()) c.data = data;
        if (!split.empty()) c.split = {split[0], split[1], split[2]};
        if (split_seed) c.split_seed = *split_seed;
        if (!algorithms.empty()) {
            c.algorithms.clear();
            for (const auto& a : algorithms) c.algorithms.push_back(parse_algorithm(a));
        }
        if (!lrs.empty()) c.learning_rates = lrs;
        if (two_stage) c.two_stage = true;
        c.validate();
        return c;
    }
};

template <class T>
void opt(CLI::App* app, const std::string& name, std::optional<T>& slot, const std::string& help) {
    app->add_option_function<T>(name, [&slot](const T& v) { slot = v; }, help);
}

void add_problem_flags(CLI::App* app, Overrides& o) {
    opt(app, "--objective", o.objective, "least_squares | log_sum_exp | logistic | deep_linear | relu_mlp");
    opt(app, "--n", o.n, "sample count");
    opt(app, "--d", o.d, "parameter count (convex objectives)");
    opt(app, "--alpha", o.alpha, "singular value decay exponent");
    app->add_option("--data", o.data, "optdigits file(s); repeat for train and test parts");
    app->add_option("--split", o.split, "train,validation,test sizes")->delimiter(',')->expected(3);
    opt(app, "--split-seed", o.split_seed, "seed of the fixed data split");
    app->add_option("--trial", o.trial, "trial index whose instance is used");
}

void add_egop_flags(CLI::App* app, Overrides& o) {
    opt(app, "--dist", o.dist, "standard_gaussian | scaled_gaussian | glorot_normal | default_uniform");
    opt(app, "--sigma", o.sigma, "standard deviation for scaled_gaussian");
    opt(app, "--samples", o.samples, "gradient samples M");
    opt(app, "--egop-batch", o.egop_batch, "minibatch size per sampled gradient (0: full batch)");
    opt(app, "--batch", o.batch, "training batch size (0: full batch); default EGOP batch");
}

void add_train_flags(CLI::App* app, Overrides& o) {
    app->add_option("--algo", o.algorithms, "sgd | sgd_momentum | adagrad | adam (repeatable)");
    app->add_option("--lr", o.lrs, "learning rate(s)");
    opt(app, "--basis", o.basis, "egop | block_egop | partial | identity");
    opt(app, "--epochs", o.epochs, "epochs (iterations for full batch)");
    opt(app, "--trials", o.trials, "independent trials");
    opt(app, "--criterion", o.criterion, "min_median_val_loss | min_median_train_loss | max_median_val_acc");
}

std::uint64_t trial_seed(const ExperimentConfig& c, std::size_t trial) { return derive_seed(c.seed, {trial}); }

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p);
    require(static_cast<bool>(out), Errc::IoError, "cannot write " + p.string());
    out.precision(17);
    return out;
}

// gen-data ------------------------------------------------------------------

void write_rows(const fs::path& p, const DenseMatrix& m, const Vector* last = nullptr) {
    auto out = open_out(p);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
        if (last) out << ',' << (*last)[i];
        out << '\n';
    }
}

void write_vector(const fs::path& p, std::span<const double> v) {
    auto out = open_out(p);
    for (double x : v) out << x << '\n';
}

int gen_data(const ExperimentConfig& c, std::size_t trial, const fs::path& dir) {
    make_dir(dir);
    const std::uint64_t iseed = derive_seed(trial_seed(c, trial), {seed_role::instance});
    switch (c.objective) {
    case ObjectiveKind::LeastSquares:
    case ObjectiveKind::LogSumExp:
    case ObjectiveKind::Logistic: {
        const auto r = gen_regression(c.n, c.d, c.alpha, iseed);
        const LsqProblem p = make_lsq(r);
        write_rows(dir / "regression.csv", p.a, &p.y);
        write_vector(dir / "theta_star.csv", p.theta_star);
        if (c.objective == ObjectiveKind::Logistic) {
            const auto lp = make_logistic(r, iseed);
            write_vector(dir / "logistic_labels.csv", lp.labels);
        }
        break;
    }
    case ObjectiveKind::DeepLinear: {
        const auto data = gen_linear_net_data(c.n, iseed);
        write_rows(dir / "inputs.csv", transpose(data.a));
        write_rows(dir / "targets.csv", transpose(data.y));
        write_rows(dir / "m_star.csv", data.m_star);
        break;
    }
    case ObjectiveKind::ReluMlp: {
        const auto all = gen_classification(c.n, kOptdigitsFeatures, kOptdigitsClasses, c.alpha,
                                            derive_seed(c.seed, {seed_role::instance}));
        write_rows(dir / "classification.csv", all.features);
        std::vector<double> labels(all.labels.begin(), all.labels.end());
        write_vector(dir / "labels.csv", labels);
        break;
    }
    }
    write_config_json(dir / "config.json", c, {{"trial", trial}});
    std::cout << "wrote " << objective_name(c.objective) << " instance to " << dir.string() << "\n";
    return kOk;
}

// estimate-egop -------------------------------------------------------------

std::vector<EgopEstimate> estimate(const ExperimentConfig& c, const Instance& inst, std::uint64_t tseed,
                                   const std::string& blocks, BlockPartition& parts) {
    EstimateOptions opts;
    opts.samples = resolved_egop_samples(c, inst.dim());
    opts.batch_size = resolved_egop_batch(c);
    opts.seed = derive_seed(tseed, {seed_role::egop});
    opts.keep_matrix = false;
    opts.threads = c.threads;
    if (blocks == "none") {
        parts = BlockPartition::whole(inst.dim());
        return {estimate_egop(*inst.train, inst.rho, opts)};
    }
    require(!inst.layers.empty(), Errc::ConfigError, "--blocks " + blocks + " needs a network objective");
    ExperimentConfig bc = c;
    bc.first_layer_only = blocks == "first";
    parts = config_blocks(bc, inst);
    return estimate_block_egops(*inst.train, inst.rho, parts, opts);
}

int estimate_egop_cmd(const ExperimentConfig& c, std::size_t trial, const std::string& blocks, const fs::path& out) {
    const auto tseed = trial_seed(c, trial);
    const Instance inst = build_instance(c, tseed, prepare_shared(c));
    BlockPartition parts;
    const auto ests = estimate(c, inst, tseed, blocks, parts);
    if (out.has_parent_path()) make_dir(out.parent_path());
    for (const auto& e : ests) {
        fs::path p = out;
        if (e.block_id) p += ".block" + std::to_string(*e.block_id);
        save_egop(p.string(), e);
        std::cout << "wrote " << p.string() << " (d=" << e.dim() << ", M=" << e.sample_count
                  << ", stable rank " << stable_rank(e.eigenvalues) << ")\n";
    }
    return kOk;
}

// train / sweep --------------------------------------------------------------

void print_summary(const std::vector<Aggregate>& aggs) {
    std::printf("%-13s %-16s %-10s %-14s %-14s %-14s\n", "algo", "system", "lr", "train_loss", "min_val_loss",
                "grad_l2");
    for (const auto& a : aggs)
        std::printf("%-13s %-16s %-10.4g %-14.6e %-14.6e %-14.6e\n", std::string(algorithm_name(a.algo)).c_str(),
                    std::string(system_name(a.system)).c_str(), a.lr, a.final_train_loss.median, a.min_val_loss.median,
                    a.final_grad_l2.median);
}

int train_cmd(const ExperimentConfig& c, const fs::path& dir) {
    require(!c.learning_rates.empty(), Errc::ConfigError, "train needs --lr (or learning_rates in the config)");
    const SweepResult s = run_paired(c);
    emit(s, dir);
    print_summary(s.aggregates);
    std::cout << "results in " << dir.string() << "\n";
    return kOk;
}

nlohmann::json selected_json(const std::map<Algorithm, double>& sel) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [a, lr] : sel) j[std::string(algorithm_name(a))] = lr;
    return j;
}

int sweep_cmd(const ExperimentConfig& c, const fs::path& dir) {
    nlohmann::json sel;
    if (c.two_stage) {
        const TwoStageResult r = two_stage_sweep(c);
        emit(r.coarse, dir / "coarse");
        emit(r.refined, dir);
        sel = selected_json(r.selected);
        print_summary(r.refined.aggregates);
    } else {
        const SweepResult s = run_paired(c);
        emit(s, dir);
        sel = selected_json(select_lr(s, c.criterion, c.select_system));
        print_summary(s.aggregates);
    }
    auto out = open_out(dir / "selected_lr.json");
    out << sel.dump(2) << '\n';
    std::cout << "selected learning rates: " << sel.dump() << "\nresults in " << dir.string() << "\n";
    return kOk;
}

// diagnose -------------------------------------------------------------------

void write_report(const SpectrumReport& r, const fs::path& dir, const std::string& stem,
                  const std::optional<SmoothnessRatio>& ratio) {
    {
        auto out = open_out(dir / (stem + ".csv"));
        out << "k,lambda_ratio,beta_k\n";
        for (std::size_t k = 0; k < r.d; ++k) {
            out << (k + 1) << ',' << fmt_double(r.normalized[k]) << ',';
            out << (k < r.densities.size() ? fmt_double(r.densities[k]) : std::string()) << '\n';
        }
    }
    nlohmann::json j{{"d", r.d},
                     {"M", r.sample_count},
                     {"stable_rank", r.stable_rank},
                     {"beta1", r.beta1()},
                     {"decay_alpha_fit", r.decay_alpha_fit},
                     {"inverse_dim", r.inverse_dim()},
                     {"beta1_minus_third", r.beta1_minus_third()}};
    if (ratio) {
        j["smoothness_l_f"] = ratio->l_f;
        j["smoothness_l_f_tilde"] = ratio->l_f_tilde;
        j["smoothness_ratio"] = ratio->ratio;
    }
    auto out = open_out(dir / (stem + "_summary.json"));
    out << j.dump(2) << '\n';
    std::printf("%s: d=%zu M=%zu stable_rank=%.6g beta1=%.4f (1/d=%.4g) decay_alpha_fit=%.4f\n", stem.c_str(), r.d,
                r.sample_count, r.stable_rank, r.beta1(), r.inverse_dim(), r.decay_alpha_fit);
}

int diagnose_cmd(const ExperimentConfig& c, std::size_t trial, const std::vector<std::string>& artifacts,
                 const std::string& blocks, const fs::path& dir) {
    make_dir(dir);
    if (!artifacts.empty()) {
        for (std::size_t i = 0; i < artifacts.size(); ++i) {
            const auto e = load_egop(artifacts[i]);
            write_report(decay_curve(e), dir, artifacts.size() == 1 ? "spectrum" : "spectrum_" + std::to_string(i),
                         std::nullopt);
        }
        return kOk;
    }
    const auto tseed = trial_seed(c, trial);
    const Instance inst = build_instance(c, tseed, prepare_shared(c));
    BlockPartition parts;
    const auto ests = estimate(c, inst, tseed, blocks, parts);
    for (const auto& e : ests) {
        std::optional<SmoothnessRatio> ratio;
        if (inst.lsq) ratio = smoothness_ratio_quadratic(*inst.lsq, e.basis);
        write_report(decay_curve(e), dir, e.block_id ? "spectrum_block" + std::to_string(*e.block_id) : "spectrum",
                     ratio);
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"EGOP reparameterization for adaptive optimizers"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    Overrides o;
    std::string out = "out";
    std::uint64_t seed = 0;
    unsigned threads = 1;
    app.add_option("--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "master seed");
    auto* threads_opt = app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", out, "output directory (estimate-egop: artifact path)");

    auto* gen = app.add_subcommand("gen-data", "write a generated instance as CSV");
    add_problem_flags(gen, o);

    auto* est = app.add_subcommand("estimate-egop", "estimate the EGOP and save its eigenbasis");
    std::string blocks = "none";
    add_problem_flags(est, o);
    add_egop_flags(est, o);
    est->add_option("--blocks", blocks, "none | layers | first")->check(CLI::IsMember({"none", "layers", "first"}));

    auto* train = app.add_subcommand("train", "paired original/reparameterized runs at fixed learning rates");
    add_problem_flags(train, o);
    add_egop_flags(train, o);
    add_train_flags(train, o);

    auto* sweep = app.add_subcommand("sweep", "learning-rate sweep with selection");
    add_problem_flags(sweep, o);
    add_egop_flags(sweep, o);
    add_train_flags(sweep, o);
    sweep->add_flag("--two-stage", o.two_stage, "powers of ten, then a doubling grid around each winner");

    auto* diag = app.add_subcommand("diagnose", "EGOP spectrum, eigenvector density and smoothness ratio");
    std::vector<std::string> artifacts;
    std::string diag_blocks = "none";
    add_problem_flags(diag, o);
    add_egop_flags(diag, o);
    diag->add_option("--egop", artifacts, "read saved artifact(s) instead of estimating");
    diag->add_option("--blocks", diag_blocks, "none | layers | first")->check(CLI::IsMember({"none", "layers", "first"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    if (seed_opt->count() > 0) o.seed = seed;
    if (threads_opt->count() > 0) o.threads = threads;

    try {
        const ExperimentConfig c = o.resolve();
        const fs::path dir = out;
        if (gen->parsed()) return gen_data(c, o.trial, dir);
        if (est->parsed()) {
            const fs::path path = fs::is_directory(dir) ? dir / "egop.egop" : dir;
            return estimate_egop_cmd(c, o.trial, blocks, path);
        }
        if (train->parsed()) return train_cmd(c, dir);
        if (sweep->parsed()) return sweep_cmd(c, dir);
        if (diag->parsed()) return diagnose_cmd(c, o.trial, artifacts, diag_blocks, dir);
    } catch (const Error& e) {
        std::cerr << "egop: " << e.what() << "\n";
        return e.code() == Errc::ConfigError ? kUsage : kRuntime;
    } catch (const std::exception& e) {
        std::cerr << "egop: " << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}

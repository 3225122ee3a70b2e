#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "randreg/bandit.hpp"
#include "randreg/domain.hpp"
#include "randreg/error.hpp"
#include "randreg/harness/config.hpp"
#include "randreg/harness/trace.hpp"
#include "randreg/induced.hpp"
#include "randreg/kernels.hpp"
#include "randreg/losses.hpp"
#include "randreg/models.hpp"
#include "randreg/posterior.hpp"
#include "randreg/random.hpp"
#include "randreg/training.hpp"
#include "randreg/version.hpp"

namespace randreg::harness {

/// Command-line overrides applied on top of a config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> output;
    bool force_oracle_diagnostics = false;
};

/// Everything fixed across replications, resolved once from the config.
struct ExperimentContext {
    Config config;
    std::size_t horizon = 0;
    std::size_t replications = 0;
    std::uint64_t seed = 0;
    double delta = 0.1;
    double gap_floor = 1e-3;
    bool oracle_diagnostics = true;
    NonConvergencePolicy on_nonconvergence = NonConvergencePolicy::Continue;
    std::filesystem::path output;

    DomainGrid grid = DomainGrid::linspace(2);
    ModelSpec env_model;
    ModelSpec surrogate;
    PriorSpec prior;
    LossSpec loss;
    NoiseSpec noise = GaussianNoise{};
    ParamKernelSpec k_theta;
    TrainConfig train;
    PolicyConfig policy;
    std::optional<GridKernel> posterior_kernel;
    std::string posterior_kernel_source;
    ConfidenceParams conf;
    double zeta = 0.5;
    std::string regime;

    [[nodiscard]] std::uint64_t environment_seed(std::size_t rep) const {
        return derive_key(seed, {static_cast<std::uint64_t>(rep), 0x656e76ULL});
    }
    [[nodiscard]] CounterRng run_rng(std::size_t rep) const {
        return CounterRng(seed, {static_cast<std::uint64_t>(rep), 0x72756eULL});
    }
};

namespace detail {

inline std::vector<int> to_ints(const std::vector<double>& v, const std::string& what) {
    std::vector<int> out;
    for (double x : v) {
        if (x != static_cast<double>(static_cast<int>(x))) throw Error(ErrorCode::Config, what + " must be integers");
        out.push_back(static_cast<int>(x));
    }
    return out;
}

inline KernelSpec parse_kernel(const Config& c, const std::string& section, const std::string& fallback_family) {
    const std::string family = c.get_choice(section, "family", {"linear", "rbf", "matern"}, fallback_family);
    KernelSpec k;
    k.output_scale = c.get_double(section, "output_scale", 1.0);
    if (family == "linear") {
        k.family = KernelFamily::Linear;
    } else if (family == "rbf") {
        k.family = KernelFamily::RBF;
        k.lengthscale = c.get_double(section, "lengthscale", 1.0);
    } else {
        k.family = KernelFamily::Matern;
        k.lengthscale = c.get_double(section, "lengthscale", 1.0);
        k.nu = c.get_double(section, "nu", 2.5);
    }
    try {
        k.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::Config, c.origin() + ": [" + section + "] " + e.what());
    }
    return k;
}

inline DomainGrid parse_grid(const Config& c, std::uint64_t global_seed) {
    c.require_section("grid");
    const auto m = static_cast<std::size_t>(c.get_int("grid", "size"));
    const auto d = static_cast<std::size_t>(c.get_int("grid", "dim", 1));
    const std::string gen = c.get_choice("grid", "generator", {"linspace", "uniform"}, d == 1 ? "linspace" : "uniform");
    if (gen == "linspace") {
        if (d != 1) throw Error(ErrorCode::Config, c.origin() + ": [grid] linspace generator requires dim = 1");
        return DomainGrid::linspace(m, c.get_double("grid", "low", 0.0), c.get_double("grid", "high", 1.0));
    }
    return DomainGrid::uniform(m, d, c.get_uint("grid", "seed", derive_key(global_seed, {0x67ULL})));
}

inline ModelSpec parse_model(const Config& c, const DomainGrid& grid, std::uint64_t global_seed, bool with_clamp) {
    c.require_section("model");
    const auto d = static_cast<Eigen::Index>(grid.dim());
    std::optional<OutputClamp> clamp;
    if (with_clamp && (c.has("model", "clamp_low") || c.has("model", "clamp_high"))) {
        clamp = OutputClamp{c.get_double("model", "clamp_low", 0.05), c.get_double("model", "clamp_high", 0.95)};
    }
    const std::string kind = c.get_choice("model", "kind", {"linear_feature", "smooth_mlp"}, "linear_feature");
    if (kind == "smooth_mlp") {
        std::vector<int> widths = to_ints(c.get_list("model", "widths"), "[model] widths");
        if (widths.empty() || widths.front() != static_cast<int>(d)) {
            throw Error(ErrorCode::Config, c.origin() + ": [model] widths must start with the grid dimension");
        }
        return ModelSpec::smooth_mlp(std::move(widths), clamp);
    }
    const std::string features = c.get_choice("model", "features", {"rff", "polynomial", "onehot"}, "rff");
    if (features == "rff") {
        const auto count = static_cast<Eigen::Index>(c.get_int("model", "num_features"));
        auto rff = RandomFourierFeatures::make(count, d, c.get_double("model", "lengthscale", 0.2),
                                               c.get_double("model", "output_scale", 1.0),
                                               c.get_uint("model", "feature_seed", derive_key(global_seed, {0x66ULL})));
        return ModelSpec::linear_feature(std::move(rff), d, clamp);
    }
    if (features == "polynomial") {
        return ModelSpec::linear_feature(PolynomialFeatures{to_ints(c.get_list("model", "powers"), "[model] powers")}, d,
                                         clamp);
    }
    return ModelSpec::linear_feature(OneHotFeatures{grid.points()}, d, clamp);
}

inline PriorSpec parse_prior(const Config& c, Eigen::Index dim, std::uint64_t global_seed) {
    c.require_section("prior");
    PriorSpec p;
    p.dim = dim;
    const std::string dist = c.get_choice("prior", "distribution", {"gaussian", "uniform"}, "gaussian");
    if (dist == "gaussian") {
        p.distribution = GaussianIso{c.get_double("prior", "sigma", 1.0)};
    } else {
        p.distribution = UniformBox{c.get_double("prior", "low", -1.0), c.get_double("prior", "high", 1.0)};
    }
    p.seed = c.get_uint("prior", "seed", derive_key(global_seed, {0x70ULL}));
    p.tail_exponent = c.get_optional_double("prior", "tail_exponent");
    if (c.has("prior", "d_eff")) {
        p.small_ball = SmallBallParams{c.get_double("prior", "c_star", 0.0), c.get_double("prior", "rho0", 0.0),
                                       c.get_double("prior", "d_eff")};
    }
    try {
        p.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::Config, c.origin() + ": [prior] " + e.what());
    }
    return p;
}

inline TrainConfig parse_train(const Config& c) {
    c.require_section("train");
    TrainConfig t;
    const std::string schedule = c.get_choice("train", "schedule", {"log_power", "constant"}, "log_power");
    if (schedule == "log_power") {
        t.schedule = LogPowerSchedule{c.get_double("train", "q", 2.0), c.get_double("train", "scale", 1.0)};
    } else {
        t.schedule = ConstantSchedule{c.get_double("train", "lambda")};
    }
    t.lambda0_override = c.get_optional_double("train", "lambda0");
    const std::string solver = c.get_choice("train", "solver", {"closed_form", "newton", "gd"}, "newton");
    if (solver == "closed_form") {
        t.solver = ClosedFormRidge{};
    } else if (solver == "newton") {
        t.solver = NewtonSolver{static_cast<int>(c.get_int("train", "max_iter", 100)), c.get_double("train", "grad_tol", 1e-9)};
    } else {
        t.solver = GradientDescentSolver{static_cast<int>(c.get_int("train", "max_iter", 10000)),
                                         c.get_double("train", "step", 1e-2), c.get_double("train", "grad_tol", 1e-9)};
    }
    try {
        t.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::Config, c.origin() + ": [train] " + e.what());
    }
    return t;
}

}  // namespace detail

/// Default output root: $RANDREG_OUT if set, else "runs".
inline std::filesystem::path default_output_root() {
    if (const char* env = std::getenv("RANDREG_OUT"); env && *env) return env;
    return "runs";
}

/// Resolves every section of an experiment config.
inline ExperimentContext build_context(Config config, const Overrides& ov = {}) {
    if (ov.seed) config.set("experiment", "seed", std::to_string(*ov.seed));
    if (ov.force_oracle_diagnostics) config.set("experiment", "oracle_diagnostics", "true");
    for (const char* s : {"experiment", "grid", "model", "prior", "loss", "environment", "kernel", "train", "policy"}) {
        config.require_section(s);
    }
    const Config& c = config;
    ExperimentContext ctx;
    ctx.horizon = static_cast<std::size_t>(c.get_int("experiment", "horizon"));
    ctx.replications = static_cast<std::size_t>(c.get_int("experiment", "replications"));
    if (ctx.horizon < 1 || ctx.replications < 1) {
        throw Error(ErrorCode::Config, c.origin() + ": [experiment] horizon and replications must be positive");
    }
    ctx.seed = c.get_uint("experiment", "seed", 0);
    ctx.delta = c.get_double("experiment", "delta", 0.1);
    ctx.gap_floor = c.get_double("experiment", "gap_floor", 1e-3);
    ctx.oracle_diagnostics = c.get_bool("experiment", "oracle_diagnostics", false);
    ctx.on_nonconvergence = c.get_choice("experiment", "on_nonconvergence", {"continue", "abort"}, "continue") == "abort"
                                ? NonConvergencePolicy::Abort
                                : NonConvergencePolicy::Continue;
    if (ov.output) {
        ctx.output = *ov.output;
    } else if (c.has("experiment", "output")) {
        ctx.output = c.get_string("experiment", "output");
        if (ctx.output.is_relative() && std::getenv("RANDREG_OUT")) ctx.output = default_output_root() / ctx.output;
    } else {
        ctx.output = default_output_root() / std::filesystem::path(c.origin()).stem();
    }

    const std::string policy = c.get_choice("policy", "kind", {"ts_randomized", "ucb", "lfbo_ce"}, "ts_randomized");
    ctx.policy.kind = policy == "ucb" ? PolicyKind::Ucb : policy == "lfbo_ce" ? PolicyKind::LfboCe : PolicyKind::TsRandomized;
    ctx.policy.lfbo_quantile = c.get_double("policy", "quantile", 0.75);
    ctx.policy.ucb_beta = c.get_optional_double("policy", "ucb_beta");
    const bool lfbo = ctx.policy.kind == PolicyKind::LfboCe;

    ctx.grid = detail::parse_grid(c, ctx.seed);
    ctx.env_model = detail::parse_model(c, ctx.grid, ctx.seed, !lfbo);
    ctx.surrogate = detail::parse_model(c, ctx.grid, ctx.seed, true);
    ctx.prior = detail::parse_prior(c, ctx.surrogate.param_dim(), ctx.seed);
    ctx.zeta = ctx.prior.tail_exponent.value_or(0.5);
    ctx.k_theta = detail::parse_kernel(c, "kernel", "linear");
    ctx.train = detail::parse_train(c);

    const std::string noise = c.get_choice("environment", "noise", {"gaussian", "bounded"}, "gaussian");
    if (noise == "gaussian") {
        ctx.noise = GaussianNoise{c.get_double("environment", "sigma", 0.1)};
    } else {
        ctx.noise = BoundedNoise{c.get_double("environment", "half_width", 0.1)};
    }
    if (noise_proxy(ctx.noise) < 0.0) throw Error(ErrorCode::Config, c.origin() + ": [environment] noise scale is negative");

    const std::string family = c.get_choice("loss", "family", {"squared_error", "cross_entropy"}, "squared_error");
    if (family == "squared_error") {
        ctx.loss = LossSpec::squared_error(noise_proxy(ctx.noise));
    } else {
        const Interval iv{c.get_double("loss", "interval_low", 0.05), c.get_double("loss", "interval_high", 0.95)};
        if (const auto s = c.get_optional_double("loss", "sigma")) {
            ctx.loss = LossSpec::cross_entropy(iv, *s, false);
        } else {
            const auto draws = static_cast<std::size_t>(c.get_int("loss", "sigma_draws", 10000));
            ctx.loss = LossSpec::cross_entropy(iv, estimate_cross_entropy_sigma(iv, draws, derive_key(ctx.seed, {0x6365ULL})), true);
        }
        if (!ctx.surrogate.clamp()) {
            throw Error(ErrorCode::Config, c.origin() + ": cross-entropy loss requires [model] clamp_low/clamp_high");
        }
    }
    if (lfbo && ctx.loss.family != LossFamily::CrossEntropy) {
        throw Error(ErrorCode::Config, c.origin() + ": policy lfbo_ce requires [loss] family = cross_entropy");
    }
    if (!lfbo && ctx.loss.family == LossFamily::CrossEntropy) {
        throw Error(ErrorCode::Config, c.origin() + ": cross-entropy loss is only supported with policy lfbo_ce");
    }

    // Posterior kernel: the induced kernel itself, or a reference kernel scaled by b^2.
    const std::string mode = c.get_choice("reference", "mode", {"induced", "kernel"}, "induced");
    const bool exact = ctx.surrogate.is_linear_in_params() && ctx.k_theta.family == KernelFamily::Linear;
    auto induced = [&]() {
        if (exact) return InducedKernel::exact(ctx.surrogate, ctx.k_theta, ctx.grid);
        PriorSpec measure = ctx.prior;
        measure.seed = c.get_uint("reference", "quadrature_seed", derive_key(ctx.seed, {0x71ULL}));
        return InducedKernel::quadrature(ctx.surrogate, ctx.k_theta, ctx.grid, measure,
                                         static_cast<std::size_t>(c.get_int("reference", "quadrature_samples", 10000)));
    };
    if (mode == "induced") {
        ctx.posterior_kernel = GridKernel::from_induced(induced());
        ctx.posterior_kernel_source = exact ? "induced_exact" : "induced_quadrature";
    } else {
        ReferenceKernelSpec ref{detail::parse_kernel(c, "reference", "matern"),
                                c.get_optional_double("reference", "domination_constant")};
        if (ref.domination_constant) {
            const auto cert = certify_domination(induced(), ref, ctx.grid, *ref.domination_constant);
            if (!cert.pass) {
                throw Error(ErrorCode::Config, c.origin() + ": [reference] domination_constant fails the grid certificate"
                                                            " (min eigenvalue " + format_real(cert.min_eigenvalue) + ")");
            }
        }
        ctx.posterior_kernel = GridKernel::from_reference(ref, ctx.grid);
        ctx.posterior_kernel_source = std::string("reference_") + to_string(ref.kernel.family);
    }

    ctx.conf.delta = ctx.delta;
    ctx.conf.sigma_loss = ctx.loss.sigma;
    ctx.conf.alpha = ctx.loss.alpha;
    ctx.conf.lambda0 = ctx.train.lambda0();
    ctx.conf.init_distance_mode = InitDistanceMode::Oracle;
    if (const auto c1 = c.get_optional_double("prior", "tail_constant")) {
        ctx.conf.tail_constant = *c1;
    } else {
        ctx.conf.tail_constant = calibrate_tail_constant(ctx.prior, ctx.k_theta,
                                                         static_cast<std::size_t>(c.get_int("prior", "tail_pairs", 4000)));
    }
    try {
        ctx.conf.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::Config, c.origin() + ": " + e.what());
    }

    if (lfbo) {
        ctx.regime = "experimental";
    } else if (ctx.surrogate.kind() == ModelKind::SmoothMLP || ctx.k_theta.family != KernelFamily::Linear) {
        ctx.regime = "heuristic";
    } else {
        ctx.regime = "guarantee";
    }
    ctx.config = std::move(config);
    return ctx;
}

inline ExperimentContext load_context(const std::filesystem::path& path, const Overrides& ov = {}) {
    return build_context(Config::load(path), ov);
}

inline Environment make_environment(const ExperimentContext& ctx, std::size_t rep) {
    return Environment::sample(ctx.grid, ctx.env_model, ctx.prior, ctx.noise, ctx.environment_seed(rep), ctx.gap_floor);
}

inline RunSetup make_run_setup(const ExperimentContext& ctx, Environment env) {
    return RunSetup{std::move(env), ctx.surrogate, ctx.prior, ctx.loss, ctx.k_theta, ctx.train,
                    *ctx.posterior_kernel, ctx.conf, ctx.policy, ctx.oracle_diagnostics, ctx.on_nonconvergence};
}

struct RunResult {
    std::size_t index = 0;
    std::vector<TraceRow> rows;
    std::size_t x_star = 0;
    double gap = 0.0;
    std::size_t resamples = 0;
    std::vector<double> f_values;
    std::vector<double> theta_star;
};

inline RunResult run_replication(const ExperimentContext& ctx, std::size_t rep,
                                 InitOverride init = InitOverride::None) {
    Environment env = make_environment(ctx, rep);
    RunResult res;
    res.index = rep;
    res.x_star = env.x_star();
    res.gap = env.gap();
    res.resamples = env.resamples();
    res.f_values.assign(env.f_values().data(), env.f_values().data() + env.f_values().size());
    res.theta_star.assign(env.theta_star().data(), env.theta_star().data() + env.theta_star().size());
    BanditRun run(make_run_setup(ctx, std::move(env)), ctx.run_rng(rep), init);
    res.rows.reserve(ctx.horizon);
    for (std::size_t t = 1; t <= ctx.horizon; ++t) res.rows.push_back(run.step());
    return res;
}

/// All replications over a pool of `workers` threads, results in replication order.
inline std::vector<RunResult> run_replications(const ExperimentContext& ctx, std::size_t workers) {
    std::vector<RunResult> results(ctx.replications);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&]() {
        for (std::size_t rep = next++; rep < ctx.replications; rep = next++) {
            try {
                results[rep] = run_replication(ctx, rep);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = ctx.replications;
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(workers, ctx.replications));
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < n; ++i) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
    return results;
}

inline std::string trace_name(std::size_t rep) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "run_%04zu.csv", rep);
    return buf;
}

/// Effective dimension used by the regret exponent: the configured value, or a small-ball
/// fit at the first replication's theta*.
struct EffectiveDimension {
    double value = 0.0;
    std::string source;
    std::optional<SmallBallEstimate> estimate;
};

inline EffectiveDimension effective_dimension(const ExperimentContext& ctx, const ParamVector& theta_star) {
    if (ctx.prior.small_ball) return {ctx.prior.small_ball->d_eff, "config", std::nullopt};
    const auto n = static_cast<std::size_t>(ctx.config.get_int("prior", "small_ball_samples", 200000));
    const auto radii = auto_small_ball_radii(ctx.prior, ctx.k_theta, theta_star, n);
    auto est = estimate_small_ball(ctx.prior, ctx.surrogate, ctx.k_theta, theta_star, radii, n);
    return {est.d_eff, "estimated", est};
}

inline nlohmann::ordered_json manifest_json(const ExperimentContext& ctx, const std::vector<RunResult>& results,
                                            const EffectiveDimension& deff) {
    nlohmann::ordered_json m;
    m["library_version"] = kVersion;
    m["config_hash"] = ctx.config.hash();
    m["config"] = ctx.config.canonical();
    m["seed"] = ctx.seed;
    m["horizon"] = ctx.horizon;
    m["replications"] = ctx.replications;
    m["policy"] = to_string(ctx.policy.kind);
    m["regime"] = ctx.regime;
    m["delta"] = ctx.delta;
    m["q"] = ctx.train.log_exponent();
    m["zeta"] = ctx.zeta;
    m["d_eff"] = deff.value;
    m["d_eff_source"] = deff.source;
    if (deff.estimate) {
        m["small_ball"] = {{"c_star", deff.estimate->c_star},
                           {"d_eff", deff.estimate->d_eff},
                           {"fit_residual", deff.estimate->fit_residual},
                           {"radii", deff.estimate->radii},
                           {"probabilities", deff.estimate->probabilities}};
    }
    m["lambda0"] = ctx.conf.lambda0;
    m["ridge"] = ctx.conf.ridge();
    m["alpha"] = ctx.loss.alpha;
    m["sigma_loss"] = ctx.loss.sigma;
    m["sigma_loss_estimated"] = ctx.loss.sigma_estimated;
    m["tail_constant"] = ctx.conf.tail_constant;
    m["posterior_kernel"] = ctx.posterior_kernel_source;
    m["oracle_diagnostics"] = ctx.oracle_diagnostics;
    m["grid_size"] = ctx.grid.size();
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& r : results) {
        runs.push_back({{"index", r.index},
                        {"environment_seed", ctx.environment_seed(r.index)},
                        {"run_key", ctx.run_rng(r.index).key()},
                        {"trace", trace_name(r.index)},
                        {"x_star", r.x_star},
                        {"gap", r.gap},
                        {"resamples", r.resamples},
                        {"f_values", r.f_values},
                        {"theta_star", r.theta_star}});
    }
    m["runs"] = std::move(runs);
    return m;
}

/// Runs every replication and writes one trace per run plus manifest.json into ctx.output.
/// Re-running the same config overwrites the directory contents identically.
inline std::vector<RunResult> run_experiment(const ExperimentContext& ctx, std::size_t workers = 1) {
    std::vector<RunResult> results = run_replications(ctx, workers);
    std::error_code ec;
    std::filesystem::create_directories(ctx.output, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create output directory " + ctx.output.string() + ": " + ec.message());
    for (const auto& r : results) write_trace(ctx.output / trace_name(r.index), r.rows);
    const EffectiveDimension deff =
        effective_dimension(ctx, Eigen::Map<const Eigen::VectorXd>(results.front().theta_star.data(),
                                                                   static_cast<Eigen::Index>(results.front().theta_star.size())));
    std::ofstream out(ctx.output / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + ctx.output.string());
    out << manifest_json(ctx, results, deff).dump(2) << '\n';
    return results;
}

}  // namespace randreg::harness

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "randreg/domain.hpp"
#include "randreg/error.hpp"
#include "randreg/kernels.hpp"
#include "randreg/losses.hpp"
#include "randreg/models.hpp"
#include "randreg/posterior.hpp"
#include "randreg/random.hpp"
#include "randreg/training.hpp"

namespace randreg {

// ---------------------------------------------------------------------------
// Environment.

struct GaussianNoise {
    double sigma = 0.1;
};

/// Uniform on [-half_width, half_width]; sub-Gaussian with proxy half_width.
struct BoundedNoise {
    double half_width = 0.1;
};

using NoiseSpec = std::variant<GaussianNoise, BoundedNoise>;

inline double noise_proxy(const NoiseSpec& noise) {
    if (const auto* g = std::get_if<GaussianNoise>(&noise)) return g->sigma;
    return std::get<BoundedNoise>(noise).half_width;
}

/// Realizable objective f = g(., theta*) on a grid with a unique maximizer.
class Environment {
public:
    /// Draws theta* from the prior until the optimality gap exceeds `gap_floor`.
    static Environment sample(DomainGrid grid, ModelSpec model, const PriorSpec& prior, NoiseSpec noise,
                              std::uint64_t seed, double gap_floor = 1e-3, std::size_t max_resamples = 100000) {
        require(prior.dim == model.param_dim(), ErrorCode::DimensionMismatch, "prior dimension does not match model");
        CounterRng rng(seed, {0x746865746173ULL});
        for (std::size_t attempt = 0; attempt <= max_resamples; ++attempt) {
            ParamVector theta = sample_prior(prior, rng);
            Environment env(grid, model, std::move(theta), noise);
            if (env.gap_ > gap_floor) {
                env.resamples_ = attempt;
                return env;
            }
        }
        throw Error(ErrorCode::InvalidArgument, "no environment with gap above the floor after " +
                                                    std::to_string(max_resamples) + " resamples");
    }

    /// Environment with a given theta*; rejects ties at the top.
    static Environment with_theta(DomainGrid grid, ModelSpec model, ParamVector theta_star, NoiseSpec noise,
                                  double gap_floor = 0.0) {
        Environment env(std::move(grid), std::move(model), std::move(theta_star), noise);
        require(env.gap_ > gap_floor, ErrorCode::InvalidArgument, "objective has no unique maximizer above the gap floor");
        return env;
    }

    [[nodiscard]] const DomainGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] const ModelSpec& model() const noexcept { return model_; }
    [[nodiscard]] const ParamVector& theta_star() const noexcept { return theta_star_; }
    [[nodiscard]] const NoiseSpec& noise() const noexcept { return noise_; }
    [[nodiscard]] const Eigen::VectorXd& f_values() const noexcept { return f_; }
    [[nodiscard]] std::size_t x_star() const noexcept { return x_star_; }
    [[nodiscard]] double f_star() const noexcept { return f_(static_cast<Eigen::Index>(x_star_)); }
    [[nodiscard]] double gap() const noexcept { return gap_; }
    [[nodiscard]] std::size_t resamples() const noexcept { return resamples_; }

private:
    Environment(DomainGrid grid, ModelSpec model, ParamVector theta_star, NoiseSpec noise)
        : grid_(std::move(grid)), model_(std::move(model)), theta_star_(std::move(theta_star)), noise_(noise) {
        f_ = evaluate_rows(model_, grid_.points(), theta_star_);
        Eigen::Index best = 0;
        f_.maxCoeff(&best);
        x_star_ = static_cast<std::size_t>(best);
        double second = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < f_.size(); ++i) {
            if (i != best) second = std::max(second, f_(i));
        }
        gap_ = f_(best) - second;
    }

    DomainGrid grid_;
    ModelSpec model_;
    ParamVector theta_star_;
    NoiseSpec noise_;
    Eigen::VectorXd f_;
    std::size_t x_star_ = 0;
    double gap_ = 0.0;
    std::size_t resamples_ = 0;
};

/// y = f(x) + eps with eps drawn from `rng`.
inline double observe(const Environment& env, std::size_t index, CounterRng& rng) {
    env.grid().check_index(index);
    const double f = env.f_values()(static_cast<Eigen::Index>(index));
    if (const auto* g = std::get_if<GaussianNoise>(&env.noise())) {
        return g->sigma == 0.0 ? f : f + g->sigma * rng.normal();
    }
    const double h = std::get<BoundedNoise>(env.noise()).half_width;
    return h == 0.0 ? f : f + rng.uniform(-h, h);
}

// ---------------------------------------------------------------------------
// Policies.

/// Argmax with lowest-index tie-break.
inline std::size_t argmax_lowest(const Eigen::VectorXd& scores) {
    require(scores.size() > 0, ErrorCode::InvalidArgument, "argmax of an empty score vector");
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < scores.size(); ++i) {
        if (scores(i) > scores(best)) best = i;
    }
    return static_cast<std::size_t>(best);
}

/// Thompson-style selection: argmax of the fitted surrogate over the grid.
inline std::size_t select_ts(const Eigen::VectorXd& g_values) { return argmax_lowest(g_values); }

inline std::size_t select_ts(const ModelSpec& model, const ParamVector& theta, const DomainGrid& grid) {
    return select_ts(evaluate_rows(model, grid.points(), theta));
}

/// argmax of g(x) + beta * sigma_t(x).
inline std::size_t select_ucb(const PosteriorState& state, const Eigen::VectorXd& g_values, double beta_value) {
    require(static_cast<std::size_t>(g_values.size()) == state.kernel().size(), ErrorCode::DimensionMismatch,
            "surrogate values do not cover the posterior grid");
    if (beta_value == 0.0) return argmax_lowest(g_values);
    const Eigen::VectorXd sd = state.grid_variances().cwiseSqrt();
    return argmax_lowest(g_values + beta_value * sd);
}

struct LfboLabels {
    double tau = 0.0;
    std::vector<double> labels;
};

/// tau = empirical gamma-quantile of y (linear interpolation between order statistics,
/// position gamma (n - 1)); labels z_i = 1[y_i >= tau]. All past rows are relabeled.
inline LfboLabels make_lfbo_labels(const std::vector<double>& y, double gamma) {
    require(!y.empty(), ErrorCode::InsufficientData, "LFBO labels need a non-empty history");
    require(gamma >= 0.0 && gamma <= 1.0, ErrorCode::InvalidArgument, "LFBO quantile must lie in [0, 1]");
    std::vector<double> sorted = y;
    std::sort(sorted.begin(), sorted.end());
    const double pos = gamma * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    LfboLabels out;
    out.tau = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
    out.labels.reserve(y.size());
    for (double v : y) out.labels.push_back(v >= out.tau ? 1.0 : 0.0);
    return out;
}

enum class PolicyKind { TsRandomized, Ucb, LfboCe };

inline const char* to_string(PolicyKind p) {
    switch (p) {
        case PolicyKind::TsRandomized: return "ts_randomized";
        case PolicyKind::Ucb: return "ucb";
        case PolicyKind::LfboCe: return "lfbo_ce";
    }
    return "unknown";
}

struct PolicyConfig {
    PolicyKind kind = PolicyKind::TsRandomized;
    double lfbo_quantile = 0.75;
    /// Fixed UCB multiplier; unset uses the policy-visible TailBound beta.
    std::optional<double> ucb_beta;
};

enum class NonConvergencePolicy { Continue, Abort };

// ---------------------------------------------------------------------------
// Run loop.

/// Everything one replication needs. `model` is the surrogate being trained; for the
/// realizable policies it is the environment's model.
struct RunSetup {
    Environment env;
    ModelSpec model;
    PriorSpec prior;
    LossSpec loss;
    ParamKernelSpec k_theta;
    TrainConfig train;
    GridKernel posterior_kernel;
    ConfidenceParams conf;
    PolicyConfig policy;
    bool oracle_diagnostics = true;
    NonConvergencePolicy on_nonconvergence = NonConvergencePolicy::Continue;
};

enum class InitOverride {
    None,
    /// theta_{0,0} = theta*, so g_0 = f.
    StarAtZero,
    /// theta_{t,0} = theta* for every t.
    StarAlways,
};

/// One round of the regret trace. Oracle-only quantities are unset outside diagnostics
/// mode (and for LFBO, whose surrogate is not an estimate of f).
struct TraceRow {
    std::size_t t = 0;
    std::size_t x_index = 0;
    double y = 0.0;
    double regret = 0.0;
    double cum_regret = 0.0;
    std::size_t n_opt = 0;
    double var_opt_prev = 0.0;
    std::optional<double> beta_prev;
    double beta_policy_prev = 0.0;
    double lambda = 0.0;
    std::optional<double> init_dist;
    std::optional<double> beta;
    double var_opt = 0.0;
    double logdet = 0.0;
    std::optional<bool> covered_prev;
    std::optional<bool> covered;
    std::optional<bool> favorable;
    std::optional<double> fav_sup_err;
    std::optional<double> decomp_slack;
    std::optional<bool> bound1_holds;
    std::optional<bool> bound2_holds;
    bool converged = true;
    int solver_iters = 0;
};

/// Sequential state machine of one replication. Rounds t = 1..T: select x_t from g_{t-1},
/// observe y_t, audit, update the posterior, then draw theta_{t,0} and fit g_t.
class BanditRun {
public:
    BanditRun(RunSetup setup, CounterRng rng, InitOverride init = InitOverride::None)
        : s_(std::move(setup)),
          init_rng_(rng.split(1)),
          noise_rng_(rng.split(2)),
          init_override_(init),
          posterior_(s_.posterior_kernel, s_.conf.ridge()) {
        s_.train.validate();
        s_.conf.validate();
        require(s_.posterior_kernel.size() == s_.env.grid().size(), ErrorCode::DimensionMismatch,
                "posterior kernel does not match the environment grid");
        require(s_.model.param_dim() == s_.prior.dim, ErrorCode::DimensionMismatch,
                "prior dimension does not match the surrogate model");
        if (s_.loss.family == LossFamily::CrossEntropy) {
            require(s_.model.clamp().has_value(), ErrorCode::IncompatibleConfiguration,
                    "cross-entropy loss requires a model with an output clamp");
        }
        if (lfbo()) {
            require(s_.loss.family == LossFamily::CrossEntropy, ErrorCode::IncompatibleConfiguration,
                    "lfbo_ce policy trains with cross-entropy loss");
        } else {
            require(s_.model.param_dim() == s_.env.model().param_dim(), ErrorCode::DimensionMismatch,
                    "surrogate and environment models differ in dimension");
        }
        fast_ridge_ = std::holds_alternative<ClosedFormRidge>(s_.train.solver);
        if (fast_ridge_) {
            detail::check_closed_form(s_.model, s_.loss, s_.k_theta);
            const DomainGrid& grid = s_.env.grid();
            phi_grid_.resize(static_cast<Eigen::Index>(grid.size()), s_.model.param_dim());
            for (std::size_t i = 0; i < grid.size(); ++i) {
                phi_grid_.row(static_cast<Eigen::Index>(i)) = feature_vector(s_.model.features(), grid.point(i)).transpose();
            }
            stats_.emplace(s_.model.param_dim());
        }
        fit_round(0);
        covered_prev_ = covered_now();
    }

    /// run_round; `forced_x` overrides the policy's selection.
    TraceRow step(std::optional<std::size_t> forced_x = std::nullopt) {
        const std::size_t t = ++t_;
        const std::size_t xs = s_.env.x_star();
        TraceRow row;
        row.t = t;

        const Eigen::VectorXd var_prev = posterior_.grid_variances();
        const double b_policy = beta(posterior_, s_.conf, lambda_, tail_bound_init_distance(s_.conf, t - 1));
        row.beta_policy_prev = b_policy;
        row.var_opt_prev = var_prev(static_cast<Eigen::Index>(xs));
        const double b_oracle = beta(posterior_, s_.conf, lambda_, init_dist_);
        if (s_.oracle_diagnostics) {
            row.beta_prev = b_oracle;
            if (!lfbo()) row.covered_prev = covered_prev_;
        }

        std::size_t x;
        if (forced_x) {
            s_.env.grid().check_index(*forced_x);
            x = *forced_x;
        } else if (s_.policy.kind == PolicyKind::Ucb) {
            const double b = s_.policy.ucb_beta ? *s_.policy.ucb_beta : b_policy;
            x = argmax_lowest(g_values_ + b * var_prev.cwiseSqrt());
        } else {
            x = select_ts(g_values_);
        }
        row.x_index = x;

        const double y = observe(s_.env, x, noise_rng_);
        row.y = y;
        const Eigen::VectorXd& f = s_.env.f_values();
        const auto xi = static_cast<Eigen::Index>(x);
        const auto si = static_cast<Eigen::Index>(xs);
        row.regret = s_.env.f_star() - f(xi);
        cum_regret_ += row.regret;
        row.cum_regret = cum_regret_;
        if (x == xs) ++n_opt_;
        row.n_opt = n_opt_;

        if (s_.oracle_diagnostics && !lfbo()) {
            const double upper = (s_.env.f_star() - g_values_(si)) + (g_values_(xi) - f(xi));
            row.decomp_slack = upper - row.regret;
            const double width = std::sqrt(var_prev(si)) + std::sqrt(var_prev(xi));
            row.bound1_holds = row.regret <= b_oracle * width + 1e-12;
            row.bound2_holds = row.regret <= 2.0 * b_oracle * width + 1e-12;
        }

        posterior_.update(x);
        xs_.push_back(x);
        ys_.push_back(y);
        if (fast_ridge_) stats_->add(phi_grid_.row(xi).transpose(), y);

        const FitResult fit = fit_round(t);
        row.lambda = lambda_;
        row.logdet = posterior_.logdet();
        row.var_opt = posterior_.cached_variance(xs);
        row.converged = fit.converged;
        row.solver_iters = fit.solver_iters;
        if (s_.oracle_diagnostics) {
            row.init_dist = init_dist_;
            row.beta = beta(posterior_, s_.conf, lambda_, init_dist_);
            row.favorable = init_dist_ <= 1.0 / std::sqrt(lambda_);
            if (!lfbo()) {
                covered_prev_ = covered_now();
                row.covered = covered_prev_;
                const ParamVector fav = fit_theta(t, s_.env.theta_star()).theta;
                row.fav_sup_err = (grid_values(fav) - f).cwiseAbs().maxCoeff();
            }
        }
        if (!fit.converged && s_.on_nonconvergence == NonConvergencePolicy::Abort) {
            throw Error(ErrorCode::SolverAbort, "solver did not converge at round " + std::to_string(t) +
                                                    " (gradient norm " + std::to_string(fit.final_grad_norm) + ")");
        }
        return row;
    }

    [[nodiscard]] std::size_t round() const noexcept { return t_; }
    [[nodiscard]] const RunSetup& setup() const noexcept { return s_; }
    [[nodiscard]] const PosteriorState& posterior() const noexcept { return posterior_; }
    [[nodiscard]] const Eigen::VectorXd& g_values() const noexcept { return g_values_; }
    [[nodiscard]] const ParamVector& theta() const noexcept { return theta_; }
    [[nodiscard]] const ParamVector& theta_init() const noexcept { return theta_init_; }
    [[nodiscard]] double lambda() const noexcept { return lambda_; }
    [[nodiscard]] double cum_regret() const noexcept { return cum_regret_; }
    [[nodiscard]] std::size_t n_opt() const noexcept { return n_opt_; }
    /// Coverage event of the current surrogate g_t (oracle check against f).
    [[nodiscard]] bool covered() const { return covered_now(); }

private:
    [[nodiscard]] bool lfbo() const noexcept { return s_.policy.kind == PolicyKind::LfboCe; }

    Eigen::VectorXd grid_values(const ParamVector& theta) const {
        if (fast_ridge_) return phi_grid_ * theta;
        return evaluate_rows(s_.model, s_.env.grid().points(), theta);
    }

    Dataset dataset() const {
        Dataset data;
        std::vector<double> targets = ys_;
        if (lfbo() && !ys_.empty()) targets = make_lfbo_labels(ys_, s_.policy.lfbo_quantile).labels;
        for (std::size_t i = 0; i < xs_.size(); ++i) data.add(s_.env.grid().point(xs_[i]), targets[i]);
        return data;
    }

    FitResult fit_theta(std::size_t t, const ParamVector& init) const {
        if (fast_ridge_) {
            FitResult fit;
            fit.theta_init = init;
            fit.lambda = lambda_at(s_.train, t);
            fit.theta = xs_.empty() ? init : closed_form_ridge(*stats_, init, fit.lambda);
            fit.solver_iters = xs_.empty() ? 0 : 1;
            return fit;
        }
        return fit_from_init(s_.model, s_.loss, s_.k_theta, s_.train, dataset(), t, init);
    }

    FitResult fit_round(std::size_t t) {
        ParamVector init = sample_prior(s_.prior, init_rng_);
        const bool force = init_override_ == InitOverride::StarAlways ||
                           (init_override_ == InitOverride::StarAtZero && t == 0);
        if (force && !lfbo()) init = s_.env.theta_star();
        FitResult fit = fit_theta(t, init);
        theta_init_ = fit.theta_init;
        theta_ = fit.theta;
        lambda_ = fit.lambda;
        g_values_ = grid_values(theta_);
        if (!lfbo()) init_dist_ = pseudometric(s_.k_theta, s_.env.theta_star(), theta_init_);
        return fit;
    }

    [[nodiscard]] bool covered_now() const {
        if (lfbo()) return false;
        const double b = beta(posterior_, s_.conf, lambda_, init_dist_);
        const Eigen::VectorXd sd = posterior_.grid_variances().cwiseSqrt();
        const Eigen::VectorXd err = (g_values_ - s_.env.f_values()).cwiseAbs();
        return (err.array() <= 2.0 * b * sd.array()).all();
    }

    RunSetup s_;
    CounterRng init_rng_;
    CounterRng noise_rng_;
    InitOverride init_override_;
    PosteriorState posterior_;
    bool fast_ridge_ = false;
    Eigen::MatrixXd phi_grid_;
    std::optional<RidgeStatistics> stats_;
    std::vector<std::size_t> xs_;
    std::vector<double> ys_;
    std::size_t t_ = 0;
    ParamVector theta_;
    ParamVector theta_init_;
    double lambda_ = 0.0;
    double init_dist_ = 0.0;
    Eigen::VectorXd g_values_;
    double cum_regret_ = 0.0;
    std::size_t n_opt_ = 0;
    bool covered_prev_ = false;
};

inline TraceRow run_round(BanditRun& run, std::optional<std::size_t> forced_x = std::nullopt) {
    return run.step(forced_x);
}

}  // namespace randreg

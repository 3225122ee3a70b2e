#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "randreg/error.hpp"
#include "randreg/kernels.hpp"
#include "randreg/losses.hpp"
#include "randreg/models.hpp"
#include "randreg/random.hpp"

namespace randreg {

// ---------------------------------------------------------------------------
// Regularization schedules.

/// lambda_t = scale * log(t + 2)^q.
struct LogPowerSchedule {
    double q = 2.0;
    double scale = 1.0;
};

struct ConstantSchedule {
    double lambda = 1.0;
};

struct ClosedFormRidge {};

/// Damped Newton. Curvature is l''(g) grad g grad g^T plus the penalty Hessian (exact
/// for models linear in theta); steps are halved while they increase the objective.
struct NewtonSolver {
    int max_iter = 100;
    double grad_tol = 1e-9;
};

struct GradientDescentSolver {
    int max_iter = 10000;
    double step = 1e-2;
    double grad_tol = 1e-9;
};

using Schedule = std::variant<LogPowerSchedule, ConstantSchedule>;
using Solver = std::variant<ClosedFormRidge, NewtonSolver, GradientDescentSolver>;

struct TrainConfig {
    Schedule schedule = LogPowerSchedule{};
    Solver solver = NewtonSolver{};
    /// Global floor lambda_0 <= inf_t lambda_t; defaults to the schedule value at t = 0.
    std::optional<double> lambda0_override;

    void validate() const {
        if (const auto* lp = std::get_if<LogPowerSchedule>(&schedule)) {
            require(lp->q > 0.0 && lp->scale > 0.0, ErrorCode::InvalidArgument,
                    "log-power schedule needs q > 0 and scale > 0");
        } else {
            require(std::get<ConstantSchedule>(schedule).lambda > 0.0, ErrorCode::InvalidArgument,
                    "constant schedule needs lambda > 0");
        }
        if (lambda0_override) {
            require(*lambda0_override > 0.0, ErrorCode::InvalidArgument, "lambda0 must be positive");
            require(*lambda0_override <= schedule_value(0) * (1.0 + 1e-12), ErrorCode::InvalidArgument,
                    "lambda0 must not exceed the schedule's infimum");
        }
        if (const auto* n = std::get_if<NewtonSolver>(&solver)) {
            require(n->max_iter >= 1 && n->grad_tol > 0.0, ErrorCode::InvalidArgument, "invalid Newton settings");
        } else if (const auto* g = std::get_if<GradientDescentSolver>(&solver)) {
            require(g->max_iter >= 1 && g->grad_tol > 0.0 && g->step > 0.0, ErrorCode::InvalidArgument,
                    "invalid gradient-descent settings");
        }
    }

    [[nodiscard]] double schedule_value(std::size_t t) const { return schedule_at(static_cast<double>(t)); }

    /// Schedule at a real-valued round index t >= 0.
    [[nodiscard]] double schedule_at(double t) const {
        if (const auto* lp = std::get_if<LogPowerSchedule>(&schedule)) {
            return lp->scale * std::pow(std::log(t + 2.0), lp->q);
        }
        return std::get<ConstantSchedule>(schedule).lambda;
    }

    [[nodiscard]] double lambda0() const { return lambda0_override ? *lambda0_override : schedule_value(0); }

    /// Exponent q of a log-power schedule (0 for constant schedules).
    [[nodiscard]] double log_exponent() const {
        if (const auto* lp = std::get_if<LogPowerSchedule>(&schedule)) return lp->q;
        return 0.0;
    }
};

/// lambda_t; both schedules are non-decreasing with lambda_t >= lambda_0.
inline double lambda_at(const TrainConfig& config, std::size_t t) { return config.schedule_value(t); }

// ---------------------------------------------------------------------------
// Data and fit results.

struct Dataset {
    std::vector<Eigen::VectorXd> x;
    std::vector<double> y;

    void add(Eigen::VectorXd point, double value) {
        x.push_back(std::move(point));
        y.push_back(value);
    }
    [[nodiscard]] std::size_t size() const noexcept { return y.size(); }
};

struct FitResult {
    ParamVector theta;
    ParamVector theta_init;
    double lambda = 0.0;
    int solver_iters = 0;
    double final_grad_norm = 0.0;
    bool converged = true;
    /// Local minimizer of a problem that is non-convex in theta (no guarantee applies).
    bool heuristic = false;
};

/// Sufficient statistics Phi^T Phi and Phi^T y of a linear-feature dataset.
struct RidgeStatistics {
    Eigen::MatrixXd gram;
    Eigen::VectorXd rhs;

    explicit RidgeStatistics(Eigen::Index dim) : gram(Eigen::MatrixXd::Zero(dim, dim)), rhs(Eigen::VectorXd::Zero(dim)) {}

    void add(const Eigen::VectorXd& phi, double y) {
        gram.selfadjointView<Eigen::Lower>().rankUpdate(phi);
        rhs += y * phi;
    }

    [[nodiscard]] Eigen::MatrixXd full_gram() const { return gram.selfadjointView<Eigen::Lower>(); }
};

/// theta_init + (lambda I + Phi^T Phi)^{-1} Phi^T (y - Phi theta_init).
inline ParamVector closed_form_ridge(const RidgeStatistics& stats, const ParamVector& theta_init, double lambda) {
    require(lambda > 0.0, ErrorCode::InvalidArgument, "ridge lambda must be positive");
    const Eigen::MatrixXd g = stats.full_gram();
    Eigen::MatrixXd h = g;
    h.diagonal().array() += lambda;
    const Eigen::VectorXd residual = stats.rhs - g * theta_init;
    return theta_init + h.llt().solve(residual);
}

namespace detail {

inline void check_closed_form(const ModelSpec& model, const LossSpec& loss, const ParamKernelSpec& k_theta) {
    if (!model.is_linear_in_params() || loss.family != LossFamily::SquaredError ||
        k_theta.family != KernelFamily::Linear || k_theta.output_scale != 1.0) {
        throw Error(ErrorCode::IncompatibleConfiguration,
                    "closed-form ridge needs a linear-feature model, squared-error loss and unit linear k_Theta");
    }
}

struct Objective {
    const ModelSpec& model;
    const LossSpec& loss;
    const ParamKernelSpec& k_theta;
    const Dataset& data;
    const ParamVector& anchor;
    double lambda;

    [[nodiscard]] double value(const ParamVector& theta) const {
        double v = 0.5 * lambda * squared_pseudometric_raw(k_theta, theta, anchor);
        for (std::size_t i = 0; i < data.size(); ++i) v += randreg::loss(loss, evaluate(model, data.x[i], theta), data.y[i]);
        return v;
    }

    [[nodiscard]] Eigen::VectorXd gradient(const ParamVector& theta) const {
        Eigen::VectorXd grad = 0.5 * lambda * penalty_gradient(k_theta, theta, anchor);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const Eigen::VectorXd dg = param_grad(model, data.x[i], theta);
            const double s = evaluate(model, data.x[i], theta);
            grad += loss_d1(loss, s, data.y[i]) * dg;
        }
        return grad;
    }

    /// Gradient and generalized Gauss-Newton curvature.
    void gradient_and_curvature(const ParamVector& theta, Eigen::VectorXd& grad, Eigen::MatrixXd& curv) const {
        grad = 0.5 * lambda * penalty_gradient(k_theta, theta, anchor);
        curv = 0.5 * lambda * penalty_hessian(k_theta, theta, anchor);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const Eigen::VectorXd dg = param_grad(model, data.x[i], theta);
            const double s = evaluate(model, data.x[i], theta);
            grad += loss_d1(loss, s, data.y[i]) * dg;
            curv.selfadjointView<Eigen::Lower>().rankUpdate(dg, loss_d2(loss, s, data.y[i]));
        }
        curv = curv.selfadjointView<Eigen::Lower>();
    }
};

inline Eigen::VectorXd damped_solve(const Eigen::MatrixXd& curv, const Eigen::VectorXd& grad) {
    Eigen::LLT<Eigen::MatrixXd> llt(curv);
    if (llt.info() == Eigen::Success) return llt.solve(grad);
    const double scale = std::max(1.0, curv.diagonal().cwiseAbs().maxCoeff());
    for (double mu = 1e-8 * scale; mu < 1e12 * scale; mu *= 10.0) {
        Eigen::MatrixXd damped = curv;
        damped.diagonal().array() += mu;
        llt.compute(damped);
        if (llt.info() == Eigen::Success) return llt.solve(grad);
    }
    return grad;
}

inline void run_newton(const Objective& obj, const NewtonSolver& cfg, FitResult& fit) {
    Eigen::VectorXd grad;
    Eigen::MatrixXd curv;
    double current = obj.value(fit.theta);
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        obj.gradient_and_curvature(fit.theta, grad, curv);
        fit.final_grad_norm = grad.norm();
        if (fit.final_grad_norm <= cfg.grad_tol) {
            fit.converged = true;
            return;
        }
        const Eigen::VectorXd step = damped_solve(curv, grad);
        double t = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
            const ParamVector candidate = fit.theta - t * step;
            const double value = obj.value(candidate);
            if (value <= current) {
                fit.theta = candidate;
                current = value;
                accepted = true;
                break;
            }
        }
        fit.solver_iters = iter + 1;
        if (!accepted) break;
    }
    fit.final_grad_norm = obj.gradient(fit.theta).norm();
    fit.converged = fit.final_grad_norm <= cfg.grad_tol;
}

inline void run_gradient_descent(const Objective& obj, const GradientDescentSolver& cfg, FitResult& fit) {
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        const Eigen::VectorXd grad = obj.gradient(fit.theta);
        fit.final_grad_norm = grad.norm();
        if (fit.final_grad_norm <= cfg.grad_tol) {
            fit.converged = true;
            fit.solver_iters = iter;
            return;
        }
        fit.theta -= cfg.step * grad;
        fit.solver_iters = iter + 1;
    }
    fit.final_grad_norm = obj.gradient(fit.theta).norm();
    fit.converged = fit.final_grad_norm <= cfg.grad_tol;
}

}  // namespace detail

/// Gradient of the randomized objective
///   L(theta) = (lambda / 2) d(theta, theta_init)^2 + sum_i l(g(x_i, theta), y_i).
inline Eigen::VectorXd objective_gradient(const ModelSpec& model, const LossSpec& loss, const ParamKernelSpec& k_theta,
                                          const Dataset& data, const ParamVector& theta_init, double lambda,
                                          const ParamVector& theta) {
    return detail::Objective{model, loss, k_theta, data, theta_init, lambda}.gradient(theta);
}

inline double objective_value(const ModelSpec& model, const LossSpec& loss, const ParamKernelSpec& k_theta,
                              const Dataset& data, const ParamVector& theta_init, double lambda,
                              const ParamVector& theta) {
    return detail::Objective{model, loss, k_theta, data, theta_init, lambda}.value(theta);
}

/// Minimizes the randomized objective for a given initialization theta_init. Iterative
/// solvers start from `start` (default: theta_init).
inline FitResult fit_from_init(const ModelSpec& model, const LossSpec& loss, const ParamKernelSpec& k_theta,
                               const TrainConfig& config, const Dataset& data, std::size_t t,
                               const ParamVector& theta_init, const std::optional<ParamVector>& start = std::nullopt) {
    require(theta_init.size() == model.param_dim(), ErrorCode::DimensionMismatch,
            "initialization does not match the model's parameter dimension");
    if (loss.family == LossFamily::CrossEntropy) {
        require(model.clamp().has_value(), ErrorCode::IncompatibleConfiguration,
                "cross-entropy training requires a model with an output clamp");
    }
    FitResult fit;
    fit.theta_init = theta_init;
    fit.lambda = lambda_at(config, t);
    fit.heuristic = model.kind() == ModelKind::SmoothMLP || !model.is_linear_in_params() ||
                    k_theta.family != KernelFamily::Linear;
    if (data.size() == 0) {
        // Only the regularizer remains: its minimizer is the initialization.
        fit.theta = theta_init;
        fit.final_grad_norm = 0.0;
        fit.converged = true;
        return fit;
    }
    if (std::holds_alternative<ClosedFormRidge>(config.solver)) {
        detail::check_closed_form(model, loss, k_theta);
        RidgeStatistics stats(model.param_dim());
        for (std::size_t i = 0; i < data.size(); ++i) stats.add(feature_vector(model.features(), data.x[i]), data.y[i]);
        fit.theta = closed_form_ridge(stats, theta_init, fit.lambda);
        fit.solver_iters = 1;
        fit.final_grad_norm = objective_gradient(model, loss, k_theta, data, theta_init, fit.lambda, fit.theta).norm();
        fit.converged = true;
        return fit;
    }
    fit.theta = start ? *start : theta_init;
    require(fit.theta.size() == model.param_dim(), ErrorCode::DimensionMismatch, "solver start has wrong dimension");
    const detail::Objective obj{model, loss, k_theta, data, theta_init, fit.lambda};
    if (const auto* newton = std::get_if<NewtonSolver>(&config.solver)) {
        detail::run_newton(obj, *newton, fit);
    } else {
        detail::run_gradient_descent(obj, std::get<GradientDescentSolver>(config.solver), fit);
    }
    return fit;
}

/// Draws theta_{t,0} ~ Pi_0 from `rng` and fits the randomized regularized objective.
inline FitResult fit_randomized(const ModelSpec& model, const LossSpec& loss, const ParamKernelSpec& k_theta,
                                const TrainConfig& config, const PriorSpec& prior, const Dataset& data, std::size_t t,
                                CounterRng& rng) {
    require(prior.dim == model.param_dim(), ErrorCode::DimensionMismatch, "prior dimension does not match model");
    const ParamVector theta_init = sample_prior(prior, rng);
    return fit_from_init(model, loss, k_theta, config, data, t, theta_init);
}

}  // namespace randreg

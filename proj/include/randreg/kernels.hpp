#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

#include "randreg/error.hpp"

namespace randreg {

/// Relative eigenvalue tolerance for PSD checks: lambda_min >= -kPsdTolerance * trace.
inline constexpr double kPsdTolerance = 1e-8;

enum class KernelFamily { Linear, RBF, Matern };

inline const char* to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::Linear: return "linear";
        case KernelFamily::RBF: return "rbf";
        case KernelFamily::Matern: return "matern";
    }
    return "unknown";
}

/// Kernel family plus hyperparameters. Used both over parameters (k_Theta) and over
/// the input domain (the reference kernel k). Matern smoothness is restricted to
/// 1/2, 3/2 and 5/2 so that every evaluation is closed form.
///
/// The linear kernel is s^2 <a, b>; the stationary ones are s^2 rho(|a - b| / l).
struct KernelSpec {
    KernelFamily family = KernelFamily::Linear;
    double lengthscale = 1.0;
    double nu = 2.5;
    double output_scale = 1.0;
    /// Registered input dimension; 0 accepts any (matching) dimension.
    Eigen::Index dim = 0;

    static KernelSpec linear(Eigen::Index dim = 0) { return {KernelFamily::Linear, 1.0, 2.5, 1.0, dim}; }
    static KernelSpec rbf(double lengthscale, double output_scale = 1.0, Eigen::Index dim = 0) {
        return {KernelFamily::RBF, lengthscale, 2.5, output_scale, dim};
    }
    static KernelSpec matern(double nu, double lengthscale, double output_scale = 1.0, Eigen::Index dim = 0) {
        return {KernelFamily::Matern, lengthscale, nu, output_scale, dim};
    }

    void validate() const {
        require(output_scale > 0.0 && std::isfinite(output_scale), ErrorCode::InvalidArgument,
                "kernel output_scale must be positive");
        if (family != KernelFamily::Linear) {
            require(lengthscale > 0.0 && std::isfinite(lengthscale), ErrorCode::InvalidArgument,
                    "kernel lengthscale must be positive");
        }
        if (family == KernelFamily::Matern) {
            require(nu == 0.5 || nu == 1.5 || nu == 2.5, ErrorCode::InvalidArgument,
                    "matern smoothness must be one of 0.5, 1.5, 2.5");
        }
        require(dim >= 0, ErrorCode::InvalidArgument, "kernel dimension must be non-negative");
    }

    [[nodiscard]] bool stationary() const noexcept { return family != KernelFamily::Linear; }
};

using ParamKernelSpec = KernelSpec;

namespace detail {

inline void check_pair(const KernelSpec& spec, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "kernel arguments have sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    if (spec.dim != 0 && a.size() != spec.dim) {
        throw Error(ErrorCode::DimensionMismatch, "kernel registered for dimension " + std::to_string(spec.dim) +
                                                      ", got " + std::to_string(a.size()));
    }
}

/// Radial profile of a stationary kernel at distance r.
inline double radial_value(const KernelSpec& spec, double r) {
    const double s2 = spec.output_scale * spec.output_scale;
    const double l = spec.lengthscale;
    if (spec.family == KernelFamily::RBF) return s2 * std::exp(-0.5 * r * r / (l * l));
    if (spec.nu == 0.5) return s2 * std::exp(-r / l);
    if (spec.nu == 1.5) {
        const double z = std::sqrt(3.0) * r / l;
        return s2 * (1.0 + z) * std::exp(-z);
    }
    const double z = std::sqrt(5.0) * r / l;
    return s2 * (1.0 + z + z * z / 3.0) * std::exp(-z);
}

/// First and second radial terms: grad_a k(a, b) = k1 * (a - b) and
/// hess_a k(a, b) = k1 * I + k2 * (a - b)(a - b)^T.
struct RadialDerivatives {
    double k1 = 0.0;
    double k2 = 0.0;
};

inline RadialDerivatives radial_derivatives(const KernelSpec& spec, double r) {
    const double s2 = spec.output_scale * spec.output_scale;
    const double l = spec.lengthscale;
    if (spec.family == KernelFamily::RBF) {
        const double k = s2 * std::exp(-0.5 * r * r / (l * l));
        return {-k / (l * l), k / (l * l * l * l)};
    }
    if (spec.nu == 0.5) {
        throw Error(ErrorCode::IncompatibleConfiguration,
                    "matern-1/2 kernel is not differentiable at coinciding arguments");
    }
    if (spec.nu == 1.5) {
        const double a = std::sqrt(3.0) / l;
        const double e = std::exp(-a * r);
        return {-s2 * a * a * e, r > 0.0 ? s2 * a * a * a * e / r : 0.0};
    }
    const double a = std::sqrt(5.0) / l;
    const double e = std::exp(-a * r);
    return {-(s2 * a * a / 3.0) * (1.0 + a * r) * e, (s2 * a * a * a * a / 3.0) * e};
}

}  // namespace detail

inline double eval_kernel(const KernelSpec& spec, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    detail::check_pair(spec, a, b);
    if (spec.family == KernelFamily::Linear) return spec.output_scale * spec.output_scale * a.dot(b);
    return detail::radial_value(spec, (a - b).norm());
}

/// k_Theta(theta, theta').
inline double eval_param_kernel(const ParamKernelSpec& spec, const Eigen::VectorXd& theta,
                                const Eigen::VectorXd& theta_prime) {
    return eval_kernel(spec, theta, theta_prime);
}

/// Squared RKHS pseudometric d^2 = k(a,a) - 2k(a,b) + k(b,b), unclamped.
inline double squared_pseudometric_raw(const KernelSpec& spec, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    detail::check_pair(spec, a, b);
    if (spec.family == KernelFamily::Linear) {
        return spec.output_scale * spec.output_scale * (a - b).squaredNorm();
    }
    const double s2 = spec.output_scale * spec.output_scale;
    return 2.0 * s2 - 2.0 * detail::radial_value(spec, (a - b).norm());
}

/// d(theta, theta') induced by the RKHS norm of k_Theta. Tiny negative radicands from
/// roundoff are clamped to zero; anything below -1e-12 signals a PSD violation.
inline double pseudometric(const ParamKernelSpec& spec, const Eigen::VectorXd& theta,
                           const Eigen::VectorXd& theta_prime) {
    const double d2 = squared_pseudometric_raw(spec, theta, theta_prime);
    if (d2 < -1e-12) {
        throw Error(ErrorCode::NotPositiveDefinite, "negative pseudometric radicand " + std::to_string(d2));
    }
    return std::sqrt(std::max(d2, 0.0));
}

/// Gradient in theta of d(theta, anchor)^2.
inline Eigen::VectorXd penalty_gradient(const ParamKernelSpec& spec, const Eigen::VectorXd& theta,
                                        const Eigen::VectorXd& anchor) {
    detail::check_pair(spec, theta, anchor);
    const Eigen::VectorXd diff = theta - anchor;
    const double s2 = spec.output_scale * spec.output_scale;
    if (spec.family == KernelFamily::Linear) return 2.0 * s2 * diff;
    const auto rd = detail::radial_derivatives(spec, diff.norm());
    return -2.0 * rd.k1 * diff;
}

/// Hessian in theta of d(theta, anchor)^2. Positive definite only near the anchor for
/// stationary kernels.
inline Eigen::MatrixXd penalty_hessian(const ParamKernelSpec& spec, const Eigen::VectorXd& theta,
                                       const Eigen::VectorXd& anchor) {
    detail::check_pair(spec, theta, anchor);
    const Eigen::Index n = theta.size();
    const double s2 = spec.output_scale * spec.output_scale;
    if (spec.family == KernelFamily::Linear) return 2.0 * s2 * Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd diff = theta - anchor;
    const auto rd = detail::radial_derivatives(spec, diff.norm());
    return -2.0 * (rd.k1 * Eigen::MatrixXd::Identity(n, n) + rd.k2 * diff * diff.transpose());
}

/// Gram matrix over the rows of `points`.
inline Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& points) {
    const Eigen::Index n = points.rows();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd xi = points.row(i).transpose();
        for (Eigen::Index j = 0; j <= i; ++j) {
            k(i, j) = eval_kernel(spec, xi, points.row(j).transpose());
            k(j, i) = k(i, j);
        }
    }
    return k;
}

inline double min_eigenvalue(const Eigen::MatrixXd& symmetric) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

/// lambda_min(K) >= -tol * |trace(K)|.
inline bool is_psd(const Eigen::MatrixXd& symmetric, double tol = kPsdTolerance) {
    return min_eigenvalue(symmetric) >= -tol * std::abs(symmetric.trace());
}

/// Reference kernel k over the domain, optionally carrying a certified domination
/// constant b with k_G <= b^2 k on the registered grid.
struct ReferenceKernelSpec {
    KernelSpec kernel;
    std::optional<double> domination_constant;

    [[nodiscard]] double scale_squared() const {
        return domination_constant ? (*domination_constant) * (*domination_constant) : 1.0;
    }
};

}  // namespace randreg

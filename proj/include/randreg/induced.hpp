#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>

#include "randreg/domain.hpp"
#include "randreg/error.hpp"
#include "randreg/kernels.hpp"
#include "randreg/models.hpp"

namespace randreg {

enum class InducedMode { ExactLinearFeature, MonteCarloQuadrature };

/// Quadrature estimate with its Monte-Carlo standard error.
struct QuadratureValue {
    double value = 0.0;
    double standard_error = 0.0;
};

/// Model-induced kernel k_G(x, x') = <g(x, .), g(x', .)> over a registered grid.
///
/// ExactLinearFeature: g(x, theta) = theta . phi(x) under the linear k_Theta, so
/// k_G(x, x') = phi(x) . phi(x') exactly.
///
/// MonteCarloQuadrature: k_G(x, x') ~ (1/S) sum_s g(x, theta_s) g(x', theta_s) with
/// theta_s drawn from the quadrature measure. The draws are fixed by the measure's seed at
/// construction (counter-based, so they are regenerated bit-identically instead of stored).
/// For a linear model under a standard isotropic Gaussian measure this second-moment kernel
/// coincides with the exact one.
class InducedKernel {
public:
    static InducedKernel exact(ModelSpec model, ParamKernelSpec param_kernel, DomainGrid grid) {
        require(model.is_linear_in_params(), ErrorCode::IncompatibleConfiguration,
                "exact induced kernel needs a linear-feature model without output clamp");
        require(param_kernel.family == KernelFamily::Linear, ErrorCode::IncompatibleConfiguration,
                "exact induced kernel needs a linear parameter kernel");
        require(static_cast<Eigen::Index>(grid.dim()) == model.input_dim(), ErrorCode::DimensionMismatch,
                "grid dimension does not match model input dimension");
        param_kernel.validate();
        InducedKernel ik(std::move(model), param_kernel, std::move(grid));
        ik.mode_ = InducedMode::ExactLinearFeature;
        ik.features_.resize(static_cast<Eigen::Index>(ik.grid_.size()), ik.model_.param_dim());
        // H_Theta of s^2 <a, b> carries norm |v| / s on theta -> v . theta, so k_G = phi . phi' / s^2.
        const double inv_s = 1.0 / param_kernel.output_scale;
        for (std::size_t i = 0; i < ik.grid_.size(); ++i) {
            ik.features_.row(static_cast<Eigen::Index>(i)) =
                inv_s * feature_vector(ik.model_.features(), ik.grid_.point(i)).transpose();
        }
        return ik;
    }

    static InducedKernel quadrature(ModelSpec model, ParamKernelSpec param_kernel, DomainGrid grid,
                                    PriorSpec measure, std::size_t samples) {
        require(samples > 0, ErrorCode::InvalidArgument, "quadrature induced kernel needs at least one sample");
        require(measure.dim == model.param_dim(), ErrorCode::DimensionMismatch,
                "quadrature measure dimension does not match the model");
        require(static_cast<Eigen::Index>(grid.dim()) == model.input_dim(), ErrorCode::DimensionMismatch,
                "grid dimension does not match model input dimension");
        param_kernel.validate();
        measure.validate();
        InducedKernel ik(std::move(model), param_kernel, std::move(grid));
        ik.mode_ = InducedMode::MonteCarloQuadrature;
        ik.measure_ = std::move(measure);
        ik.samples_ = samples;
        return ik;
    }

    [[nodiscard]] InducedMode mode() const noexcept { return mode_; }
    [[nodiscard]] const ModelSpec& model() const noexcept { return model_; }
    [[nodiscard]] const ParamKernelSpec& param_kernel() const noexcept { return param_kernel_; }
    [[nodiscard]] const DomainGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::size_t quadrature_samples() const noexcept { return samples_; }

    /// k_G(x_i, x_j) for grid indices.
    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const {
        grid_.check_index(i);
        grid_.check_index(j);
        if (mode_ == InducedMode::ExactLinearFeature) {
            return features_.row(static_cast<Eigen::Index>(i)).dot(features_.row(static_cast<Eigen::Index>(j)));
        }
        return quadrature_value(i, j).value;
    }

    [[nodiscard]] QuadratureValue quadrature_value(std::size_t i, std::size_t j) const {
        require(mode_ == InducedMode::MonteCarloQuadrature, ErrorCode::IncompatibleConfiguration,
                "quadrature value requested from an exact induced kernel");
        grid_.check_index(i);
        grid_.check_index(j);
        const Eigen::VectorXd xi = grid_.point(i);
        const Eigen::VectorXd xj = grid_.point(j);
        double mean = 0.0, m2 = 0.0;
        for (std::size_t s = 0; s < samples_; ++s) {
            const ParamVector theta = sample_prior(*measure_, s);
            const double v = evaluate(model_, xi, theta) * evaluate(model_, xj, theta);
            const double delta = v - mean;
            mean += delta / static_cast<double>(s + 1);
            m2 += delta * (v - mean);
        }
        QuadratureValue out;
        out.value = mean;
        if (samples_ > 1) {
            out.standard_error = std::sqrt(m2 / static_cast<double>(samples_ - 1) / static_cast<double>(samples_));
        }
        return out;
    }

    /// Gram matrix over the registered grid.
    [[nodiscard]] Eigen::MatrixXd gram() const {
        if (mode_ == InducedMode::ExactLinearFeature) return features_ * features_.transpose();
        const auto m = static_cast<Eigen::Index>(grid_.size());
        Eigen::MatrixXd k = Eigen::MatrixXd::Zero(m, m);
        Eigen::VectorXd values(m);
        for (std::size_t s = 0; s < samples_; ++s) {
            const ParamVector theta = sample_prior(*measure_, s);
            values = evaluate_rows(model_, grid_.points(), theta);
            k.selfadjointView<Eigen::Lower>().rankUpdate(values);
        }
        k = k.selfadjointView<Eigen::Lower>();
        return k / static_cast<double>(samples_);
    }

    /// Feature rows phi(x_i) / s (exact mode only).
    [[nodiscard]] const Eigen::MatrixXd& feature_rows() const {
        require(mode_ == InducedMode::ExactLinearFeature, ErrorCode::IncompatibleConfiguration,
                "feature rows exist only in exact mode");
        return features_;
    }

private:
    InducedKernel(ModelSpec model, ParamKernelSpec param_kernel, DomainGrid grid)
        : model_(std::move(model)), param_kernel_(param_kernel), grid_(std::move(grid)) {}

    ModelSpec model_;
    ParamKernelSpec param_kernel_;
    DomainGrid grid_;
    InducedMode mode_ = InducedMode::ExactLinearFeature;
    Eigen::MatrixXd features_;
    std::optional<PriorSpec> measure_;
    std::size_t samples_ = 0;
};

/// k_G(x, x') for registered coordinates; throws UnregisteredPoint otherwise.
inline double eval_induced_kernel(const InducedKernel& ik, const Eigen::VectorXd& x, const Eigen::VectorXd& x_prime) {
    return ik(ik.grid().index_of(x), ik.grid().index_of(x_prime));
}

/// Unscaled reference-kernel Gram matrix over a grid.
inline Eigen::MatrixXd reference_gram(const ReferenceKernelSpec& ref, const DomainGrid& grid) {
    ref.kernel.validate();
    return gram(ref.kernel, grid.points());
}

/// Outcome of a grid domination check. A pass is a necessary condition for
/// k_G <= b^2 k on the whole domain, not a proof of it.
struct CertificateResult {
    bool pass = false;
    double b = 0.0;
    double min_eigenvalue = 0.0;
    double threshold = 0.0;  // -tol * trace(b^2 K)
};

/// Checks lambda_min(b^2 K - K_G) >= -tol * trace(b^2 K) from precomputed Gram matrices.
inline CertificateResult certify_domination(const Eigen::MatrixXd& k_ref, const Eigen::MatrixXd& k_induced, double b,
                                            double tol = kPsdTolerance) {
    require(b > 0.0 && std::isfinite(b), ErrorCode::InvalidArgument, "domination constant must be positive");
    require(k_ref.rows() > 0 && k_ref.rows() == k_induced.rows() && k_ref.cols() == k_induced.cols(),
            ErrorCode::DimensionMismatch, "Gram matrices must be non-empty and of equal shape");
    const Eigen::MatrixXd scaled = (b * b) * k_ref;
    CertificateResult out;
    out.b = b;
    out.min_eigenvalue = min_eigenvalue(scaled - k_induced);
    out.threshold = -tol * std::abs(scaled.trace());
    out.pass = out.min_eigenvalue >= out.threshold;
    return out;
}

inline CertificateResult certify_domination(const InducedKernel& ik, const ReferenceKernelSpec& ref,
                                            const DomainGrid& grid, double b) {
    require(grid.points() == ik.grid().points(), ErrorCode::UnregisteredPoint,
            "certification grid differs from the induced kernel's registered grid");
    return certify_domination(reference_gram(ref, grid), ik.gram(), b);
}

/// Smallest grid-certified b in [low, high], by bisection on log b to relative precision
/// `rel_tol`. Returns nullopt if even `high` fails.
inline std::optional<double> smallest_certified_scale(const Eigen::MatrixXd& k_ref, const Eigen::MatrixXd& k_induced,
                                                      double low = std::ldexp(1.0, -10),
                                                      double high = std::ldexp(1.0, 10), double rel_tol = 1e-3) {
    require(low > 0.0 && high > low, ErrorCode::InvalidArgument, "bisection bracket must satisfy 0 < low < high");
    if (certify_domination(k_ref, k_induced, low).pass) return low;
    if (!certify_domination(k_ref, k_induced, high).pass) return std::nullopt;
    double lo = low, hi = high;
    while (hi / lo > 1.0 + rel_tol) {
        const double mid = std::sqrt(lo * hi);
        if (certify_domination(k_ref, k_induced, mid).pass) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

}  // namespace randreg

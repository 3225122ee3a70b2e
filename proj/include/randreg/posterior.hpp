#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "randreg/domain.hpp"
#include "randreg/error.hpp"
#include "randreg/induced.hpp"
#include "randreg/kernels.hpp"
#include "randreg/models.hpp"

namespace randreg {

/// Kernel over a registered grid, stored as its Gram matrix. Built from the exact (or
/// quadrature) induced kernel or from a reference kernel scaled by its domination constant.
class GridKernel {
public:
    explicit GridKernel(Eigen::MatrixXd gram) : gram_(std::make_shared<const Eigen::MatrixXd>(std::move(gram))) {
        require(gram_->rows() > 0 && gram_->rows() == gram_->cols(), ErrorCode::DimensionMismatch,
                "grid kernel needs a square non-empty Gram matrix");
    }

    static GridKernel from_induced(const InducedKernel& ik) { return GridKernel(ik.gram()); }

    /// b^2 k over the grid (b = 1 when no domination constant is set).
    static GridKernel from_reference(const ReferenceKernelSpec& ref, const DomainGrid& grid) {
        return GridKernel(ref.scale_squared() * reference_gram(ref, grid));
    }

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(gram_->rows()); }
    [[nodiscard]] const Eigen::MatrixXd& gram() const noexcept { return *gram_; }
    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const {
        return (*gram_)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

private:
    std::shared_ptr<const Eigen::MatrixXd> gram_;
};

/// Posterior predictive variance of a zero-mean GP with ridge r = lambda_0 / alpha:
///   sigma_t^2(x) = k(x, x) - k_t(x)^T (K_t + r I)^{-1} k_t(x).
///
/// Keeps a growing lower Cholesky factor of K_t + r I and the running
/// log det(I + K_t / r). Optionally also keeps the full grid covariance, updated by a
/// rank-one downdate per observation, so that all-point variances cost O(m) instead of
/// m triangular solves.
class PosteriorState {
public:
    PosteriorState(GridKernel kernel, double ridge, bool grid_cache = true)
        : kernel_(std::move(kernel)), ridge_(ridge), grid_cache_(grid_cache) {
        require(ridge > 0.0 && std::isfinite(ridge), ErrorCode::InvalidArgument, "posterior ridge must be positive");
        if (grid_cache_) covariance_ = kernel_.gram();
    }

    [[nodiscard]] double ridge() const noexcept { return ridge_; }
    [[nodiscard]] std::size_t rounds() const noexcept { return points_.size(); }
    [[nodiscard]] const std::vector<std::size_t>& points() const noexcept { return points_; }
    [[nodiscard]] double logdet() const noexcept { return logdet_; }
    [[nodiscard]] const GridKernel& kernel() const noexcept { return kernel_; }

    /// Lower Cholesky factor of K_t + r I.
    [[nodiscard]] Eigen::MatrixXd cholesky() const {
        const auto t = static_cast<Eigen::Index>(points_.size());
        return chol_.topLeftCorner(t, t).triangularView<Eigen::Lower>();
    }

    /// K_t + r I assembled directly from the kernel.
    [[nodiscard]] Eigen::MatrixXd regularized_gram() const {
        const auto t = static_cast<Eigen::Index>(points_.size());
        Eigen::MatrixXd k(t, t);
        for (Eigen::Index a = 0; a < t; ++a) {
            for (Eigen::Index b = 0; b < t; ++b) k(a, b) = kernel_(points_[a], points_[b]);
        }
        k.diagonal().array() += ridge_;
        return k;
    }

    /// Appends grid point `index`: rank-one extension of the factor, O(t^2).
    void update(std::size_t index) {
        check(index);
        const auto t = static_cast<Eigen::Index>(points_.size());
        reserve(t + 1);
        Eigen::VectorXd kt(t);
        for (Eigen::Index a = 0; a < t; ++a) kt(a) = kernel_(points_[a], index);
        if (t > 0) {
            chol_.topLeftCorner(t, t).triangularView<Eigen::Lower>().solveInPlace(kt);
        }
        const double schur = kernel_(index, index) + ridge_ - kt.squaredNorm();
        if (!(schur > 0.0) || !std::isfinite(schur)) {
            throw Error(ErrorCode::NotPositiveDefinite,
                        "Cholesky extension breakdown at round " + std::to_string(t + 1) + ": k(x,x) = " +
                            std::to_string(kernel_(index, index)) + ", ridge = " + std::to_string(ridge_) +
                            ", Schur complement = " + std::to_string(schur));
        }
        const double diag = std::sqrt(schur);
        chol_.row(t).head(t) = kt.transpose();
        chol_(t, t) = diag;
        logdet_ += 2.0 * std::log(diag) - std::log(ridge_);
        points_.push_back(index);

        if (grid_cache_) {
            const auto j = static_cast<Eigen::Index>(index);
            const Eigen::VectorXd col = covariance_.col(j);
            covariance_.noalias() -= col * (col.transpose() / (col(j) + ridge_));
        }
    }

    void update(const DomainGrid& grid, const Eigen::VectorXd& x) { update(grid.index_of(x)); }

    /// sigma_t^2 at grid point `index` by a triangular solve.
    [[nodiscard]] double variance(std::size_t index) const {
        check(index);
        const auto t = static_cast<Eigen::Index>(points_.size());
        double v = kernel_(index, index);
        if (t > 0) {
            Eigen::VectorXd kt(t);
            for (Eigen::Index a = 0; a < t; ++a) kt(a) = kernel_(points_[a], index);
            chol_.topLeftCorner(t, t).triangularView<Eigen::Lower>().solveInPlace(kt);
            v -= kt.squaredNorm();
        }
        return clamp_variance(v);
    }

    /// sigma_t^2 at every grid point.
    [[nodiscard]] Eigen::VectorXd grid_variances() const {
        const auto m = static_cast<Eigen::Index>(kernel_.size());
        Eigen::VectorXd out(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            out(i) = grid_cache_ ? clamp_variance(covariance_(i, i)) : variance(static_cast<std::size_t>(i));
        }
        return out;
    }

    [[nodiscard]] double cached_variance(std::size_t index) const {
        check(index);
        if (!grid_cache_) return variance(index);
        const auto i = static_cast<Eigen::Index>(index);
        return clamp_variance(covariance_(i, i));
    }

private:
    void check(std::size_t index) const {
        if (index >= kernel_.size()) {
            throw Error(ErrorCode::UnregisteredPoint, "posterior query at unregistered grid index " +
                                                          std::to_string(index));
        }
    }

    void reserve(Eigen::Index n) {
        if (chol_.rows() >= n) return;
        const Eigen::Index cap = std::max<Eigen::Index>(n, 2 * chol_.rows() + 8);
        Eigen::MatrixXd bigger = Eigen::MatrixXd::Zero(cap, cap);
        const auto t = static_cast<Eigen::Index>(points_.size());
        bigger.topLeftCorner(t, t) = chol_.topLeftCorner(t, t);
        chol_.swap(bigger);
    }

    static double clamp_variance(double v) {
        if (v < -1e-10) throw Error(ErrorCode::NotPositiveDefinite, "negative posterior variance " + std::to_string(v));
        return std::max(v, 0.0);
    }

    GridKernel kernel_;
    double ridge_;
    bool grid_cache_;
    std::vector<std::size_t> points_;
    Eigen::MatrixXd chol_;
    Eigen::MatrixXd covariance_;
    double logdet_ = 0.0;
};

enum class InitDistanceMode { Oracle, TailBound };

struct ConfidenceParams {
    double delta = 0.1;
    double sigma_loss = 1.0;
    double alpha = 1.0;
    double lambda0 = 1.0;
    InitDistanceMode init_distance_mode = InitDistanceMode::Oracle;
    /// Envelope constant C_1 of psi_0(s) = C_1 (1 + sqrt s), TailBound mode.
    double tail_constant = 1.0;

    void validate() const {
        require(delta > 0.0 && delta <= 1.0, ErrorCode::InvalidArgument, "delta must lie in (0, 1]");
        require(sigma_loss >= 0.0 && alpha > 0.0 && lambda0 > 0.0, ErrorCode::InvalidArgument,
                "confidence parameters need sigma >= 0, alpha > 0, lambda0 > 0");
    }

    [[nodiscard]] double ridge() const { return lambda0 / alpha; }
};

/// Init-distance bound usable without theta*: psi_0(log(pi^2 (t+1)^2 / (6 delta))), a union
/// over rounds of the tail envelope.
inline double tail_bound_init_distance(const ConfidenceParams& conf, std::size_t t) {
    conf.validate();
    const double n = static_cast<double>(t) + 1.0;
    const double s = std::log(std::numbers::pi * std::numbers::pi * n * n / (6.0 * conf.delta));
    return tail_envelope(conf.tail_constant, s);
}

/// beta_t(delta) = sqrt(lambda_t / lambda_0) * init_dist
///               + sqrt(2 sigma^2 / (alpha lambda_0) * (logdet / 2 + log(1 / delta))).
inline double beta(const PosteriorState& state, const ConfidenceParams& conf, double lambda_t, double init_dist) {
    if (!(conf.delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "delta must be positive");
    conf.validate();
    require(lambda_t >= conf.lambda0 * (1.0 - 1e-12), ErrorCode::InvalidArgument, "lambda_t must be at least lambda0");
    require(init_dist >= 0.0, ErrorCode::InvalidArgument, "init distance must be non-negative");
    const double info = 0.5 * state.logdet() + std::log(1.0 / conf.delta);
    const double noise = 2.0 * conf.sigma_loss * conf.sigma_loss / (conf.alpha * conf.lambda0);
    return std::sqrt(lambda_t / conf.lambda0) * init_dist + std::sqrt(noise * std::max(info, 0.0));
}

/// Certified half-width 2 beta_t sigma_t(x).
inline double error_halfwidth(const PosteriorState& state, const ConfidenceParams& conf, double lambda_t,
                              double init_dist, std::size_t index) {
    return 2.0 * beta(state, conf, lambda_t, init_dist) * std::sqrt(state.variance(index));
}

}  // namespace randreg

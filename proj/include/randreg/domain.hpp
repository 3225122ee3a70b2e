#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "randreg/error.hpp"
#include "randreg/random.hpp"

namespace randreg {

/// Finite candidate set X with stable indexing. Points are the rows of a matrix.
class DomainGrid {
public:
    explicit DomainGrid(Eigen::MatrixXd points) : points_(std::move(points)) {
        require(points_.rows() >= 2, ErrorCode::InvalidArgument, "domain grid needs at least 2 points");
        require(points_.cols() >= 1, ErrorCode::InvalidArgument, "domain grid needs ambient dimension >= 1");
        require(points_.allFinite(), ErrorCode::InvalidArgument, "domain grid coordinates must be finite");
        for (Eigen::Index i = 0; i < points_.rows(); ++i) {
            for (Eigen::Index j = 0; j < i; ++j) {
                if (points_.row(i) == points_.row(j)) {
                    throw Error(ErrorCode::DuplicatePoints, "grid points " + std::to_string(j) + " and " +
                                                               std::to_string(i) + " coincide");
                }
            }
        }
    }

    /// m evenly spaced points on [low, high] (d = 1).
    static DomainGrid linspace(std::size_t m, double low = 0.0, double high = 1.0) {
        require(m >= 2, ErrorCode::InvalidArgument, "linspace grid needs m >= 2");
        require(high > low, ErrorCode::InvalidArgument, "linspace grid needs high > low");
        Eigen::MatrixXd pts(static_cast<Eigen::Index>(m), 1);
        for (std::size_t i = 0; i < m; ++i) {
            pts(static_cast<Eigen::Index>(i), 0) = low + (high - low) * static_cast<double>(i) / static_cast<double>(m - 1);
        }
        return DomainGrid(std::move(pts));
    }

    /// m seeded uniform points in [0, 1]^d.
    static DomainGrid uniform(std::size_t m, std::size_t d, std::uint64_t seed) {
        CounterRng rng(seed, {0x67726964ULL});
        Eigen::MatrixXd pts(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < pts.rows(); ++i)
            for (Eigen::Index j = 0; j < pts.cols(); ++j) pts(i, j) = rng.uniform();
        return DomainGrid(std::move(pts));
    }

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(points_.cols()); }
    [[nodiscard]] const Eigen::MatrixXd& points() const noexcept { return points_; }

    [[nodiscard]] Eigen::VectorXd point(std::size_t i) const {
        require(i < size(), ErrorCode::UnregisteredPoint, "grid index " + std::to_string(i) + " out of range");
        return points_.row(static_cast<Eigen::Index>(i)).transpose();
    }

    [[nodiscard]] std::optional<std::size_t> find(const Eigen::VectorXd& x) const {
        if (x.size() != points_.cols()) return std::nullopt;
        for (Eigen::Index i = 0; i < points_.rows(); ++i)
            if (points_.row(i) == x.transpose()) return static_cast<std::size_t>(i);
        return std::nullopt;
    }

    [[nodiscard]] std::size_t index_of(const Eigen::VectorXd& x) const {
        auto idx = find(x);
        if (!idx) throw Error(ErrorCode::UnregisteredPoint, "point is not a registered grid point");
        return *idx;
    }

    void check_index(std::size_t i) const {
        require(i < size(), ErrorCode::UnregisteredPoint,
                "grid index " + std::to_string(i) + " not in [0, " + std::to_string(size()) + ")");
    }

private:
    Eigen::MatrixXd points_;
};

}  // namespace randreg

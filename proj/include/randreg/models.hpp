#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "randreg/error.hpp"
#include "randreg/kernels.hpp"
#include "randreg/random.hpp"

namespace randreg {

// ---------------------------------------------------------------------------
// Feature maps for models linear in their parameters.

/// phi(x) = (x_j^p) for each p in `powers` and each coordinate j; p = 0 contributes one
/// constant feature.
struct PolynomialFeatures {
    std::vector<int> powers;
};

/// phi_k(x) = s * sqrt(2 / M) * cos(w_k . x + b_k), w_k ~ N(0, I / l^2), b_k ~ U[0, 2 pi).
struct RandomFourierFeatures {
    Eigen::MatrixXd frequencies;  // M x d
    Eigen::VectorXd phases;       // M
    double amplitude = 1.0;       // s * sqrt(2 / M)

    static RandomFourierFeatures make(Eigen::Index num_features, Eigen::Index input_dim, double lengthscale,
                                      double output_scale, std::uint64_t seed) {
        require(num_features >= 1, ErrorCode::InvalidArgument, "random Fourier features need M >= 1");
        require(lengthscale > 0.0, ErrorCode::InvalidArgument, "random Fourier lengthscale must be positive");
        CounterRng rng(seed, {0x726666ULL});
        RandomFourierFeatures rff;
        rff.frequencies.resize(num_features, input_dim);
        rff.phases.resize(num_features);
        for (Eigen::Index k = 0; k < num_features; ++k) {
            for (Eigen::Index j = 0; j < input_dim; ++j) rff.frequencies(k, j) = rng.normal() / lengthscale;
            rff.phases(k) = 2.0 * std::numbers::pi * rng.uniform();
        }
        rff.amplitude = output_scale * std::sqrt(2.0 / static_cast<double>(num_features));
        return rff;
    }
};

/// Tabular one-hot features over a registered point set: phi_k(x) = 1[x == point_k].
struct OneHotFeatures {
    Eigen::MatrixXd points;
};

using FeatureMap = std::variant<PolynomialFeatures, RandomFourierFeatures, OneHotFeatures>;

inline Eigen::Index feature_dim(const FeatureMap& map, Eigen::Index input_dim) {
    return std::visit(
        [&](const auto& m) -> Eigen::Index {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, PolynomialFeatures>) {
                Eigen::Index count = 0;
                for (int p : m.powers) count += (p == 0) ? 1 : input_dim;
                return count;
            } else if constexpr (std::is_same_v<T, RandomFourierFeatures>) {
                return m.frequencies.rows();
            } else {
                return m.points.rows();
            }
        },
        map);
}

inline Eigen::VectorXd feature_vector(const FeatureMap& map, const Eigen::VectorXd& x) {
    return std::visit(
        [&](const auto& m) -> Eigen::VectorXd {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, PolynomialFeatures>) {
                Eigen::VectorXd phi(feature_dim(map, x.size()));
                Eigen::Index k = 0;
                for (int p : m.powers) {
                    if (p == 0) {
                        phi(k++) = 1.0;
                    } else {
                        for (Eigen::Index j = 0; j < x.size(); ++j) phi(k++) = std::pow(x(j), p);
                    }
                }
                return phi;
            } else if constexpr (std::is_same_v<T, RandomFourierFeatures>) {
                require(x.size() == m.frequencies.cols(), ErrorCode::DimensionMismatch,
                        "random Fourier features registered for a different input dimension");
                Eigen::VectorXd arg = m.frequencies * x + m.phases;
                return m.amplitude * arg.array().cos().matrix();
            } else {
                require(x.size() == m.points.cols(), ErrorCode::DimensionMismatch,
                        "one-hot features registered for a different input dimension");
                Eigen::VectorXd phi = Eigen::VectorXd::Zero(m.points.rows());
                for (Eigen::Index k = 0; k < m.points.rows(); ++k) {
                    if (m.points.row(k) == x.transpose()) {
                        phi(k) = 1.0;
                        return phi;
                    }
                }
                throw Error(ErrorCode::UnregisteredPoint, "one-hot features evaluated off their registered points");
            }
        },
        map);
}

// ---------------------------------------------------------------------------
// Model classes g(x, theta).

enum class ModelKind { LinearFeature, SmoothMLP };

/// Smooth squashing of the raw output into [low, high] (used for cross-entropy).
struct OutputClamp {
    double low = 0.05;
    double high = 0.95;
};

class ModelSpec {
public:
    static ModelSpec linear_feature(FeatureMap features, Eigen::Index input_dim,
                                    std::optional<OutputClamp> clamp = std::nullopt) {
        ModelSpec m;
        m.kind_ = ModelKind::LinearFeature;
        m.features_ = std::move(features);
        m.input_dim_ = input_dim;
        m.param_dim_ = feature_dim(m.features_, input_dim);
        m.clamp_ = clamp;
        m.validate();
        return m;
    }

    /// widths = {d_in, h_1, ..., h_k, 1}; tanh on hidden layers, identity on the output.
    static ModelSpec smooth_mlp(std::vector<int> widths, std::optional<OutputClamp> clamp = std::nullopt) {
        require(widths.size() >= 2, ErrorCode::InvalidArgument, "MLP needs at least input and output widths");
        require(widths.back() == 1, ErrorCode::InvalidArgument, "MLP output width must be 1");
        for (int w : widths) require(w >= 1, ErrorCode::InvalidArgument, "MLP widths must be positive");
        ModelSpec m;
        m.kind_ = ModelKind::SmoothMLP;
        m.widths_ = std::move(widths);
        m.input_dim_ = m.widths_.front();
        m.param_dim_ = 0;
        for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l) m.param_dim_ += (m.widths_[l] + 1) * m.widths_[l + 1];
        m.clamp_ = clamp;
        m.validate();
        return m;
    }

    [[nodiscard]] ModelKind kind() const noexcept { return kind_; }
    [[nodiscard]] Eigen::Index param_dim() const noexcept { return param_dim_; }
    [[nodiscard]] Eigen::Index input_dim() const noexcept { return input_dim_; }
    [[nodiscard]] const FeatureMap& features() const { return features_; }
    [[nodiscard]] const std::vector<int>& widths() const noexcept { return widths_; }
    [[nodiscard]] const std::optional<OutputClamp>& clamp() const noexcept { return clamp_; }

    /// Linear in theta with no output squashing.
    [[nodiscard]] bool is_linear_in_params() const noexcept {
        return kind_ == ModelKind::LinearFeature && !clamp_.has_value();
    }

private:
    void validate() const {
        require(param_dim_ >= 1, ErrorCode::InvalidArgument, "model must have at least one parameter");
        require(input_dim_ >= 1, ErrorCode::InvalidArgument, "model input dimension must be positive");
        if (clamp_) {
            require(clamp_->low > 0.0 && clamp_->high < 1.0 && clamp_->low < clamp_->high,
                    ErrorCode::InvalidArgument, "output clamp must be a nondegenerate interval inside (0, 1)");
        }
    }

    ModelKind kind_ = ModelKind::LinearFeature;
    FeatureMap features_ = PolynomialFeatures{};
    std::vector<int> widths_;
    Eigen::Index input_dim_ = 1;
    Eigen::Index param_dim_ = 0;
    std::optional<OutputClamp> clamp_;
};

using ParamVector = Eigen::VectorXd;

namespace detail {

inline void check_model_args(const ModelSpec& model, const Eigen::VectorXd& x, const ParamVector& theta) {
    if (theta.size() != model.param_dim()) {
        throw Error(ErrorCode::DimensionMismatch, "parameter vector has size " + std::to_string(theta.size()) +
                                                      ", model expects " + std::to_string(model.param_dim()));
    }
    if (x.size() != model.input_dim()) {
        throw Error(ErrorCode::DimensionMismatch, "input has dimension " + std::to_string(x.size()) +
                                                      ", model expects " + std::to_string(model.input_dim()));
    }
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Raw (unclamped) MLP output; when `grad` is non-null it receives d raw / d theta.
inline double mlp_forward(const std::vector<int>& widths, const Eigen::VectorXd& x, const ParamVector& theta,
                          Eigen::VectorXd* grad) {
    const std::size_t layers = widths.size() - 1;
    std::vector<Eigen::VectorXd> activations;
    activations.reserve(layers + 1);
    activations.push_back(x);
    std::vector<Eigen::Index> offsets(layers);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        const int in = widths[l];
        const int out = widths[l + 1];
        offsets[l] = offset;
        // Row-major W (out x in) followed by the bias (out).
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
            theta.data() + offset, out, in);
        Eigen::Map<const Eigen::VectorXd> b(theta.data() + offset + static_cast<Eigen::Index>(out) * in, out);
        Eigen::VectorXd z = w * activations.back() + b;
        if (l + 1 < layers) z = z.array().tanh().matrix();
        activations.push_back(std::move(z));
        offset += static_cast<Eigen::Index>(in + 1) * out;
    }
    const double output = activations.back()(0);
    if (grad != nullptr) {
        grad->resize(theta.size());
        Eigen::VectorXd delta = Eigen::VectorXd::Ones(1);
        for (std::size_t l = layers; l-- > 0;) {
            const int in = widths[l];
            const int out = widths[l + 1];
            const Eigen::VectorXd& a_prev = activations[l];
            Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
                grad->data() + offsets[l], out, in);
            gw = delta * a_prev.transpose();
            grad->segment(offsets[l] + static_cast<Eigen::Index>(out) * in, out) = delta;
            if (l > 0) {
                Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
                    theta.data() + offsets[l], out, in);
                delta = ((w.transpose() * delta).array() * (1.0 - a_prev.array().square())).matrix();
            }
        }
    }
    return output;
}

}  // namespace detail

/// g(x, theta). With an output clamp [a, b] the raw value z is mapped to a + (b - a) sigmoid(z).
inline double evaluate(const ModelSpec& model, const Eigen::VectorXd& x, const ParamVector& theta) {
    detail::check_model_args(model, x, theta);
    double raw = 0.0;
    if (model.kind() == ModelKind::LinearFeature) {
        raw = theta.dot(feature_vector(model.features(), x));
    } else {
        raw = detail::mlp_forward(model.widths(), x, theta, nullptr);
    }
    if (!model.clamp()) return raw;
    const auto& c = *model.clamp();
    return c.low + (c.high - c.low) * detail::sigmoid(raw);
}

/// grad_theta g(x, theta).
inline Eigen::VectorXd param_grad(const ModelSpec& model, const Eigen::VectorXd& x, const ParamVector& theta) {
    detail::check_model_args(model, x, theta);
    Eigen::VectorXd grad;
    double raw = 0.0;
    if (model.kind() == ModelKind::LinearFeature) {
        grad = feature_vector(model.features(), x);
        if (!model.clamp()) return grad;
        raw = theta.dot(grad);
    } else {
        raw = detail::mlp_forward(model.widths(), x, theta, &grad);
    }
    if (model.clamp()) {
        const auto& c = *model.clamp();
        const double sg = detail::sigmoid(raw);
        grad *= (c.high - c.low) * sg * (1.0 - sg);
    }
    return grad;
}

/// Values of g(., theta) on every row of `points`.
inline Eigen::VectorXd evaluate_rows(const ModelSpec& model, const Eigen::MatrixXd& points, const ParamVector& theta) {
    Eigen::VectorXd out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) out(i) = evaluate(model, points.row(i).transpose(), theta);
    return out;
}

// ---------------------------------------------------------------------------
// Prior Pi_0 over parameters.

struct GaussianIso {
    double sigma = 1.0;
};

/// Uniform on the box [low, high]^M.
struct UniformBox {
    double low = -1.0;
    double high = 1.0;
};

struct SmallBallParams {
    double c_star = 0.0;
    double rho0 = 0.0;
    double d_eff = 0.0;
};

struct PriorSpec {
    std::variant<GaussianIso, UniformBox> distribution = GaussianIso{};
    std::uint64_t seed = 0;
    Eigen::Index dim = 1;
    std::optional<double> tail_exponent;
    std::optional<SmallBallParams> small_ball;

    void validate() const {
        require(dim >= 1, ErrorCode::InvalidArgument, "prior dimension must be positive");
        if (const auto* g = std::get_if<GaussianIso>(&distribution)) {
            require(g->sigma > 0.0 && std::isfinite(g->sigma), ErrorCode::InvalidArgument,
                    "gaussian prior sigma must be positive");
        } else {
            const auto& u = std::get<UniformBox>(distribution);
            require(u.high > u.low, ErrorCode::InvalidArgument, "uniform prior box must be nondegenerate");
        }
        if (tail_exponent) require(*tail_exponent > 0.0, ErrorCode::InvalidArgument, "tail exponent must be positive");
    }
};

/// Draw from Pi_0 using a caller-owned stream.
inline ParamVector sample_prior(const PriorSpec& prior, CounterRng& rng) {
    ParamVector theta(prior.dim);
    if (const auto* g = std::get_if<GaussianIso>(&prior.distribution)) {
        for (Eigen::Index i = 0; i < prior.dim; ++i) theta(i) = g->sigma * rng.normal();
    } else {
        const auto& u = std::get<UniformBox>(prior.distribution);
        for (Eigen::Index i = 0; i < prior.dim; ++i) theta(i) = rng.uniform(u.low, u.high);
    }
    return theta;
}

/// Draw number `draw_index` of Pi_0: a pure function of (prior.seed, draw_index).
inline ParamVector sample_prior(const PriorSpec& prior, std::uint64_t draw_index) {
    CounterRng rng(prior.seed, {0x7072696f72ULL, draw_index});
    return sample_prior(prior, rng);
}

// ---------------------------------------------------------------------------
// Small-ball estimation.

struct SmallBallEstimate {
    double c_star = 0.0;
    double d_eff = 0.0;
    double fit_residual = 0.0;
    std::vector<double> radii;          // radii retained in the fit
    std::vector<double> probabilities;  // empirical P(d <= rho) at retained radii
    std::vector<std::string> warnings;
};

/// Ordinary least squares y = intercept + slope * x.
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double rms_residual = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, ErrorCode::InsufficientData, "line fit needs >= 2 points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    require(sxx > 0.0, ErrorCode::InsufficientData, "line fit needs distinct abscissae");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - fit.intercept - fit.slope * x[i];
        ss += r * r;
    }
    fit.rms_residual = std::sqrt(ss / n);
    return fit;
}

namespace detail {

inline std::vector<double> prior_distances(const PriorSpec& prior, const ParamKernelSpec& k_theta,
                                           const ParamVector& center, std::size_t n_samples) {
    std::vector<double> d(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) d[i] = pseudometric(k_theta, center, sample_prior(prior, i));
    return d;
}

}  // namespace detail

/// Monte-Carlo estimate of P(d(theta*, theta_0) <= rho) on a radius ladder, followed by a
/// log-log least-squares fit: slope -> d_eff, exp(intercept) -> c*. Radii with no hits are
/// dropped with a warning.
inline SmallBallEstimate estimate_small_ball(const PriorSpec& prior, const ModelSpec& model,
                                             const ParamKernelSpec& k_theta, const ParamVector& theta_star,
                                             const std::vector<double>& radii, std::size_t n_samples) {
    require(radii.size() >= 2, ErrorCode::InvalidArgument, "small-ball fit needs at least 2 radii");
    for (std::size_t i = 0; i < radii.size(); ++i) {
        require(radii[i] > 0.0, ErrorCode::InvalidArgument, "radii must be positive");
        if (i > 0) require(radii[i] > radii[i - 1], ErrorCode::InvalidArgument, "radii must be strictly increasing");
    }
    require(n_samples >= 10000, ErrorCode::InvalidArgument, "small-ball estimation needs n_samples >= 1e4");
    require(theta_star.size() == model.param_dim() && prior.dim == model.param_dim(), ErrorCode::DimensionMismatch,
            "prior, model and theta* dimensions disagree");

    std::vector<double> dist = detail::prior_distances(prior, k_theta, theta_star, n_samples);
    std::sort(dist.begin(), dist.end());

    SmallBallEstimate est;
    std::vector<double> log_r, log_p;
    for (double r : radii) {
        const auto hits = static_cast<std::size_t>(std::upper_bound(dist.begin(), dist.end(), r) - dist.begin());
        if (hits == 0) {
            est.warnings.push_back("radius " + std::to_string(r) + " has zero hits; dropped");
            continue;
        }
        const double p = static_cast<double>(hits) / static_cast<double>(n_samples);
        est.radii.push_back(r);
        est.probabilities.push_back(p);
        log_r.push_back(std::log(r));
        log_p.push_back(std::log(p));
    }
    if (est.radii.empty()) throw Error(ErrorCode::InsufficientData, "radii below resolution");
    if (est.radii.size() < 2) {
        throw Error(ErrorCode::InsufficientData, "radii below resolution: only one radius has hits");
    }
    const LineFit fit = fit_line(log_r, log_p);
    est.d_eff = fit.slope;
    est.c_star = std::exp(fit.intercept);
    est.fit_residual = fit.rms_residual;
    return est;
}

/// Radius ladder for small-ball fits when none is configured: `count` log-spaced radii
/// over one decade ending at the empirical `upper_quantile` of d(theta*, theta_0). When the
/// bottom of the decade would hold fewer than `min_hits` samples the ladder is shortened
/// to start at the radius that does.
inline std::vector<double> auto_small_ball_radii(const PriorSpec& prior, const ParamKernelSpec& k_theta,
                                                 const ParamVector& theta_star, std::size_t n_samples,
                                                 std::size_t count = 5, double upper_quantile = 0.05,
                                                 std::size_t min_hits = 50) {
    require(count >= 2, ErrorCode::InvalidArgument, "need at least 2 radii");
    std::vector<double> dist = detail::prior_distances(prior, k_theta, theta_star, n_samples);
    std::sort(dist.begin(), dist.end());
    const auto hi_idx = std::min(dist.size() - 1, static_cast<std::size_t>(upper_quantile * static_cast<double>(n_samples)));
    const double hi = dist[hi_idx];
    double lo = hi / 10.0;
    const double lo_floor = dist[std::min(dist.size() - 1, min_hits)];
    lo = std::max(lo, lo_floor);
    require(hi > lo && lo > 0.0, ErrorCode::InsufficientData, "cannot place a radius ladder: distances are degenerate");
    std::vector<double> radii(count);
    for (std::size_t i = 0; i < count; ++i) {
        radii[i] = lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(count - 1));
    }
    return radii;
}

/// Empirical constant C1 for the tail envelope psi_0(s) = C1 (1 + sqrt(s)).
///
/// Calibrated on the distance between two independent prior draws (the agent does not
/// know theta*, which is itself a prior draw): the smallest C1 with
/// P(d > C1 (1 + sqrt(s))) <= exp(-s) at every s on a grid resolvable by n_pairs samples.
inline double calibrate_tail_constant(const PriorSpec& prior, const ParamKernelSpec& k_theta, std::size_t n_pairs) {
    require(n_pairs >= 1000, ErrorCode::InvalidArgument, "tail calibration needs n_pairs >= 1000");
    PriorSpec other = prior;
    other.seed = mix64(prior.seed ^ 0x7461696cULL);
    std::vector<double> dist(n_pairs);
    for (std::size_t i = 0; i < n_pairs; ++i) {
        dist[i] = pseudometric(k_theta, sample_prior(prior, i), sample_prior(other, i));
    }
    std::sort(dist.begin(), dist.end());
    const double s_max = std::log(static_cast<double>(n_pairs) / 10.0);
    double c1 = 0.0;
    for (double s = 0.25; s <= s_max; s += 0.25) {
        const double tail = std::exp(-s);
        const auto idx = std::min(dist.size() - 1, static_cast<std::size_t>((1.0 - tail) * static_cast<double>(n_pairs)));
        c1 = std::max(c1, dist[idx] / (1.0 + std::sqrt(s)));
    }
    return c1;
}

/// psi_0(s) = C1 (1 + sqrt(s)).
inline double tail_envelope(double c1, double s) { return c1 * (1.0 + std::sqrt(std::max(s, 0.0))); }

}  // namespace randreg

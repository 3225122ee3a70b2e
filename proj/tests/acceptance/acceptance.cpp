// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <boost/math/special_functions/gamma.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "randreg/harness/analysis.hpp"
#include "randreg/harness/experiment.hpp"
#include "randreg/randreg.hpp"

namespace fs = std::filesystem;
namespace rh = randreg::harness;
using namespace randreg;

namespace {

const fs::path kConfigs = RANDREG_CONFIG_DIR;

// Pinned tolerances.
constexpr double kCoverageFloor = 0.85;
constexpr double kVisitLawTol = 1e-10;
constexpr double kSlopeLow = -1.25;
constexpr double kSlopeHigh = -0.75;
constexpr double kMaxRatioRise = 0.10;
constexpr double kOracleTol = 1e-8;
constexpr double kCertTol = 1e-8;
constexpr double kSmallBallRelTol = 0.15;
constexpr double kAlphaTol = 1e-6;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome coverage(std::size_t workers) {
    rh::Overrides ov;
    ov.force_oracle_diagnostics = true;
    const auto ctx = rh::load_context(kConfigs / "coverage.ini", ov);
    const auto results = rh::run_replications(ctx, workers);
    std::size_t covered = 0;
    for (const auto& r : results) {
        bool all = true;
        for (const auto& row : r.rows) all = all && row.covered_prev.value_or(false) && row.covered.value_or(false);
        covered += all;
    }
    const double rate = static_cast<double>(covered) / static_cast<double>(results.size());
    return {rate >= kCoverageFloor, "rate " + fmt("%.4f", rate) + " over " + std::to_string(results.size()) +
                                        " runs, floor " + fmt("%.2f", kCoverageFloor)};
}

Outcome repeated_visits() {
    double worst = 0.0;
    for (double kappa2 : {0.25, 1.0, 3.0}) {
        for (double r : {0.05, 1.0, 4.0}) {
            Eigen::MatrixXd k(2, 2);
            k << kappa2, 0.5 * std::sqrt(kappa2), 0.5 * std::sqrt(kappa2), 1.0;
            PosteriorState s(GridKernel(k), r);
            for (int n = 1; n <= 1000; ++n) {
                s.update(0);
                if (n == 1 || n == 10 || n == 100 || n == 1000) {
                    const double law = kappa2 * r / (r + kappa2 * n);
                    worst = std::max({worst, std::abs(s.variance(0) - law), std::abs(s.cached_variance(0) - law)});
                }
            }
        }
    }
    return {worst <= kVisitLawTol, "max deviation " + fmt("%.3g", worst)};
}

Outcome oracle_equivalences() {
    std::mt19937_64 eng(20240603);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<int> pick(0, 29);
    double var_err = 0.0, chol_err = 0.0, logdet_err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd a(30, 8);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = nd(eng);
        const Eigen::MatrixXd k = a * a.transpose() / 8.0;
        const double r = 0.1 + 0.1 * trial;
        PosteriorState s(GridKernel(k), r);
        for (int t = 1; t <= 32; ++t) {
            s.update(static_cast<std::size_t>(pick(eng)));
            const auto& pts = s.points();
            Eigen::MatrixXd kt(t, t), cross(t, 30);
            for (int i = 0; i < t; ++i) {
                for (int j = 0; j < t; ++j) kt(i, j) = k(pts[i], pts[j]);
                cross.row(i) = k.row(pts[i]);
            }
            Eigen::MatrixXd reg = kt;
            reg.diagonal().array() += r;
            const Eigen::MatrixXd inv = reg.inverse();
            for (Eigen::Index x = 0; x < 30; ++x) {
                const double dense = std::max(0.0, k(x, x) - cross.col(x).dot(inv * cross.col(x)));
                var_err = std::max(var_err, std::abs(s.variance(static_cast<std::size_t>(x)) - dense));
            }
            const Eigen::MatrixXd l = s.cholesky();
            chol_err = std::max(chol_err, (l * l.transpose() - reg).norm() / reg.norm());
            const Eigen::MatrixXd info = Eigen::MatrixXd::Identity(t, t) + kt / r;
            const double direct = std::log(info.fullPivLu().determinant());
            logdet_err = std::max(logdet_err, std::abs(s.logdet() - direct) / std::max(1.0, std::abs(direct)));
        }
    }

    double ridge_err = 0.0;
    const ModelSpec model = ModelSpec::linear_feature(RandomFourierFeatures::make(10, 1, 0.3, 1.0, 17), 1);
    std::uniform_real_distribution<double> ux(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Dataset d;
        for (int i = 0; i < 3; ++i) d.add(Eigen::VectorXd::Constant(1, ux(eng)), nd(eng));
        Eigen::VectorXd theta0(model.param_dim());
        for (Eigen::Index i = 0; i < theta0.size(); ++i) theta0(i) = nd(eng);
        TrainConfig cf, nw;
        cf.solver = ClosedFormRidge{};
        nw.solver = NewtonSolver{};
        const auto loss = LossSpec::squared_error(0.1);
        const FitResult a = fit_from_init(model, loss, KernelSpec::linear(), cf, d, 3, theta0);
        const FitResult b = fit_from_init(model, loss, KernelSpec::linear(), nw, d, 3, theta0);
        ridge_err = std::max(ridge_err, (a.theta - b.theta).norm());
    }
    const bool pass = var_err <= kOracleTol && chol_err <= kOracleTol && logdet_err <= kOracleTol && ridge_err <= kOracleTol;
    return {pass, "variance " + fmt("%.3g", var_err) + ", cholesky " + fmt("%.3g", chol_err) + ", ridge-vs-newton " +
                      fmt("%.3g", ridge_err) + ", logdet " + fmt("%.3g", logdet_err)};
}

Outcome domination_certificate() {
    const auto c = rh::Config::load(kConfigs / "certify.ini");
    const std::uint64_t seed = c.get_uint("experiment", "seed", 0);
    const DomainGrid grid = rh::detail::parse_grid(c, seed);
    const ModelSpec model = rh::detail::parse_model(c, grid, seed, true);
    const InducedKernel ik = InducedKernel::exact(model, KernelSpec::linear(), grid);
    const ReferenceKernelSpec ref{rh::detail::parse_kernel(c, "reference", "matern"), std::nullopt};
    if (grid.size() != 64 || ref.kernel.family != KernelFamily::Matern || ref.kernel.nu != 2.5) {
        return {false, "certify.ini is not a 64-point Matern-5/2 instance"};
    }
    const Eigen::MatrixXd kr = reference_gram(ref, grid), kg = ik.gram();
    const auto b = smallest_certified_scale(kr, kg);
    if (!b) return {false, "no certified scale in the bracket"};
    auto independent = [&](double bb) {
        const Eigen::MatrixXd d = bb * bb * kr - kg;
        const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(d, Eigen::EigenvaluesOnly).eigenvalues()(0);
        return lmin >= -kCertTol * (bb * bb * kr).trace();
    };
    bool ok = independent(*b);
    std::mt19937_64 eng(64);
    std::uniform_real_distribution<double> u(1.0, 20.0);
    int mono = 0;
    for (int i = 0; i < 20; ++i) {
        const double bp = *b * u(eng);
        mono += certify_domination(kr, kg, bp).pass && independent(bp);
    }
    ok = ok && mono == 20;
    return {ok, "b = " + fmt("%.6g", *b) + ", monotone at " + std::to_string(mono) + "/20 larger scales"};
}

Outcome small_ball() {
    struct Case {
        int m;
        double lo, hi;
    };
    const Case cases[] = {{1, 0.01, 0.1}, {2, 0.03, 0.3}, {5, 0.3, 1.5}};
    bool ok = true;
    std::string detail;
    for (const auto& cs : cases) {
        std::vector<int> powers(cs.m);
        for (int i = 0; i < cs.m; ++i) powers[i] = i;
        const ModelSpec model = ModelSpec::linear_feature(PolynomialFeatures{powers}, 1);
        PriorSpec prior;
        prior.dim = cs.m;
        prior.seed = 700 + static_cast<std::uint64_t>(cs.m);
        std::vector<double> radii(5), log_r, log_p;
        for (int i = 0; i < 5; ++i) {
            radii[i] = cs.lo * std::pow(cs.hi / cs.lo, i / 4.0);
            log_r.push_back(std::log(radii[i]));
            // P(|theta| <= r) for theta ~ N(0, I_M) is the regularized lower gamma at r^2 / 2.
            log_p.push_back(std::log(boost::math::gamma_p(cs.m / 2.0, radii[i] * radii[i] / 2.0)));
        }
        const double oracle = fit_line(log_r, log_p).slope;
        const auto est = estimate_small_ball(prior, model, KernelSpec::linear(), ParamVector::Zero(cs.m), radii, 1000000);
        const double rel = std::abs(est.d_eff - oracle) / oracle;
        ok = ok && rel <= kSmallBallRelTol && est.radii.size() == radii.size();
        detail += "M=" + std::to_string(cs.m) + ": " + fmt("%.3f", est.d_eff) + " vs " + fmt("%.3f", oracle) + "; ";
    }
    return {ok, detail};
}

Outcome convexity_certificates() {
    const double se = certify_alpha(LossSpec::squared_error(0.1), 2);
    const Interval iv{0.1, 0.9};
    const double ce = certify_alpha(LossSpec::cross_entropy(iv, 1.0), 10000);
    double brute = std::numeric_limits<double>::infinity();
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double s = iv.low + (iv.high - iv.low) * i / (n - 1);
        for (int k = 0; k <= 10; ++k) {
            const double y = k / 10.0;
            brute = std::min(brute, y / (s * s) + (1 - y) / ((1 - s) * (1 - s)));
        }
    }
    return {se == 1.0 && std::abs(ce - brute) <= kAlphaTol,
            "SE " + fmt("%.17g", se) + ", CE " + fmt("%.12f", ce) + " vs brute force " + fmt("%.12f", brute)};
}

Outcome determinism(const fs::path& scratch) {
    const fs::path a = scratch / "smoke_a", b = scratch / "smoke_b";
    fs::remove_all(a);
    fs::remove_all(b);
    for (const auto& dir : {a, b}) {
        rh::Overrides ov;
        ov.output = dir;
        (void)rh::run_experiment(rh::load_context(kConfigs / "smoke.ini", ov), 1);
    }
    std::size_t files = 0, same = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        if (e.path().extension() != ".csv") continue;
        ++files;
        same += slurp(e.path()) == slurp(b / e.path().filename());
    }
    return {files > 0 && files == same, std::to_string(same) + "/" + std::to_string(files) + " traces identical"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::string scratch_arg = (fs::temp_directory_path() / "randreg_acceptance").string();
    app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--scratch", scratch_arg, "Scratch directory for traces");
    CLI11_PARSE(app, argc, argv);
    const fs::path scratch = scratch_arg;
    fs::create_directories(scratch);

    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s %d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
        std::fflush(stdout);
        failures += !o.pass;
    };

    report(1, "confidence coverage", [&] { return coverage(workers); });
    report(2, "repeated-visit variance law", repeated_visits);

    std::optional<rh::AnalysisReport> decay;
    std::string decay_error, sqrt_series;
    const auto decay_start = std::chrono::steady_clock::now();
    try {
        rh::Overrides ov;
        ov.output = scratch / "decay";
        const auto ctx = rh::load_context(kConfigs / "decay.ini", ov);
        (void)rh::run_experiment(ctx, workers);
        rh::AnalysisThresholds th;
        th.slope_low = kSlopeLow;
        th.slope_high = kSlopeHigh;
        th.max_ratio_rise = kMaxRatioRise;
        decay = rh::analyze(scratch / "decay", th);
        const auto set = rh::load_traces(scratch / "decay");
        for (std::size_t h : th.horizons) {
            std::vector<double> v;
            for (const auto& run : set.runs) v.push_back(run[h - 1].cum_regret / std::sqrt(static_cast<double>(h)));
            sqrt_series += std::to_string(h) + ":" + fmt("%.4g", rh::median(v)) + " ";
        }
    } catch (const std::exception& e) {
        decay_error = e.what();
    }
    const double decay_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - decay_start).count();
    std::printf("ensemble for criteria 3 and 4 ran in %.1fs\n", decay_secs);
    report(3, "variance decay rate", [&]() -> Outcome {
        if (!decay) return {false, "error: " + decay_error};
        const double s = decay->variance_decay.slope;
        return {s >= kSlopeLow && s <= kSlopeHigh,
                "slope " + fmt("%.4f", s) + " on [" + std::to_string(decay->variance_decay.t_low) + ", " +
                    std::to_string(decay->variance_decay.t_high) + "], band [" + fmt("%.2f", kSlopeLow) + ", " +
                    fmt("%.2f", kSlopeHigh) + "]"};
    });
    report(4, "sublinear regret", [&]() -> Outcome {
        if (!decay) return {false, "error: " + decay_error};
        std::string series;
        for (const auto& p : decay->regret_ratio) series += std::to_string(p.horizon) + ":" + fmt("%.4g", p.ratio) + " ";
        const bool ok = decay->regret_ratio.size() == 4 && decay->max_ratio_rise <= kMaxRatioRise;
        return {ok, "p " + fmt("%.3f", decay->exponent_p) + ", ratios " + series + "max rise " +
                        fmt("%.4f", decay->max_ratio_rise) +
                        "; median R_T/sqrt(T) " + sqrt_series};
    });
    report(5, "oracle equivalences", oracle_equivalences);
    report(6, "kernel-domination certificate", domination_certificate);
    report(7, "small-ball exponent", small_ball);
    report(8, "strong-convexity certificates", convexity_certificates);
    report(9, "determinism", [&] { return determinism(scratch); });

    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

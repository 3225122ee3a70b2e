#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "randreg/harness/analysis.hpp"
#include "randreg/harness/config.hpp"
#include "randreg/harness/experiment.hpp"
#include "randreg/randreg.hpp"

namespace rh = randreg::harness;

namespace {

int cmd_run(const std::string& path, const rh::Overrides& ov, std::size_t workers) {
    const rh::ExperimentContext ctx = rh::load_context(path, ov);
    const auto results = rh::run_experiment(ctx, workers);
    double mean_regret = 0.0;
    for (const auto& r : results) mean_regret += r.rows.back().cum_regret;
    mean_regret /= static_cast<double>(results.size());
    std::printf("wrote %zu traces of %zu rounds to %s\n", results.size(), ctx.horizon, ctx.output.string().c_str());
    std::printf("config hash %s, regime %s, mean final cumulative regret %.6g\n", ctx.config.hash().c_str(),
                ctx.regime.c_str(), mean_regret);
    return 0;
}

int cmd_analyze(const std::string& dir) {
    const rh::AnalysisReport rep = rh::analyze(dir);
    const auto j = rh::report_json(rep);
    std::ofstream out(std::filesystem::path(dir) / "report.json", std::ios::binary | std::ios::trunc);
    out << j.dump(2) << '\n';
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_certify(const std::string& path) {
    const rh::Config c = rh::Config::load(path);
    const std::uint64_t seed = c.get_uint("experiment", "seed", 0);
    const randreg::DomainGrid grid = rh::detail::parse_grid(c, seed);
    const randreg::ModelSpec model = rh::detail::parse_model(c, grid, seed, true);
    const randreg::ParamKernelSpec k_theta =
        c.has_section("kernel") ? rh::detail::parse_kernel(c, "kernel", "linear") : randreg::KernelSpec::linear();
    c.require_section("reference");
    const randreg::ReferenceKernelSpec ref{rh::detail::parse_kernel(c, "reference", "matern"), std::nullopt};

    const bool exact = model.is_linear_in_params() && k_theta.family == randreg::KernelFamily::Linear;
    const randreg::InducedKernel ik = [&]() {
        if (exact) return randreg::InducedKernel::exact(model, k_theta, grid);
        randreg::PriorSpec measure = rh::detail::parse_prior(c, model.param_dim(), seed);
        measure.seed = c.get_uint("reference", "quadrature_seed", measure.seed);
        return randreg::InducedKernel::quadrature(model, k_theta, grid, measure,
                                                  static_cast<std::size_t>(c.get_int("reference", "quadrature_samples", 10000)));
    }();
    const Eigen::MatrixXd kr = randreg::reference_gram(ref, grid);
    const Eigen::MatrixXd kg = ik.gram();

    nlohmann::ordered_json j;
    j["grid_size"] = grid.size();
    j["induced_mode"] = exact ? "exact" : "quadrature";
    j["note"] = "a grid pass is a necessary condition for domination, not a proof";
    bool pass = false;
    if (const auto b = c.get_optional_double("certify", "b")) {
        const auto cert = randreg::certify_domination(kr, kg, *b);
        pass = cert.pass;
        j["b"] = cert.b;
        j["min_eigenvalue"] = cert.min_eigenvalue;
        j["threshold"] = cert.threshold;
    } else {
        const auto found = randreg::smallest_certified_scale(kr, kg, c.get_double("certify", "low", std::ldexp(1.0, -10)),
                                                         c.get_double("certify", "high", std::ldexp(1.0, 10)),
                                                         c.get_double("certify", "rel_tol", 1e-3));
        pass = found.has_value();
        if (found) {
            const auto cert = randreg::certify_domination(kr, kg, *found);
            j["b"] = *found;
            j["min_eigenvalue"] = cert.min_eigenvalue;
            j["threshold"] = cert.threshold;
        } else {
            j["b"] = nullptr;
        }
    }
    j["pass"] = pass;
    std::cout << j.dump(2) << '\n';
    return pass ? 0 : 1;
}

int cmd_estimate_prior(const std::string& path) {
    const rh::Config c = rh::Config::load(path);
    const std::uint64_t seed = c.get_uint("experiment", "seed", 0);
    const randreg::DomainGrid grid = rh::detail::parse_grid(c, seed);
    const randreg::ModelSpec model = rh::detail::parse_model(c, grid, seed, true);
    const randreg::PriorSpec prior = rh::detail::parse_prior(c, model.param_dim(), seed);
    const randreg::ParamKernelSpec k_theta =
        c.has_section("kernel") ? rh::detail::parse_kernel(c, "kernel", "linear") : randreg::KernelSpec::linear();
    const auto n = static_cast<std::size_t>(c.get_int("small_ball", "n_samples", 1000000));
    randreg::ParamVector theta_star = randreg::ParamVector::Zero(model.param_dim());
    if (c.has("small_ball", "theta_star")) {
        const auto v = c.get_list("small_ball", "theta_star");
        if (static_cast<Eigen::Index>(v.size()) != model.param_dim()) {
            throw randreg::Error(randreg::ErrorCode::Config, "[small_ball] theta_star has the wrong dimension");
        }
        for (std::size_t i = 0; i < v.size(); ++i) theta_star(static_cast<Eigen::Index>(i)) = v[i];
    }
    const std::vector<double> radii =
        c.has("small_ball", "radii")
            ? c.get_list("small_ball", "radii")
            : randreg::auto_small_ball_radii(prior, k_theta, theta_star, n,
                                             static_cast<std::size_t>(c.get_int("small_ball", "count", 5)));
    const auto est = randreg::estimate_small_ball(prior, model, k_theta, theta_star, radii, n);
    nlohmann::ordered_json j;
    j["param_dim"] = model.param_dim();
    j["n_samples"] = n;
    j["d_eff"] = est.d_eff;
    j["c_star"] = est.c_star;
    j["fit_residual"] = est.fit_residual;
    j["radii"] = est.radii;
    j["probabilities"] = est.probabilities;
    j["warnings"] = est.warnings;
    j["tail_constant"] = randreg::calibrate_tail_constant(prior, k_theta, 4000);
    std::cout << j.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Randomized regularized training with induced-kernel confidence bounds"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(randreg::kVersion));

    std::string config_path, trace_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    bool oracle = false;

    auto* run = app.add_subcommand("run", "Run all replications of an experiment config");
    run->add_option("config", config_path, "Config file")->required();
    run->add_option("--seed", seed, "Override [experiment] seed");
    run->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    run->add_option("--out", out, "Output directory (default: [experiment] output under $RANDREG_OUT)");
    run->add_flag("--oracle-diagnostics", oracle, "Log oracle-only columns (init distance, coverage, audits)");

    auto* an = app.add_subcommand("analyze", "Analyze a directory of traces");
    an->add_option("dir", trace_dir, "Trace directory")->required();

    auto* cert = app.add_subcommand("certify-kernel", "Grid certificate for k_G <= b^2 k");
    cert->add_option("config", config_path, "Config file")->required();

    auto* est = app.add_subcommand("estimate-prior", "Small-ball exponent of the prior");
    est->add_option("config", config_path, "Config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            rh::Overrides ov;
            ov.seed = seed;
            if (out) ov.output = *out;
            ov.force_oracle_diagnostics = oracle;
            return cmd_run(config_path, ov, workers);
        }
        if (*an) return cmd_analyze(trace_dir);
        if (*cert) return cmd_certify(config_path);
        if (*est) return cmd_estimate_prior(config_path);
    } catch (const randreg::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

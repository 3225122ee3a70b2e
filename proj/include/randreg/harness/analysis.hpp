#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "randreg/error.hpp"
#include "randreg/harness/trace.hpp"
#include "randreg/models.hpp"

namespace randreg::harness {

/// Thresholds of the statistical checks.
struct AnalysisThresholds {
    std::size_t min_traces = 20;
    double coverage_slack = 0.05;
    double slope_low = -1.25;
    double slope_high = -0.75;
    double max_ratio_rise = 0.10;
    std::vector<std::size_t> horizons = {250, 500, 1000, 2000};
};

struct TraceSet {
    nlohmann::json manifest;
    std::vector<std::vector<TraceRow>> runs;
    std::vector<std::size_t> x_star;
    std::vector<double> gap;
    double delta = 0.1;
    double q = 0.0;
    double zeta = 0.0;
    double d_eff = 0.0;
};

inline TraceSet load_traces(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw Error(ErrorCode::Io, "no manifest.json in " + dir.string());
    TraceSet set;
    try {
        set.manifest = nlohmann::json::parse(in);
        set.delta = set.manifest.at("delta").get<double>();
        set.q = set.manifest.at("q").get<double>();
        set.zeta = set.manifest.at("zeta").get<double>();
        set.d_eff = set.manifest.at("d_eff").get<double>();
        for (const auto& run : set.manifest.at("runs")) {
            set.runs.push_back(read_trace(dir / run.at("trace").get<std::string>()));
            set.x_star.push_back(run.at("x_star").get<std::size_t>());
            set.gap.push_back(run.at("gap").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Io, "malformed manifest in " + dir.string() + ": " + e.what());
    }
    return set;
}

inline double median(std::vector<double> v) {
    require(!v.empty(), ErrorCode::InsufficientData, "median of an empty set");
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
    const double hi = v[n / 2];
    if (n % 2) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2)));
}

struct SlopeFit {
    double slope = 0.0;
    double residual = 0.0;
    std::size_t t_low = 0;
    std::size_t t_high = 0;
};

struct RatioPoint {
    std::size_t horizon = 0;
    double ratio = 0.0;
};

struct AnalysisReport {
    std::size_t traces = 0;
    std::size_t horizon = 0;
    std::optional<double> coverage_rate;
    std::optional<bool> coverage_pass;
    SlopeFit variance_decay;
    bool variance_decay_pass = false;
    double exponent_p = 0.0;
    std::vector<RatioPoint> regret_ratio;
    double max_ratio_rise = 0.0;
    bool regret_ratio_pass = false;
    double mean_visit_fraction = 0.0;
    /// Smallest E[N_t*] / sum_{i<=t} lambda_i^{-d_eff/2} over the ratio horizons.
    std::optional<double> visit_rate_constant;
    std::optional<std::size_t> favorable_rounds;
    std::optional<std::size_t> favorable_violations;
    std::optional<std::size_t> favorable_violations_late;
    std::optional<double> bound1_rate;
    std::optional<double> bound2_rate;
    std::optional<std::size_t> decomposition_violations;
    std::size_t nonconverged_rounds = 0;
};

/// Least-squares slope of the median-across-runs log var_opt against log t on [T/4, T].
inline SlopeFit variance_decay_fit(const std::vector<std::vector<TraceRow>>& runs, std::size_t horizon) {
    SlopeFit fit;
    fit.t_low = std::max<std::size_t>(1, horizon / 4);
    fit.t_high = horizon;
    std::vector<double> lx, ly;
    for (std::size_t t = fit.t_low; t <= fit.t_high; ++t) {
        std::vector<double> logs;
        logs.reserve(runs.size());
        for (const auto& run : runs) {
            const double v = run[t - 1].var_opt;
            logs.push_back(v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity());
        }
        const double med = median(logs);
        if (!std::isfinite(med)) continue;
        lx.push_back(std::log(static_cast<double>(t)));
        ly.push_back(med);
    }
    const LineFit line = fit_line(lx, ly);
    fit.slope = line.slope;
    fit.residual = line.rms_residual;
    return fit;
}

/// Pure function of the traces and manifest.
inline AnalysisReport analyze(const TraceSet& set, const AnalysisThresholds& th = {}) {
    if (set.runs.size() < th.min_traces) {
        throw Error(ErrorCode::InsufficientData, "analysis needs at least " + std::to_string(th.min_traces) +
                                                     " traces, found " + std::to_string(set.runs.size()));
    }
    AnalysisReport rep;
    rep.traces = set.runs.size();
    rep.horizon = set.runs.front().size();
    for (const auto& run : set.runs) {
        if (run.size() != rep.horizon) throw Error(ErrorCode::InsufficientData, "traces have unequal lengths");
    }
    require(rep.horizon >= 4, ErrorCode::InsufficientData, "traces are too short for a slope fit");

    // Coverage: the event held for g_0 (covered_prev of row 1) and for every g_t.
    bool have_cov = true;
    std::size_t covered_runs = 0;
    for (const auto& run : set.runs) {
        bool ok = true;
        for (const auto& r : run) {
            if (!r.covered || !r.covered_prev) {
                have_cov = false;
                break;
            }
            ok = ok && *r.covered && *r.covered_prev;
        }
        if (!have_cov) break;
        if (ok) ++covered_runs;
    }
    if (have_cov) {
        rep.coverage_rate = static_cast<double>(covered_runs) / static_cast<double>(set.runs.size());
        rep.coverage_pass = *rep.coverage_rate >= (1.0 - set.delta) - th.coverage_slack;
    }

    rep.variance_decay = variance_decay_fit(set.runs, rep.horizon);
    rep.variance_decay_pass = rep.variance_decay.slope >= th.slope_low && rep.variance_decay.slope <= th.slope_high;

    rep.exponent_p = set.zeta + set.q * (1.0 + set.d_eff / 4.0);
    for (std::size_t h : th.horizons) {
        if (h > rep.horizon) continue;
        std::vector<double> ratios;
        for (const auto& run : set.runs) {
            const double T = static_cast<double>(h);
            ratios.push_back(run[h - 1].cum_regret / (std::sqrt(T) * std::pow(std::log(T), rep.exponent_p)));
        }
        rep.regret_ratio.push_back({h, median(std::move(ratios))});
    }
    rep.regret_ratio_pass = !rep.regret_ratio.empty();
    for (std::size_t i = 1; i < rep.regret_ratio.size(); ++i) {
        const double a = rep.regret_ratio[i - 1].ratio;
        const double b = rep.regret_ratio[i].ratio;
        const double rise = a > 0.0 ? b / a - 1.0 : (b > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        rep.max_ratio_rise = std::max(rep.max_ratio_rise, rise);
    }
    if (rep.max_ratio_rise > th.max_ratio_rise) rep.regret_ratio_pass = false;

    double visits = 0.0;
    for (const auto& run : set.runs) visits += static_cast<double>(run.back().n_opt) / static_cast<double>(rep.horizon);
    rep.mean_visit_fraction = visits / static_cast<double>(set.runs.size());
    for (std::size_t h : th.horizons) {
        if (h > rep.horizon) continue;
        double mean_n = 0.0, budget = 0.0;
        for (const auto& run : set.runs) mean_n += static_cast<double>(run[h - 1].n_opt);
        mean_n /= static_cast<double>(set.runs.size());
        for (std::size_t i = 0; i < h; ++i) budget += std::pow(set.runs.front()[i].lambda, -set.d_eff / 2.0);
        if (budget > 0.0) {
            const double c = mean_n / budget;
            rep.visit_rate_constant = rep.visit_rate_constant ? std::min(*rep.visit_rate_constant, c) : c;
        }
    }

    // Favorable-init implication: a favorable theta_{t,0} after burn-in should make
    // x_{t+1} = x*. Burn-in is the first round whose theta*-initialized fit has sup error
    // below gap / 2.
    bool have_fav = true;
    std::size_t fav = 0, viol = 0, viol_late = 0, b_total = 0, b1 = 0, b2 = 0, decomp = 0;
    for (std::size_t k = 0; k < set.runs.size() && have_fav; ++k) {
        const auto& run = set.runs[k];
        std::optional<std::size_t> burn;
        for (const auto& r : run) {
            if (!r.favorable || !r.fav_sup_err) {
                have_fav = false;
                break;
            }
            if (!burn && *r.fav_sup_err < set.gap[k] / 2.0) burn = r.t;
        }
        if (!have_fav) break;
        for (std::size_t i = 0; i + 1 < run.size(); ++i) {
            const auto& r = run[i];
            if (!*r.favorable || !burn || r.t < *burn) continue;
            ++fav;
            const bool hit = run[i + 1].x_index == set.x_star[k];
            if (!hit) {
                ++viol;
                if (r.t > rep.horizon / 2) ++viol_late;
            }
        }
        for (const auto& r : run) {
            if (r.decomp_slack && *r.decomp_slack < -1e-12) ++decomp;
            if (r.covered_prev && *r.covered_prev && r.bound1_holds && r.bound2_holds) {
                ++b_total;
                b1 += *r.bound1_holds;
                b2 += *r.bound2_holds;
            }
        }
    }
    if (have_fav) {
        rep.favorable_rounds = fav;
        rep.favorable_violations = viol;
        rep.favorable_violations_late = viol_late;
        rep.decomposition_violations = decomp;
        if (b_total > 0) {
            rep.bound1_rate = static_cast<double>(b1) / static_cast<double>(b_total);
            rep.bound2_rate = static_cast<double>(b2) / static_cast<double>(b_total);
        }
    }
    for (const auto& run : set.runs) {
        for (const auto& r : run) rep.nonconverged_rounds += !r.converged;
    }
    return rep;
}

inline AnalysisReport analyze(const std::filesystem::path& dir, const AnalysisThresholds& th = {}) {
    return analyze(load_traces(dir), th);
}

inline nlohmann::ordered_json report_json(const AnalysisReport& r) {
    nlohmann::ordered_json j;
    auto put = [&](const char* key, const auto& v) {
        if (v) {
            j[key] = *v;
        } else {
            j[key] = nullptr;
        }
    };
    j["traces"] = r.traces;
    j["horizon"] = r.horizon;
    put("coverage_rate", r.coverage_rate);
    put("coverage_pass", r.coverage_pass);
    j["variance_decay"] = {{"slope", r.variance_decay.slope},
                           {"residual", r.variance_decay.residual},
                           {"t_low", r.variance_decay.t_low},
                           {"t_high", r.variance_decay.t_high},
                           {"columns", "t, var_opt"},
                           {"pass", r.variance_decay_pass}};
    nlohmann::ordered_json ratio = nlohmann::ordered_json::array();
    for (const auto& p : r.regret_ratio) ratio.push_back({{"horizon", p.horizon}, {"ratio", p.ratio}});
    j["regret_ratio"] = {{"p", r.exponent_p},
                         {"columns", "t, cum_regret"},
                         {"series", ratio},
                         {"max_rise", r.max_ratio_rise},
                         {"pass", r.regret_ratio_pass}};
    j["mean_visit_fraction"] = r.mean_visit_fraction;
    put("visit_rate_constant", r.visit_rate_constant);
    put("favorable_rounds", r.favorable_rounds);
    put("favorable_violations", r.favorable_violations);
    put("favorable_violations_late", r.favorable_violations_late);
    put("bound1_rate", r.bound1_rate);
    put("bound2_rate", r.bound2_rate);
    put("decomposition_violations", r.decomposition_violations);
    j["nonconverged_rounds"] = r.nonconverged_rounds;
    return j;
}

}  // namespace randreg::harness

#pragma once

#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "randreg/bandit.hpp"
#include "randreg/error.hpp"

namespace randreg::harness {

inline constexpr std::array<const char*, 23> kTraceColumns = {
    "t",         "x_index",  "y",           "regret",       "cum_regret",    "n_opt",
    "var_opt_prev", "beta_prev", "beta_policy_prev", "lambda", "init_dist",   "beta",
    "var_opt",   "logdet",   "covered_prev", "covered",     "favorable",     "fav_sup_err",
    "decomp_slack", "bound1_holds", "bound2_holds", "converged", "solver_iters"};

/// Shortest round-trip decimal (17 significant digits, C locale).
inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::string opt(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }
inline std::string opt(const std::optional<bool>& v) { return v ? (*v ? "1" : "0") : std::string(); }

inline std::optional<double> parse_opt_real(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
}
inline std::optional<bool> parse_opt_bool(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return s == "1";
}

}  // namespace detail

inline std::string trace_header() {
    std::string out;
    for (std::size_t i = 0; i < kTraceColumns.size(); ++i) {
        if (i) out += ',';
        out += kTraceColumns[i];
    }
    return out;
}

inline std::string format_row(const TraceRow& r) {
    using detail::opt;
    const std::vector<std::string> fields = {
        std::to_string(r.t),        std::to_string(r.x_index),  format_real(r.y),
        format_real(r.regret),      format_real(r.cum_regret),  std::to_string(r.n_opt),
        format_real(r.var_opt_prev), opt(r.beta_prev),          format_real(r.beta_policy_prev),
        format_real(r.lambda),      opt(r.init_dist),           opt(r.beta),
        format_real(r.var_opt),     format_real(r.logdet),      opt(r.covered_prev),
        opt(r.covered),             opt(r.favorable),           opt(r.fav_sup_err),
        opt(r.decomp_slack),        opt(r.bound1_holds),        opt(r.bound2_holds),
        r.converged ? "1" : "0",    std::to_string(r.solver_iters)};
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += fields[i];
    }
    return out;
}

inline void write_trace(const std::filesystem::path& path, const std::vector<TraceRow>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write trace " + path.string());
    out << trace_header() << '\n';
    for (const auto& r : rows) out << format_row(r) << '\n';
    if (!out) throw Error(ErrorCode::Io, "write failed for trace " + path.string());
}

inline TraceRow parse_row(const std::string& line) {
    std::vector<std::string> f;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != kTraceColumns.size()) {
        throw Error(ErrorCode::Io, "trace row has " + std::to_string(f.size()) + " fields, expected " +
                                       std::to_string(kTraceColumns.size()));
    }
    using detail::parse_opt_bool;
    using detail::parse_opt_real;
    TraceRow r;
    r.t = std::stoul(f[0]);
    r.x_index = std::stoul(f[1]);
    r.y = std::stod(f[2]);
    r.regret = std::stod(f[3]);
    r.cum_regret = std::stod(f[4]);
    r.n_opt = std::stoul(f[5]);
    r.var_opt_prev = std::stod(f[6]);
    r.beta_prev = parse_opt_real(f[7]);
    r.beta_policy_prev = std::stod(f[8]);
    r.lambda = std::stod(f[9]);
    r.init_dist = parse_opt_real(f[10]);
    r.beta = parse_opt_real(f[11]);
    r.var_opt = std::stod(f[12]);
    r.logdet = std::stod(f[13]);
    r.covered_prev = parse_opt_bool(f[14]);
    r.covered = parse_opt_bool(f[15]);
    r.favorable = parse_opt_bool(f[16]);
    r.fav_sup_err = parse_opt_real(f[17]);
    r.decomp_slack = parse_opt_real(f[18]);
    r.bound1_holds = parse_opt_bool(f[19]);
    r.bound2_holds = parse_opt_bool(f[20]);
    r.converged = f[21] == "1";
    r.solver_iters = std::stoi(f[22]);
    return r;
}

inline std::vector<TraceRow> read_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read trace " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != trace_header()) {
        throw Error(ErrorCode::Io, "trace " + path.string() + " has an unexpected header");
    }
    std::vector<TraceRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(parse_row(line));
    }
    return rows;
}

}  // namespace randreg::harness

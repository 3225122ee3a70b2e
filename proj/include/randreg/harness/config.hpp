#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "randreg/error.hpp"

namespace randreg::harness {

/// Parsed INI file: section -> key -> raw value, with schema checks and typed getters.
///
/// Sections are validated against a fixed schema: unknown sections or keys and missing
/// required sections are errors that name the offending item.
class Config {
public:
    static Config parse_string(const std::string& text, const std::string& origin = "<string>") {
        boost::property_tree::ptree tree;
        std::istringstream in(text);
        try {
            boost::property_tree::ini_parser::read_ini(in, tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw Error(ErrorCode::Config, origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
        }
        Config cfg;
        cfg.origin_ = origin;
        for (const auto& [section, body] : tree) {
            if (body.empty() && !body.data().empty()) {
                throw Error(ErrorCode::Config, origin + ": key '" + section + "' appears outside any section");
            }
            auto& dst = cfg.values_[section];
            for (const auto& [key, value] : body) dst[key] = value.data();
        }
        cfg.check_schema();
        return cfg;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::Io, "cannot open config file " + path.string());
        std::stringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str(), path.string());
    }

    [[nodiscard]] bool has_section(const std::string& section) const { return values_.count(section) > 0; }

    void require_section(const std::string& section) const {
        if (!has_section(section)) {
            throw Error(ErrorCode::Config, origin_ + ": missing required section [" + section + "]");
        }
    }

    [[nodiscard]] bool has(const std::string& section, const std::string& key) const {
        const auto it = values_.find(section);
        return it != values_.end() && it->second.count(key) > 0;
    }

    [[nodiscard]] std::string get_string(const std::string& section, const std::string& key) const {
        require_section(section);
        const auto& body = values_.at(section);
        const auto it = body.find(key);
        if (it == body.end()) {
            throw Error(ErrorCode::Config, origin_ + ": missing key '" + key + "' in section [" + section + "]");
        }
        return it->second;
    }

    [[nodiscard]] std::string get_string(const std::string& section, const std::string& key,
                                         const std::string& fallback) const {
        return has(section, key) ? get_string(section, key) : fallback;
    }

    [[nodiscard]] double get_double(const std::string& section, const std::string& key) const {
        return to_double(section, key, get_string(section, key));
    }
    [[nodiscard]] double get_double(const std::string& section, const std::string& key, double fallback) const {
        return has(section, key) ? get_double(section, key) : fallback;
    }
    [[nodiscard]] std::optional<double> get_optional_double(const std::string& section, const std::string& key) const {
        if (!has(section, key)) return std::nullopt;
        return get_double(section, key);
    }

    [[nodiscard]] std::int64_t get_int(const std::string& section, const std::string& key) const {
        const std::string raw = get_string(section, key);
        try {
            std::size_t used = 0;
            const long long v = std::stoll(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw Error(ErrorCode::Config, origin_ + ": [" + section + "] " + key + " = '" + raw + "' is not an integer");
        }
    }
    [[nodiscard]] std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const {
        return has(section, key) ? get_int(section, key) : fallback;
    }

    [[nodiscard]] std::uint64_t get_uint(const std::string& section, const std::string& key, std::uint64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::int64_t v = get_int(section, key);
        if (v < 0) throw Error(ErrorCode::Config, origin_ + ": [" + section + "] " + key + " must be non-negative");
        return static_cast<std::uint64_t>(v);
    }

    [[nodiscard]] bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const std::string raw = get_string(section, key);
        if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
        if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
        throw Error(ErrorCode::Config, origin_ + ": [" + section + "] " + key + " = '" + raw + "' is not a boolean");
    }

    [[nodiscard]] std::vector<double> get_list(const std::string& section, const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(get_string(section, key));
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(to_double(section, key, trim(item)));
        return out;
    }

    /// One of `allowed`, or an error listing them.
    [[nodiscard]] std::string get_choice(const std::string& section, const std::string& key,
                                         const std::vector<std::string>& allowed, const std::string& fallback) const {
        const std::string v = get_string(section, key, fallback);
        for (const auto& a : allowed) {
            if (v == a) return v;
        }
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        throw Error(ErrorCode::Config, origin_ + ": [" + section + "] " + key + " = '" + v + "' (expected one of " +
                                           list + ")");
    }

    void set(const std::string& section, const std::string& key, const std::string& value) {
        values_[section][key] = value;
        check_schema();
    }

    /// Sorted "[section]\nkey = value\n" text, the basis of the config hash.
    [[nodiscard]] std::string canonical() const {
        std::string out;
        for (const auto& [section, body] : values_) {
            out += "[" + section + "]\n";
            for (const auto& [key, value] : body) out += key + " = " + value + "\n";
        }
        return out;
    }

    /// FNV-1a 64 of the canonical text, as 16 hex digits.
    [[nodiscard]] std::string hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : canonical()) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        return out;
    }

    [[nodiscard]] const std::string& origin() const noexcept { return origin_; }

    static const std::map<std::string, std::set<std::string>>& schema() {
        static const std::map<std::string, std::set<std::string>> s = {
            {"experiment",
             {"horizon", "replications", "seed", "delta", "oracle_diagnostics", "on_nonconvergence", "output",
              "gap_floor"}},
            {"grid", {"size", "dim", "generator", "low", "high", "seed"}},
            {"model",
             {"kind", "features", "num_features", "lengthscale", "output_scale", "feature_seed", "powers", "widths",
              "clamp_low", "clamp_high"}},
            {"prior",
             {"distribution", "sigma", "low", "high", "seed", "tail_exponent", "c_star", "rho0", "d_eff",
              "tail_constant", "tail_pairs", "small_ball_samples"}},
            {"loss", {"family", "interval_low", "interval_high", "sigma", "sigma_draws", "noise_sigma"}},
            {"environment", {"noise", "sigma", "half_width"}},
            {"kernel", {"family", "lengthscale", "nu", "output_scale"}},
            {"reference",
             {"mode", "family", "lengthscale", "nu", "output_scale", "domination_constant", "quadrature_samples",
              "quadrature_seed"}},
            {"train", {"schedule", "q", "scale", "lambda", "lambda0", "solver", "max_iter", "grad_tol", "step"}},
            {"policy", {"kind", "quantile", "ucb_beta"}},
            {"small_ball", {"n_samples", "radii", "count", "theta_star"}},
            {"certify", {"b", "low", "high", "rel_tol", "probes"}},
        };
        return s;
    }

private:
    void check_schema() const {
        const auto& s = schema();
        for (const auto& [section, body] : values_) {
            const auto it = s.find(section);
            if (it == s.end()) throw Error(ErrorCode::Config, origin_ + ": unknown section [" + section + "]");
            for (const auto& [key, value] : body) {
                if (!it->second.count(key)) {
                    throw Error(ErrorCode::Config, origin_ + ": unknown key '" + key + "' in section [" + section + "]");
                }
            }
        }
    }

    double to_double(const std::string& section, const std::string& key, const std::string& raw) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw Error(ErrorCode::Config, origin_ + ": [" + section + "] " + key + " = '" + raw + "' is not a number");
        }
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }

    std::string origin_;
    std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace randreg::harness

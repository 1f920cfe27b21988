#pragma once

// Experiment configuration: a flat dotted-key file format (or a JSON
// object with the same keys), strict unknown-key rejection, a canonical
// key=value rendering, and a seed-independent content hash used to name
// run directories.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mlab/io.hpp"
#include "mlab/model.hpp"
#include "mlab/sim.hpp"

namespace mlab {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    // model
    std::string b = "-x";
    std::string f = "0";
    std::string sigma = "1";
    double x0 = 0.0;
    double T = 1.0;
    std::map<int, double> growth;  // optional per-derivative growth exponents

    // simulation
    std::int64_t steps = 1000;
    std::int64_t paths = 10000;
    std::uint64_t seed = 42;
    std::string scheme = "auto";
    std::int64_t r_grid_size = 64;

    // truncation
    double xi = 0.0;  // 0 = derive from the growth table
    std::vector<std::int64_t> levels = {2, 4, 8, 16};

    // analysis
    std::vector<int> p_list = {2};
    std::vector<double> eps_list = {0.05, 0.1, 0.2};
    double x_min = -3.0;
    double x_max = 3.0;
    std::int64_t x_points = 121;
    int q = 1;
    double M = 1.0;
    double R = 10.0;

    // output
    std::int64_t time_points = 8;

    static ExperimentConfig load(const std::string& path);
    static ExperimentConfig from_entries(const std::vector<std::pair<std::string, std::string>>&);

    void validate() const;
    SdeModel make_model() const;
    Scheme resolved_scheme() const;
    SimConfig make_sim_config() const;
    std::vector<double> x_grid() const;

    std::vector<std::pair<std::string, std::string>> canonical_entries() const;
    std::string canonical_text() const;
    std::uint64_t content_hash() const;  // seed excluded
    std::string run_dir_name(const std::string& command) const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
    }
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long long i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return i;
    } catch (const std::exception&) {
        throw ConfigError("bad integer value for " + key + ": '" + v + "'");
    }
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_entries(
    const std::vector<std::pair<std::string, std::string>>& entries) {
    ExperimentConfig c;
    for (const auto& [key, raw] : entries) {
        const std::string value = detail::trim(raw);
        if (key == "model.b") c.b = value;
        else if (key == "model.f") c.f = value;
        else if (key == "model.sigma") c.sigma = value;
        else if (key == "model.x0") c.x0 = detail::parse_double(key, value);
        else if (key == "model.T") c.T = detail::parse_double(key, value);
        else if (key == "model.growth") {
            c.growth.clear();
            if (!value.empty()) {
                for (const auto& pair : detail::split(value, ',')) {
                    auto kv = detail::split(pair, ':');
                    if (kv.size() != 2)
                        throw ConfigError("model.growth entries must look like j:q, got '" +
                                          pair + "'");
                    c.growth[static_cast<int>(detail::parse_int(key, kv[0]))] =
                        detail::parse_double(key, kv[1]);
                }
            }
        } else if (key == "sim.steps") c.steps = detail::parse_int(key, value);
        else if (key == "sim.paths") c.paths = detail::parse_int(key, value);
        else if (key == "sim.seed") c.seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
        else if (key == "sim.scheme") c.scheme = value;
        else if (key == "sim.r_grid_size") c.r_grid_size = detail::parse_int(key, value);
        else if (key == "truncation.xi") c.xi = detail::parse_double(key, value);
        else if (key == "truncation.levels") {
            c.levels.clear();
            for (const auto& tok : detail::split(value, ','))
                if (!tok.empty()) c.levels.push_back(detail::parse_int(key, tok));
        } else if (key == "analysis.p_list") {
            c.p_list.clear();
            for (const auto& tok : detail::split(value, ','))
                if (!tok.empty()) c.p_list.push_back(static_cast<int>(detail::parse_int(key, tok)));
        } else if (key == "analysis.eps_list") {
            c.eps_list.clear();
            for (const auto& tok : detail::split(value, ','))
                if (!tok.empty()) c.eps_list.push_back(detail::parse_double(key, tok));
        } else if (key == "analysis.x_min") c.x_min = detail::parse_double(key, value);
        else if (key == "analysis.x_max") c.x_max = detail::parse_double(key, value);
        else if (key == "analysis.x_points") c.x_points = detail::parse_int(key, value);
        else if (key == "analysis.q") c.q = static_cast<int>(detail::parse_int(key, value));
        else if (key == "analysis.M") c.M = detail::parse_double(key, value);
        else if (key == "analysis.R") c.R = detail::parse_double(key, value);
        else if (key == "output.time_points") c.time_points = detail::parse_int(key, value);
        else throw ConfigError("unknown configuration key: " + key);
    }
    c.validate();
    return c;
}

inline ExperimentConfig ExperimentConfig::load(const std::string& path) {
    const std::string text = read_text(path);
    std::vector<std::pair<std::string, std::string>> entries;

    std::size_t first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config JSON parse error: ") + e.what());
        }
        // Flatten {"model": {"b": "-x"}} to model.b; arrays join with
        // commas, the growth object joins as j:q pairs.
        for (const auto& [section, body] : j.items()) {
            if (!body.is_object())
                throw ConfigError("top-level config entries must be sections, got: " + section);
            for (const auto& [name, v] : body.items()) {
                std::string key = section + "." + name;
                std::string value;
                if (v.is_string()) value = v.get<std::string>();
                else if (v.is_number_integer()) value = std::to_string(v.get<long long>());
                else if (v.is_number_float()) value = format_g17(v.get<double>());
                else if (v.is_array()) {
                    for (std::size_t i = 0; i < v.size(); ++i) {
                        if (i) value += ',';
                        if (v[i].is_number_integer())
                            value += std::to_string(v[i].get<long long>());
                        else
                            value += format_g17(v[i].get<double>());
                    }
                } else if (v.is_object() && key == "model.growth") {
                    bool first_pair = true;
                    for (const auto& [jj, qq] : v.items()) {
                        if (!first_pair) value += ',';
                        first_pair = false;
                        value += jj + ":" + format_g17(qq.get<double>());
                    }
                } else {
                    throw ConfigError("unsupported JSON value for key: " + key);
                }
                entries.emplace_back(key, value);
            }
        }
    } else {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = detail::trim(line);
            if (s.empty() || s[0] == '#') continue;
            std::size_t eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) +
                                  ": expected key = value, got '" + s + "'");
            entries.emplace_back(detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
        }
    }
    return from_entries(entries);
}

inline void ExperimentConfig::validate() const {
    if (steps <= 0) throw ConfigError("sim.steps must be positive");
    if (paths <= 0) throw ConfigError("sim.paths must be positive");
    if (T <= 0.0) throw ConfigError("model.T must be positive");
    if (r_grid_size < 2) throw ConfigError("sim.r_grid_size must be at least 2");
    if (scheme != "auto") {
        try {
            scheme_from_name(scheme);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (xi < 0.0) throw ConfigError("truncation.xi must be >= 0");
    if (levels.empty()) throw ConfigError("truncation.levels must not be empty");
    for (auto n : levels)
        if (n < 1) throw ConfigError("truncation levels must be >= 1");
    if (!std::is_sorted(levels.begin(), levels.end()))
        throw ConfigError("truncation.levels must be sorted ascending");
    for (int p : p_list)
        if (p < 1) throw ConfigError("analysis.p_list entries must be >= 1");
    for (double e : eps_list)
        if (!(e > 0.0)) throw ConfigError("analysis.eps_list entries must be positive");
    if (!(x_max > x_min)) throw ConfigError("analysis.x_max must exceed analysis.x_min");
    if (x_points < 2) throw ConfigError("analysis.x_points must be at least 2");
    if (q < 1) throw ConfigError("analysis.q must be >= 1");
    if (M <= 0.0) throw ConfigError("analysis.M must be positive");
    if (R <= 0.0) throw ConfigError("analysis.R must be positive");
    if (time_points < 1) throw ConfigError("output.time_points must be >= 1");
    for (const auto& [j, g] : growth) {
        if (j < 0) throw ConfigError("model.growth orders must be >= 0");
        if (g < 0.0) throw ConfigError("model.growth exponents must be >= 0");
    }
}

inline SdeModel ExperimentConfig::make_model() const {
    return SdeModel::from_strings(b, f, sigma, x0, T, growth);
}

inline Scheme ExperimentConfig::resolved_scheme() const {
    if (scheme == "auto") return Scheme::TamedEuler;
    return scheme_from_name(scheme);
}

inline SimConfig ExperimentConfig::make_sim_config() const {
    SimConfig sc;
    sc.steps = steps;
    sc.paths = paths;
    sc.seed = seed;
    sc.scheme = resolved_scheme();
    sc.r_grid = make_r_grid(steps, std::min<std::int64_t>(r_grid_size, steps + 1));
    return sc;
}

inline std::vector<double> ExperimentConfig::x_grid() const {
    std::vector<double> g(x_points);
    for (std::int64_t i = 0; i < x_points; ++i)
        g[i] = x_min + (x_max - x_min) * static_cast<double>(i) /
                           static_cast<double>(x_points - 1);
    return g;
}

inline std::vector<std::pair<std::string, std::string>> ExperimentConfig::canonical_entries()
    const {
    std::vector<std::pair<std::string, std::string>> e;
    auto join_i64 = [](const std::vector<std::int64_t>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(v[i]);
        }
        return s;
    };
    std::string p_join, eps_join, growth_join;
    for (std::size_t i = 0; i < p_list.size(); ++i)
        p_join += (i ? "," : "") + std::to_string(p_list[i]);
    for (std::size_t i = 0; i < eps_list.size(); ++i)
        eps_join += (i ? "," : "") + format_g17(eps_list[i]);
    {
        bool first = true;
        for (const auto& [j, g] : growth) {
            if (!first) growth_join += ',';
            first = false;
            growth_join += std::to_string(j) + ":" + format_g17(g);
        }
    }
    e.emplace_back("analysis.M", format_g17(M));
    e.emplace_back("analysis.R", format_g17(R));
    e.emplace_back("analysis.eps_list", eps_join);
    e.emplace_back("analysis.p_list", p_join);
    e.emplace_back("analysis.q", std::to_string(q));
    e.emplace_back("analysis.x_max", format_g17(x_max));
    e.emplace_back("analysis.x_min", format_g17(x_min));
    e.emplace_back("analysis.x_points", std::to_string(x_points));
    e.emplace_back("model.T", format_g17(T));
    e.emplace_back("model.b", b);
    e.emplace_back("model.f", f);
    e.emplace_back("model.growth", growth_join);
    e.emplace_back("model.sigma", sigma);
    e.emplace_back("model.x0", format_g17(x0));
    e.emplace_back("output.time_points", std::to_string(time_points));
    e.emplace_back("sim.paths", std::to_string(paths));
    e.emplace_back("sim.r_grid_size", std::to_string(r_grid_size));
    e.emplace_back("sim.scheme", scheme);
    e.emplace_back("sim.seed", std::to_string(seed));
    e.emplace_back("sim.steps", std::to_string(steps));
    e.emplace_back("truncation.levels", join_i64(levels));
    e.emplace_back("truncation.xi", format_g17(xi));
    return e;
}

inline std::string ExperimentConfig::canonical_text() const {
    std::string s;
    for (const auto& [k, v] : canonical_entries()) s += k + "=" + v + "\n";
    return s;
}

inline std::uint64_t ExperimentConfig::content_hash() const {
    std::string s;
    for (const auto& [k, v] : canonical_entries())
        if (k != "sim.seed") s += k + "=" + v + "\n";
    return detail::fnv1a64(s);
}

inline std::string ExperimentConfig::run_dir_name(const std::string& command) const {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%08llx",
                  static_cast<unsigned long long>(content_hash() >> 32));
    return command + "-" + buf + "-s" + std::to_string(seed);
}

}  // namespace mlab

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hpnp/denoise.hpp"
#include "hpnp/error.hpp"
#include "hpnp/solver.hpp"

namespace hpnp {

/// Flat key/value settings in TOML-like syntax: `key = value`, `#` comments,
/// optional double quotes around strings.
using Settings = std::map<std::string, std::string>;

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline Settings parse_settings(std::istream& in, const std::string& origin)
{
    Settings out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        const std::string t = trim(line);
        if (t.empty())
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw Error(Errc::invalid_argument, origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (key.empty())
            throw Error(Errc::invalid_argument, origin + ":" + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v)
{
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size())
            return d;
    } catch (...) {
    }
    throw Error(Errc::invalid_argument, "setting '" + key + "' expects a number, got '" + v + "'");
}

inline std::size_t to_count(const std::string& key, const std::string& v)
{
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw Error(Errc::invalid_argument, "setting '" + key + "' expects a nonnegative integer, got '" + v + "'");
    return out;
}

} // namespace detail

/// Applies settings on top of cfg. Unknown keys are rejected.
inline void apply_settings(SolverConfig& cfg, const Settings& settings)
{
    for (const auto& [key, value] : settings) {
        if (key == "base")
            continue;
        else if (key == "mu") cfg.mu = detail::to_double(key, value);
        else if (key == "lambda") cfg.lambda = detail::to_double(key, value);
        else if (key == "rho") cfg.rho = detail::to_double(key, value);
        else if (key == "tau") cfg.tau = detail::to_double(key, value);
        else if (key == "eta") cfg.eta = detail::to_double(key, value);
        else if (key == "max_iters" || key == "K") cfg.max_iters = detail::to_count(key, value);
        else if (key == "upsilon") cfg.upsilon = detail::to_double(key, value);
        else if (key == "admm_inner") cfg.admm_inner = detail::to_count(key, value);
        else if (key == "grad_steps") cfg.grad_steps = detail::to_count(key, value);
        else if (key == "regroup_every") cfg.regroup_every = detail::to_count(key, value);
        else if (key == "patch_side") cfg.geometry.patch_side = detail::to_count(key, value);
        else if (key == "stride") cfg.geometry.stride = detail::to_count(key, value);
        else if (key == "group_size") cfg.geometry.group_size = detail::to_count(key, value);
        else if (key == "window") cfg.geometry.window = detail::to_count(key, value);
        else if (key == "noise_floor0") cfg.noise_floor0 = detail::to_double(key, value);
        else if (key == "noise_decay") cfg.noise_decay = detail::to_double(key, value);
        else if (key == "c_weight") cfg.c_weight = detail::to_double(key, value);
        else if (key == "wnnm_eps") cfg.wnnm_eps = detail::to_double(key, value);
        else if (key == "init_smoothing_iters") cfg.init_smoothing_iters = detail::to_count(key, value);
        else if (key == "denoiser") cfg.denoiser = parse_denoiser_kind(value);
        else
            throw Error(Errc::invalid_argument, "unknown setting '" + key + "'");
    }
}

/// Resolves a preset by name from `dir/<name>.toml`, following `base = "..."`
/// chains (the base is applied first).
inline void apply_preset(SolverConfig& cfg, const std::string& name, const std::filesystem::path& dir)
{
    std::vector<Settings> chain;
    std::set<std::string> seen;
    std::string current = name;
    while (!current.empty()) {
        if (!seen.insert(current).second)
            throw Error(Errc::invalid_argument, "preset '" + name + "' has a cyclic base chain");
        const auto path = dir / (current + ".toml");
        std::ifstream in(path);
        if (!in)
            throw Error(Errc::io, "preset '" + current + "' not found at " + path.string());
        chain.push_back(parse_settings(in, path.string()));
        const auto it = chain.back().find("base");
        current = it == chain.back().end() ? std::string{} : it->second;
    }
    for (auto it = chain.rbegin(); it != chain.rend(); ++it)
        apply_settings(cfg, *it);
}

/// Preset expression: names joined by '+', applied left to right. The name
/// "auto" stands for the per-ratio preset "r<ratio>", e.g. r0.3.
inline std::vector<std::string> split_preset_expr(const std::string& expr)
{
    std::vector<std::string> parts;
    std::stringstream ss(expr);
    std::string part;
    while (std::getline(ss, part, '+')) {
        part = trim(part);
        if (part.empty())
            throw Error(Errc::invalid_argument, "empty preset name in '" + expr + "'");
        parts.push_back(part);
    }
    if (parts.empty())
        throw Error(Errc::invalid_argument, "empty preset expression");
    return parts;
}

inline std::string ratio_preset_name(double ratio)
{
    std::ostringstream os;
    os << 'r' << ratio;
    return os.str();
}

inline SolverConfig resolve_config(const std::string& preset_expr, double ratio, const std::filesystem::path& dir,
    const Settings& overrides = {})
{
    SolverConfig cfg;
    for (const auto& name : split_preset_expr(preset_expr))
        apply_preset(cfg, name == "auto" ? ratio_preset_name(ratio) : name, dir);
    apply_settings(cfg, overrides);
    cfg.validate();
    return cfg;
}

} // namespace hpnp

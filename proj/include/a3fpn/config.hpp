#pragma once

#include <charconv>
#include <sstream>
#include <string>
#include <vector>

#include "a3fpn/ops.hpp"

namespace a3fpn {

enum class Orientation { kBottomUp, kTopDown };

// All architecture hyperparameters. Per-level lists are indexed by level, level
// 1 being the highest-resolution map; use_resampling is indexed by column.
struct PyramidConfig {
    int n_levels = 4;
    std::vector<int> channels = {256, 256, 256, 256};
    int columns = 3;
    Orientation orientation = Orientation::kBottomUp;
    std::vector<int> squeeze = {1, 2, 4, 4};
    std::vector<bool> use_resampling = {true, true, true};
    std::vector<int> compress_channels = {16, 16, 16, 32};
    std::vector<int> gn_groups = {16, 16, 16, 32};
    int rep_blocks = 2;
    float expansion = 4.0f;
    std::vector<int> resample_groups = {16, 16, 16, 32};
    float offset_scale = 2.0f;
    std::string norm_after_resampling = "ln"; // "ln" | "none"
    bool resampler_output_bias = true;
    int dwconv_kernel = 3;
    int resample_k = 3;
    float icatten_threshold = 0.5f;
    ops::Interp interpolation = ops::Interp::kBilinear;

    bool operator==(const PyramidConfig&) const = default;

    // Channel width a level runs at inside a column, after the entry squeeze.
    int working_channels(int level) const {
        return channels[static_cast<std::size_t>(level - 1)] / squeeze[static_cast<std::size_t>(level - 1)];
    }

    void validate() const {
        if (n_levels < 2 || n_levels > 4)
            throw ConfigError("n_levels must be in 2..4 (column widths are capped at four)");
        if (columns < 1) throw ConfigError("columns must be >= 1");
        auto want_n = [&](const char* key, std::size_t got) {
            if (got != static_cast<std::size_t>(n_levels))
                throw ConfigError(std::string(key) + " must list one value per level");
        };
        want_n("channels", channels.size());
        want_n("squeeze", squeeze.size());
        want_n("compress_channels", compress_channels.size());
        want_n("gn_groups", gn_groups.size());
        want_n("resample_groups", resample_groups.size());
        if (use_resampling.size() != static_cast<std::size_t>(columns))
            throw ConfigError("use_resampling must list one value per column");
        for (int i = 1; i <= n_levels; ++i) {
            const int c = channels[static_cast<std::size_t>(i - 1)];
            const int sq = squeeze[static_cast<std::size_t>(i - 1)];
            if (c < 1 || sq < 1) throw ConfigError("channels and squeeze must be positive");
            if (c % sq != 0) throw ConfigError("channels must be divisible by squeeze at level " + std::to_string(i));
            const int wc = c / sq;
            if (gn_groups[static_cast<std::size_t>(i - 1)] < 1 || wc % gn_groups[static_cast<std::size_t>(i - 1)] != 0)
                throw ConfigError("gn_groups must divide the working channels at level " + std::to_string(i));
            if (resample_groups[static_cast<std::size_t>(i - 1)] < 1 ||
                wc % resample_groups[static_cast<std::size_t>(i - 1)] != 0)
                throw ConfigError("resample_groups must divide the working channels at level " + std::to_string(i));
            if (compress_channels[static_cast<std::size_t>(i - 1)] < 1)
                throw ConfigError("compress_channels must be positive");
        }
        if (rep_blocks < 0) throw ConfigError("rep_blocks must be >= 0");
        if (!(expansion > 0.0f)) throw ConfigError("expansion must be positive");
        if (!(offset_scale > 0.0f)) throw ConfigError("offset_scale must be positive");
        if (dwconv_kernel < 1 || dwconv_kernel % 2 == 0) throw ConfigError("dwconv_kernel must be odd");
        if (resample_k < 1 || resample_k % 2 == 0) throw ConfigError("resample_k must be odd");
        if (icatten_threshold < 0.0f || icatten_threshold > 1.0f)
            throw ConfigError("icatten_threshold must be in [0,1]");
        if (norm_after_resampling != "ln" && norm_after_resampling != "none")
            throw ConfigError("norm_after_resampling must be 'ln' or 'none'");
    }
};

inline PyramidConfig preset_full() { return PyramidConfig{}; }

inline PyramidConfig preset_lite() {
    PyramidConfig c;
    c.squeeze = {1, 2, 4, 8};
    c.use_resampling = {false, false, true};
    c.compress_channels = {16, 16, 16, 16};
    c.gn_groups = {16, 16, 16, 16};
    c.rep_blocks = 1;
    c.expansion = 2.0f;
    c.resample_groups = {16, 16, 16, 16};
    c.offset_scale = 1.0f;
    return c;
}

inline PyramidConfig preset(const std::string& name) {
    if (name == "full") return preset_full();
    if (name == "lite") return preset_lite();
    throw ConfigError("unknown preset: " + name + " (expected 'full' or 'lite')");
}

// ---- flat key=value text format -------------------------------------------------

namespace detail {

inline std::string float_str(float v) {
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, res.ptr);
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
        s += ".0";
    return s;
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& xs, Fmt fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += fmt(xs[i]);
    }
    return out;
}

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

inline int parse_int(const std::string& key, const std::string& s) {
    int v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ConfigError("bad integer for key '" + key + "': " + s);
    return v;
}

inline float parse_float(const std::string& key, const std::string& s) {
    float v = 0.0f;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ConfigError("bad float for key '" + key + "': " + s);
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("bad bool for key '" + key + "': " + s);
}

} // namespace detail

inline std::string dump_config(const PyramidConfig& c) {
    auto i2s = [](int v) { return std::to_string(v); };
    auto b2s = [](bool v) { return std::string(v ? "true" : "false"); };
    std::ostringstream os;
    os << "n_levels=" << c.n_levels << "\n";
    os << "channels=" << detail::join(c.channels, i2s) << "\n";
    os << "columns=" << c.columns << "\n";
    os << "orientation=" << (c.orientation == Orientation::kBottomUp ? "bottom-up" : "top-down") << "\n";
    os << "squeeze=" << detail::join(c.squeeze, i2s) << "\n";
    {
        std::vector<bool> ur = c.use_resampling;
        std::string s;
        for (std::size_t i = 0; i < ur.size(); ++i) {
            if (i) s += ",";
            s += ur[i] ? "true" : "false";
        }
        os << "use_resampling=" << s << "\n";
    }
    os << "compress_channels=" << detail::join(c.compress_channels, i2s) << "\n";
    os << "gn_groups=" << detail::join(c.gn_groups, i2s) << "\n";
    os << "rep_blocks=" << c.rep_blocks << "\n";
    os << "expansion=" << detail::float_str(c.expansion) << "\n";
    os << "resample_groups=" << detail::join(c.resample_groups, i2s) << "\n";
    os << "offset_scale=" << detail::float_str(c.offset_scale) << "\n";
    os << "norm_after_resampling=" << c.norm_after_resampling << "\n";
    os << "resampler_output_bias=" << b2s(c.resampler_output_bias) << "\n";
    os << "dwconv_kernel=" << c.dwconv_kernel << "\n";
    os << "resample_k=" << c.resample_k << "\n";
    os << "icatten_threshold=" << detail::float_str(c.icatten_threshold) << "\n";
    os << "interpolation=" << (c.interpolation == ops::Interp::kBilinear ? "bilinear" : "nearest") << "\n";
    return os.str();
}

// One key per line, '#' comments, list values comma-separated. Every key is
// required; unknown keys are rejected.
inline PyramidConfig parse_config(const std::string& text) {
    PyramidConfig c;
    std::vector<std::string> seen;
    auto mark = [&](const std::string& k) {
        for (const auto& s : seen)
            if (s == k) throw ConfigError("duplicate key: " + k);
        seen.push_back(k);
    };
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got: " + line);
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        mark(key);
        auto ints = [&]() {
            std::vector<int> out;
            for (const auto& tok : detail::split_csv(val)) out.push_back(detail::parse_int(key, detail::trim(tok)));
            return out;
        };
        if (key == "n_levels") c.n_levels = detail::parse_int(key, val);
        else if (key == "channels") c.channels = ints();
        else if (key == "columns") c.columns = detail::parse_int(key, val);
        else if (key == "orientation") {
            if (val == "bottom-up") c.orientation = Orientation::kBottomUp;
            else if (val == "top-down") c.orientation = Orientation::kTopDown;
            else throw ConfigError("orientation must be 'bottom-up' or 'top-down'");
        } else if (key == "squeeze") c.squeeze = ints();
        else if (key == "use_resampling") {
            c.use_resampling.clear();
            for (const auto& tok : detail::split_csv(val))
                c.use_resampling.push_back(detail::parse_bool(key, detail::trim(tok)));
        } else if (key == "compress_channels") c.compress_channels = ints();
        else if (key == "gn_groups") c.gn_groups = ints();
        else if (key == "rep_blocks") c.rep_blocks = detail::parse_int(key, val);
        else if (key == "expansion") c.expansion = detail::parse_float(key, val);
        else if (key == "resample_groups") c.resample_groups = ints();
        else if (key == "offset_scale") c.offset_scale = detail::parse_float(key, val);
        else if (key == "norm_after_resampling") c.norm_after_resampling = val;
        else if (key == "resampler_output_bias") c.resampler_output_bias = detail::parse_bool(key, val);
        else if (key == "dwconv_kernel") c.dwconv_kernel = detail::parse_int(key, val);
        else if (key == "resample_k") c.resample_k = detail::parse_int(key, val);
        else if (key == "icatten_threshold") c.icatten_threshold = detail::parse_float(key, val);
        else if (key == "interpolation") {
            if (val == "bilinear") c.interpolation = ops::Interp::kBilinear;
            else if (val == "nearest") c.interpolation = ops::Interp::kNearest;
            else throw ConfigError("interpolation must be 'bilinear' or 'nearest'");
        } else throw ConfigError("unknown config key: " + key);
    }
    static const char* kRequired[] = {
        "n_levels", "channels", "columns", "orientation", "squeeze", "use_resampling",
        "compress_channels", "gn_groups", "rep_blocks", "expansion", "resample_groups",
        "offset_scale", "norm_after_resampling", "resampler_output_bias", "dwconv_kernel",
        "resample_k", "icatten_threshold", "interpolation"};
    std::string missing;
    for (const char* k : kRequired) {
        bool found = false;
        for (const auto& s : seen)
            if (s == k) found = true;
        if (!found) missing += std::string(missing.empty() ? "" : ", ") + k;
    }
    if (!missing.empty()) throw ConfigError("missing config keys: " + missing);
    c.validate();
    return c;
}

} // namespace a3fpn

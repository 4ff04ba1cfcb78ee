#pragma once

// INI-style configuration for line sets and parametric sweeps.
//
//   ; comment lines start with ';' or '#'
//   [sweep]
//   parameter = fps                 ; fps | exposure_label | iso_label
//   reference = reference.csv       ; relative paths resolve against this file
//   mpp = 0.0000625
//   window = 128
//   overlap = 0.5
//   stride = 1
//   pattern = *.pgm
//
//   [line:L1]
//   start = 0.005, 0.0337           ; meters, x then y
//   end = 0.050, 0.0337
//   samples = 25
//
//   [variant:240fps]                ; one section per variant, in run order
//   frames = frames_240
//   fps = 240
//
// A lines-only file (for `compare`) holds just [line:*] sections.

#include <pivkit/csv.hpp>
#include <pivkit/error.hpp>
#include <pivkit/field.hpp>
#include <pivkit/metrics.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <set>
#include <string>
#include <vector>

namespace pivkit::config {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

inline pt::ptree read_ini(const fs::path& path)
{
    if (!fs::exists(path))
        throw Error("config file '" + path.string() + "' does not exist");
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open config file '" + path.string() + "'");
    // Trailing "; ..." / "# ..." comments are dropped; the INI reader only knows whole-line ones.
    std::stringstream text;
    for (std::string line; std::getline(in, line);) {
        for (std::size_t i = 1; i < line.size(); ++i) {
            if ((line[i] == ';' || line[i] == '#') && (line[i - 1] == ' ' || line[i - 1] == '\t')) {
                line.erase(i);
                break;
            }
        }
        text << line << '\n';
    }
    pt::ptree tree;
    try {
        pt::read_ini(text, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error("config '" + path.string() + "' line " + std::to_string(e.line()) + ": " + e.message());
    }
    return tree;
}

namespace detail {

inline std::string section_suffix(const std::string& name, const std::string& prefix)
{
    return name.rfind(prefix, 0) == 0 ? name.substr(prefix.size()) : std::string();
}

inline double number(const pt::ptree& sec, const std::string& key, const std::string& where)
{
    const auto raw = sec.get_optional<std::string>(key);
    if (!raw)
        throw Error(where + ": missing key '" + key + "'");
    double v = 0.0;
    if (!csv::parse_double(*raw, v))
        throw Error(where + ": '" + key + "' is not a number");
    return v;
}

inline Point2 point(const pt::ptree& sec, const std::string& key, const std::string& where)
{
    const auto raw = sec.get_optional<std::string>(key);
    if (!raw)
        throw Error(where + ": missing key '" + key + "'");
    const auto parts = csv::split(*raw);
    Point2 p;
    if (parts.size() != 2 || !csv::parse_double(parts[0], p.x) || !csv::parse_double(parts[1], p.y))
        throw Error(where + ": '" + key + "' must be 'x, y' in meters");
    return p;
}

} // namespace detail

inline std::vector<LineSegment> parse_lines(const pt::ptree& tree, const std::string& source)
{
    std::vector<LineSegment> lines;
    for (const auto& [name, sec] : tree) {
        const std::string id = detail::section_suffix(name, "line:");
        if (id.empty())
            continue;
        const std::string where = source + " [" + name + "]";
        LineSegment l;
        l.id = id;
        l.start = detail::point(sec, "start", where);
        l.end = detail::point(sec, "end", where);
        if (sec.get_optional<std::string>("samples")) {
            const double s = detail::number(sec, "samples", where);
            if (s != std::floor(s))
                throw Error(where + ": 'samples' must be an integer");
            l.sample_count = static_cast<int>(s);
        }
        try {
            l.validate();
        } catch (const Error& e) {
            throw Error(where + ": " + e.what());
        }
        lines.push_back(std::move(l));
    }
    return lines;
}

inline std::vector<LineSegment> load_lines(const fs::path& path)
{
    auto lines = parse_lines(read_ini(path), path.string());
    if (lines.empty())
        throw Error("'" + path.string() + "' defines no [line:<id>] sections");
    return lines;
}

struct Variant {
    std::string label;
    fs::path frames_directory;
    double fps = 0.0;
};

struct SweepConfig {
    std::string parameter = "fps";
    std::vector<Variant> variants;
    double meters_per_pixel = kDefaultMetersPerPixel;
    int window_size = 128;
    double overlap = 0.5;
    int stride = 1;
    std::string pattern = "*.pgm";
    std::vector<LineSegment> lines;
    fs::path reference;
};

inline SweepConfig load_sweep(const fs::path& path)
{
    const pt::ptree tree = read_ini(path);
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    SweepConfig cfg;
    const auto sweep = tree.get_child_optional("sweep");
    if (!sweep)
        throw Error(path.string() + ": missing or empty [sweep] section");
    const std::string where = path.string() + " [sweep]";
    cfg.parameter = sweep->get<std::string>("parameter", "fps");
    if (cfg.parameter != "fps" && cfg.parameter != "exposure_label" && cfg.parameter != "iso_label")
        throw Error(where + ": parameter must be one of fps, exposure_label, iso_label");
    const auto ref = sweep->get_optional<std::string>("reference");
    if (!ref)
        throw Error(where + ": missing key 'reference'");
    cfg.reference = resolve(*ref);
    if (sweep->get_optional<std::string>("mpp"))
        cfg.meters_per_pixel = detail::number(*sweep, "mpp", where);
    if (sweep->get_optional<std::string>("window"))
        cfg.window_size = static_cast<int>(detail::number(*sweep, "window", where));
    if (sweep->get_optional<std::string>("overlap"))
        cfg.overlap = detail::number(*sweep, "overlap", where);
    if (sweep->get_optional<std::string>("stride"))
        cfg.stride = static_cast<int>(detail::number(*sweep, "stride", where));
    cfg.pattern = sweep->get<std::string>("pattern", cfg.pattern);

    std::set<std::string> labels;
    for (const auto& [name, sec] : tree) {
        const std::string label = detail::section_suffix(name, "variant:");
        if (label.empty())
            continue;
        const std::string vwhere = path.string() + " [" + name + "]";
        if (!labels.insert(label).second)
            throw Error(vwhere + ": duplicate variant label '" + label + "'");
        const auto frames = sec.get_optional<std::string>("frames");
        if (!frames)
            throw Error(vwhere + ": missing key 'frames'");
        Variant v{label, resolve(*frames), detail::number(sec, "fps", vwhere)};
        if (!(v.fps > 0.0))
            throw Error(vwhere + ": fps must be positive");
        cfg.variants.push_back(std::move(v));
    }
    if (cfg.variants.empty())
        throw Error(path.string() + ": no [variant:<label>] sections");
    cfg.lines = parse_lines(tree, path.string());
    if (cfg.lines.empty())
        throw Error(path.string() + ": no [line:<id>] sections");
    return cfg;
}

} // namespace pivkit::config

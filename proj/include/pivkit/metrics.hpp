#pragma once

// Line profiles through a velocity field and deviation statistics against a
// reference profile.

#include <pivkit/csv.hpp>
#include <pivkit/error.hpp>
#include <pivkit/field.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pivkit {

struct Point2 {
    double x = 0.0; // m
    double y = 0.0; // m
};

struct LineSegment {
    std::string id;
    Point2 start;
    Point2 end;
    int sample_count = 25;

    double length() const { return std::hypot(end.x - start.x, end.y - start.y); }

    void validate() const
    {
        if (!(length() > 0.0))
            throw Error("line '" + id + "': start and end coincide");
        if (sample_count < 2)
            throw Error("line '" + id + "': sample_count must be at least 2");
    }
};

struct Profile {
    std::string line_id;
    std::vector<double> ystar;
    std::vector<double> speed;   // m/s
    std::vector<bool> flagged;   // sample touched a non-measured node

    std::size_t size() const { return ystar.size(); }
};

// Y* = (y - y_center) / (y_max - y_center): 0 at the segment center, +-1 at its ends.
inline double normalize_ordinate(double y, double y_center, double y_max)
{
    const double span = y_max - y_center;
    if (span == 0.0)
        throw std::domain_error("normalize_ordinate: y_max equals y_center");
    return (y - y_center) / span;
}

// Samples |(u, v)| at equispaced points from line.start (Y* = -1) to line.end
// (Y* = +1) by bilinear interpolation between node centers. Gaps are filled
// first; samples that lean on filled or still-invalid nodes are flagged, and
// invalid nodes are left out of the interpolation weights.
inline Profile sample_line(const VectorField& field, const LineSegment& line)
{
    line.validate();
    if (field.nodes.empty())
        throw Error("sample_line: empty field");
    const VectorField filled = fill_invalid(field);

    const double x0 = field.at(0, 0).x_m, y0 = field.at(0, 0).y_m;
    const double dx = field.cols > 1 ? field.at(1, 0).x_m - x0 : 0.0;
    const double dy = field.rows > 1 ? field.at(0, 1).y_m - y0 : 0.0;
    constexpr double slack = 1e-9;

    auto fractional = [&](double pos, double origin, double spacing, int count) {
        if (count == 1) {
            if (std::abs(pos - origin) > slack * std::max(1.0, std::abs(origin)))
                throw Error("line exceeds field extent (line '" + line.id + "')");
            return 0.0;
        }
        const double f = (pos - origin) / spacing;
        if (f < -slack || f > count - 1 + slack)
            throw Error("line exceeds field extent (line '" + line.id + "')");
        return std::clamp(f, 0.0, static_cast<double>(count - 1));
    };

    Profile p;
    p.line_id = line.id;
    const int n = line.sample_count;
    const double half = line.length() / 2.0;
    for (int k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) / (n - 1);
        const double x = line.start.x + t * (line.end.x - line.start.x);
        const double y = line.start.y + t * (line.end.y - line.start.y);
        const double fc = fractional(x, x0, dx, field.cols);
        const double fr = fractional(y, y0, dy, field.rows);
        const int c0 = std::min(static_cast<int>(fc), std::max(0, field.cols - 2));
        const int r0 = std::min(static_cast<int>(fr), std::max(0, field.rows - 2));
        const double tx = fc - c0, ty = fr - r0;

        double wsum = 0.0, u = 0.0, v = 0.0;
        bool flagged = false;
        for (int j = 0; j <= 1; ++j) {
            for (int i = 0; i <= 1; ++i) {
                const double w = (i ? tx : 1.0 - tx) * (j ? ty : 1.0 - ty);
                if (w == 0.0)
                    continue;
                const int c = std::min(c0 + i, field.cols - 1), r = std::min(r0 + j, field.rows - 1);
                const FieldNode& node = filled.at(c, r);
                if (!field.at(c, r).valid || field.at(c, r).interpolated)
                    flagged = true;
                if (!node.valid)
                    continue;
                wsum += w;
                u += w * node.u;
                v += w * node.v;
            }
        }
        if (wsum > 0.0) {
            u /= wsum;
            v /= wsum;
        }
        p.ystar.push_back(normalize_ordinate((t - 0.5) * line.length(), 0.0, half));
        p.speed.push_back(std::hypot(u, v));
        p.flagged.push_back(flagged);
    }
    return p;
}

// Linear interpolation of profile speeds at the given Y* values. Targets must
// lie within the profile's Y* range.
inline Profile resample(const Profile& profile, const std::vector<double>& ystar)
{
    if (profile.size() == 0)
        throw Error("resample: profile '" + profile.line_id + "' is empty");
    Profile out;
    out.line_id = profile.line_id;
    const auto& xs = profile.ystar;
    constexpr double slack = 1e-9;
    for (double y : ystar) {
        if (y < xs.front() - slack || y > xs.back() + slack)
            throw Error("resample: Y* " + csv::number(y) + " outside profile '" + profile.line_id + "' range");
        double s;
        bool flag;
        if (profile.size() == 1 || y <= xs.front()) {
            s = profile.speed.front();
            flag = profile.flagged.empty() ? false : profile.flagged.front();
        } else if (y >= xs.back()) {
            s = profile.speed.back();
            flag = profile.flagged.empty() ? false : profile.flagged.back();
        } else {
            const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), y) - xs.begin());
            const std::size_t lo = hi - 1;
            const double t = (y - xs[lo]) / (xs[hi] - xs[lo]);
            s = t == 0.0 ? profile.speed[lo] : profile.speed[lo] + t * (profile.speed[hi] - profile.speed[lo]);
            flag = !profile.flagged.empty() && (profile.flagged[lo] || (t > 0.0 && profile.flagged[hi]));
        }
        out.ystar.push_back(y);
        out.speed.push_back(s);
        out.flagged.push_back(flag);
    }
    return out;
}

struct DeviationReport {
    std::string line_id;
    double mad = 0.0;             // m/s
    double std_dev = 0.0;         // m/s, population
    std::optional<double> mape;   // percent; empty when a reference value is zero
    std::size_t points = 0;
};

namespace detail {

inline DeviationReport deviation(std::string id, const std::vector<double>& m, const std::vector<double>& r)
{
    DeviationReport rep;
    rep.line_id = std::move(id);
    rep.points = m.size();
    if (m.empty())
        return rep;
    const double n = static_cast<double>(m.size());
    double abs_sum = 0.0, diff_sum = 0.0, pct_sum = 0.0;
    bool mape_defined = true;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double d = m[i] - r[i];
        abs_sum += std::abs(d);
        diff_sum += d;
        if (r[i] == 0.0)
            mape_defined = false;
        else
            pct_sum += std::abs(d) / std::abs(r[i]);
    }
    const double mean_diff = diff_sum / n;
    double var = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double e = (m[i] - r[i]) - mean_diff;
        var += e * e;
    }
    rep.mad = abs_sum / n;
    rep.std_dev = std::sqrt(var / n);
    if (mape_defined)
        rep.mape = 100.0 * pct_sum / n;
    return rep;
}

inline bool same_grid(const Profile& a, const Profile& b)
{
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::abs(a.ystar[i] - b.ystar[i]) > 1e-12)
            return false;
    return true;
}

} // namespace detail

// Reference values on the measured profile's Y* grid.
inline Profile align_reference(const Profile& measured, const Profile& reference)
{
    if (measured.line_id != reference.line_id)
        throw Error("compare: line ids differ ('" + measured.line_id + "' vs '" + reference.line_id + "')");
    return detail::same_grid(measured, reference) ? reference : resample(reference, measured.ystar);
}

// mad = mean|m - r|, std_dev = population std of (m - r), mape = 100 mean(|m - r| / |r|).
inline DeviationReport compare(const Profile& measured, const Profile& reference)
{
    const Profile ref = align_reference(measured, reference);
    return detail::deviation(measured.line_id, measured.speed, ref.speed);
}

// All points of all lines treated as one sample.
inline DeviationReport compare_pooled(const std::vector<std::pair<Profile, Profile>>& lines,
                                      std::string id = "pooled")
{
    std::vector<double> m, r;
    for (const auto& [meas, refp] : lines) {
        const Profile ref = align_reference(meas, refp);
        m.insert(m.end(), meas.speed.begin(), meas.speed.end());
        r.insert(r.end(), ref.speed.begin(), ref.speed.end());
    }
    return detail::deviation(std::move(id), m, r);
}

inline constexpr std::string_view kProfileHeader = "line_id,ystar,speed_mps";

// Profiles grouped by line_id (first-appearance order), each sorted by Y*.
inline std::vector<Profile> load_reference(const std::filesystem::path& path)
{
    const auto lines = csv::read_lines(path);
    if (lines.empty() || csv::trim(lines.front()) != kProfileHeader)
        throw Error("'" + path.string() + "': expected header '" + std::string(kProfileHeader) + "'");

    std::vector<std::string> order;
    std::map<std::string, std::vector<std::pair<double, double>>> rows;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (csv::trim(lines[ln]).empty())
            continue;
        const auto cells = csv::split(lines[ln]);
        double ys = 0.0, sp = 0.0;
        const std::string id(cells.empty() ? std::string_view{} : csv::trim(cells[0]));
        if (cells.size() != 3 || id.empty() || !csv::parse_double(cells[1], ys) || !csv::parse_double(cells[2], sp) ||
            !std::isfinite(ys) || !std::isfinite(sp))
            throw Error("'" + path.string() + "' line " + std::to_string(ln + 1) + ": malformed reference row");
        auto [it, inserted] = rows.try_emplace(id);
        if (inserted)
            order.push_back(id);
        for (const auto& [y, s] : it->second)
            if (y == ys)
                throw Error("'" + path.string() + "' line " + std::to_string(ln + 1) + ": duplicate point (" + id +
                            ", " + csv::number(ys) + ")");
        it->second.emplace_back(ys, sp);
    }

    std::vector<Profile> out;
    for (const auto& id : order) {
        auto pts = rows[id];
        std::sort(pts.begin(), pts.end());
        Profile p;
        p.line_id = id;
        for (const auto& [y, s] : pts) {
            p.ystar.push_back(y);
            p.speed.push_back(s);
            p.flagged.push_back(false);
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline std::string format_profiles(const std::vector<Profile>& profiles)
{
    std::string out = std::string(kProfileHeader) + "\n";
    for (const auto& p : profiles)
        for (std::size_t i = 0; i < p.size(); ++i)
            out += p.line_id + ',' + csv::number(p.ystar[i]) + ',' + csv::number(p.speed[i]) + '\n';
    return out;
}

inline constexpr std::string_view kReportHeader = "line_id,mad_mps,std_mps,mape_pct";

inline std::string format_mape(const std::optional<double>& mape)
{
    return mape ? csv::number(*mape) : std::string("undefined");
}

inline std::string format_reports(const std::vector<DeviationReport>& reports)
{
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& r : reports)
        out += r.line_id + ',' + csv::number(r.mad) + ',' + csv::number(r.std_dev) + ',' + format_mape(r.mape) + '\n';
    return out;
}

// Fixed-width table: Line | MAD (m/s) | Standard Deviation (m/s) | MAPE (%).
inline std::string format_report_table(const std::vector<DeviationReport>& reports)
{
    std::size_t idw = 4;
    for (const auto& r : reports)
        idw = std::max(idw, r.line_id.size());
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-*s  %10s  %24s  %9s\n", static_cast<int>(idw), "Line", "MAD (m/s)",
                  "Standard Deviation (m/s)", "MAPE (%)");
    out += buf;
    for (const auto& r : reports) {
        const std::string mape = r.mape ? [&] {
            char m[32];
            std::snprintf(m, sizeof m, "%.2f", *r.mape);
            return std::string(m);
        }()
                                        : std::string("undefined");
        std::snprintf(buf, sizeof buf, "%-*s  %10.4f  %24.4f  %9s\n", static_cast<int>(idw), r.line_id.c_str(), r.mad,
                      r.std_dev, mape.c_str());
        out += buf;
    }
    return out;
}

} // namespace pivkit

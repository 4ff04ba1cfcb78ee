#pragma once

// Calibrated velocity fields: displacement -> velocity conversion, outlier
// rejection, gap filling and the CSV interchange format.
//
// Coordinates: x is streamwise, y transverse. Pixel space has its origin at
// the top-left pixel center with y pointing down. Meter space has its origin
// at the bottom-left pixel center with y pointing up, so
//     x_m = x_px * mpp,   y_m = (frame_height - 1 - y_px) * mpp
// and v (m/s) is positive upward.

#include <pivkit/correlation.hpp>
#include <pivkit/csv.hpp>
#include <pivkit/error.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace pivkit {

struct Calibration {
    double meters_per_pixel = 0.0;
    double dt = 0.0; // seconds

    void validate() const
    {
        if (!(meters_per_pixel > 0.0) || !(dt > 0.0))
            throw Error("calibration requires meters_per_pixel > 0 and dt > 0");
    }
};

// Smartphone setup: 120 mm field of view across 1920 px.
inline constexpr double kDefaultMetersPerPixel = 0.0000625;

// Maps pixel coordinates to the meter frame described above.
struct PixelFrame {
    double meters_per_pixel = 1.0;
    int frame_height = 1;

    double x_m(double x_px) const { return x_px * meters_per_pixel; }
    double y_m(double y_px) const { return (frame_height - 1 - y_px) * meters_per_pixel; }
    double x_px(double x_m) const { return x_m / meters_per_pixel; }
    double y_px(double y_m) const { return frame_height - 1 - y_m / meters_per_pixel; }
};

struct Velocity {
    double u = 0.0;
    double v = 0.0;
};

// velocity = meters_per_pixel * pixels / dt, per axis, in pixel-axis orientation.
inline Velocity to_velocity(const DisplacementEstimate& est, const Calibration& cal)
{
    return {cal.meters_per_pixel * est.dx / cal.dt, cal.meters_per_pixel * est.dy / cal.dt};
}

struct FieldNode {
    double x_px = 0.0;
    double y_px = 0.0;
    double x_m = 0.0;
    double y_m = 0.0;
    double u = 0.0; // m/s, streamwise
    double v = 0.0; // m/s, upward
    bool valid = false;
    bool interpolated = false;
    double snr = 0.0; // +inf when no secondary peak; 0 for invalid or interpolated nodes
    bool rejected = false; // failed the median test; u, v still hold the measurement
};

struct VectorField {
    int cols = 0;
    int rows = 0;
    Calibration calibration;
    std::vector<FieldNode> nodes; // row-major

    std::size_t size() const { return nodes.size(); }
    const FieldNode& at(int c, int r) const { return nodes[static_cast<std::size_t>(r) * cols + c]; }
    FieldNode& at(int c, int r) { return nodes[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t valid_count() const
    {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.valid; }));
    }
    double valid_fraction() const { return nodes.empty() ? 0.0 : static_cast<double>(valid_count()) / nodes.size(); }
};

inline void mark_invalid(FieldNode& n)
{
    n.u = n.v = 0.0;
    n.valid = false;
    n.interpolated = false;
    n.rejected = false;
    n.snr = 0.0;
}

// Node positions for a grid, all nodes invalid.
inline VectorField empty_field(const WindowGrid& grid, const Calibration& cal)
{
    cal.validate();
    VectorField f;
    f.cols = grid.cols;
    f.rows = grid.rows;
    f.calibration = cal;
    const PixelFrame frame{cal.meters_per_pixel, grid.frame_height};
    f.nodes.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        FieldNode& n = f.nodes[i];
        n.x_px = grid.center_x(i);
        n.y_px = grid.center_y(i);
        n.x_m = frame.x_m(n.x_px);
        n.y_m = frame.y_m(n.y_px);
    }
    return f;
}

inline VectorField assemble_field(const WindowGrid& grid, std::span<const DisplacementEstimate> estimates,
                                  const Calibration& cal)
{
    if (estimates.size() != grid.size())
        throw Error("assemble_field: " + std::to_string(estimates.size()) + " estimates for " +
                    std::to_string(grid.size()) + " windows");
    VectorField f = empty_field(grid, cal);
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        const DisplacementEstimate& e = estimates[i];
        FieldNode& n = f.nodes[i];
        if (!e.valid || !std::isfinite(e.dx) || !std::isfinite(e.dy))
            continue;
        const Velocity vel = to_velocity(e, cal);
        n.u = vel.u;
        n.v = -vel.v;
        n.valid = true;
        n.snr = e.snr ? *e.snr : std::numeric_limits<double>::infinity();
    }
    return f;
}

namespace detail {

inline double median(std::vector<double> v)
{
    const std::size_t n = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1)
        return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

template <class Fn>
void for_each_neighbor(const VectorField& f, int c, int r, Fn&& fn)
{
    for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
            if (dc == 0 && dr == 0)
                continue;
            const int cc = c + dc, rr = r + dr;
            if (cc < 0 || rr < 0 || cc >= f.cols || rr >= f.rows)
                continue;
            fn(f.at(cc, rr));
        }
}

} // namespace detail

// Normalized median test on displacements (px). A valid node is rejected when,
// for either component,
//     |d - median(d_nb)| / (median(|d_nb - median(d_nb)|) + epsilon) > threshold
// over its measured 8-neighbors, rejected ones included. Rejected nodes keep
// their measurement, so a second application sees the same neighborhoods and
// rejects nothing more.
inline VectorField validate_median(const VectorField& field, double threshold = 2.0, double epsilon = 0.1)
{
    if (!(threshold > 0.0))
        throw Error("median test threshold must be positive");
    if (!(epsilon >= 0.0))
        throw Error("median test epsilon must be non-negative");
    field.calibration.validate();

    VectorField out = field;
    const double to_px = field.calibration.dt / field.calibration.meters_per_pixel;
    std::vector<double> nb_u, nb_v, res;
    auto normalized_residual = [&](const std::vector<double>& nb, double d) {
        const double med = detail::median(nb);
        res.clear();
        for (double x : nb)
            res.push_back(std::abs(x - med));
        return std::abs(d - med) / (detail::median(res) + epsilon);
    };
    for (int r = 0; r < field.rows; ++r) {
        for (int c = 0; c < field.cols; ++c) {
            const FieldNode& n = field.at(c, r);
            if (!n.valid)
                continue;
            nb_u.clear();
            nb_v.clear();
            detail::for_each_neighbor(field, c, r, [&](const FieldNode& nb) {
                if (nb.valid || nb.rejected) {
                    nb_u.push_back(nb.u * to_px);
                    nb_v.push_back(nb.v * to_px);
                }
            });
            if (nb_u.empty())
                continue;
            const double ru = normalized_residual(nb_u, n.u * to_px);
            const double rv = normalized_residual(nb_v, n.v * to_px);
            if (std::max(ru, rv) > threshold) {
                FieldNode& o = out.at(c, r);
                o.valid = false;
                o.rejected = true;
                o.snr = 0.0;
            }
        }
    }
    return out;
}

// Replaces invalid nodes by the mean of their valid 8-neighbors when at least
// three exist. Filled nodes count as valid for later passes; passes repeat
// until no node changes.
inline VectorField fill_invalid(const VectorField& field)
{
    VectorField out = field;
    for (;;) {
        std::vector<std::pair<std::size_t, Velocity>> fills;
        for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < out.cols; ++c) {
                if (out.at(c, r).valid)
                    continue;
                int count = 0;
                Velocity sum;
                detail::for_each_neighbor(out, c, r, [&](const FieldNode& nb) {
                    if (nb.valid) {
                        ++count;
                        sum.u += nb.u;
                        sum.v += nb.v;
                    }
                });
                if (count >= 3)
                    fills.push_back({static_cast<std::size_t>(r) * out.cols + c, {sum.u / count, sum.v / count}});
            }
        }
        if (fills.empty())
            break;
        for (const auto& [i, vel] : fills) {
            FieldNode& n = out.nodes[i];
            n.u = vel.u;
            n.v = vel.v;
            n.valid = true;
            n.interpolated = true;
            n.rejected = false;
            n.snr = 0.0;
        }
    }
    return out;
}

// Node-wise mean over the fields in which the node is valid. Nodes valid in
// no field stay invalid.
inline VectorField average_fields(std::span<const VectorField> fields)
{
    if (fields.empty())
        throw Error("average_fields: no fields");
    VectorField out = fields.front();
    for (const auto& f : fields)
        if (f.cols != out.cols || f.rows != out.rows)
            throw Error("average_fields: fields have different grid shapes");
    for (std::size_t i = 0; i < out.size(); ++i) {
        int count = 0;
        double u = 0.0, v = 0.0, snr = 0.0;
        bool all_interpolated = true;
        for (const auto& f : fields) {
            const FieldNode& n = f.nodes[i];
            if (!n.valid)
                continue;
            ++count;
            u += n.u;
            v += n.v;
            snr += n.snr;
            all_interpolated = all_interpolated && n.interpolated;
        }
        FieldNode& n = out.nodes[i];
        if (count == 0) {
            mark_invalid(n);
            continue;
        }
        n.u = u / count;
        n.v = v / count;
        n.valid = true;
        n.interpolated = all_interpolated;
        n.snr = all_interpolated ? 0.0 : snr / count;
    }
    return out;
}

inline constexpr std::string_view kFieldHeader = "x_px,y_px,x_m,y_m,u_mps,v_mps,valid,snr";

inline std::string format_field(const VectorField& field)
{
    std::string out(kFieldHeader);
    out += '\n';
    for (const FieldNode& n : field.nodes) {
        out += csv::number(n.x_px) + ',' + csv::number(n.y_px) + ',' + csv::number(n.x_m) + ',' +
               csv::number(n.y_m) + ',' + csv::number(n.valid ? n.u : 0.0) + ',' + csv::number(n.valid ? n.v : 0.0) +
               ',' + (n.valid ? "1" : "0") +
               ',' + csv::number(n.snr) + '\n';
    }
    return out;
}

inline void write_field(const VectorField& field, const std::filesystem::path& path)
{
    csv::write_text(path, format_field(field));
}

// Reads a field CSV. The grid shape is recovered from the row-major layout.
// The file does not carry dt; when no calibration is given, meters_per_pixel
// is inferred from the positions and dt is set to 1 s. Valid nodes with snr 0
// are read back as interpolated.
inline VectorField read_field(const std::filesystem::path& path, std::optional<Calibration> cal = std::nullopt)
{
    const auto lines = csv::read_lines(path);
    if (lines.empty() || csv::trim(lines.front()) != kFieldHeader)
        throw Error("'" + path.string() + "': expected header '" + std::string(kFieldHeader) + "'");
    VectorField f;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (csv::trim(lines[ln]).empty())
            continue;
        const auto cells = csv::split(lines[ln]);
        double vals[8];
        bool ok = cells.size() == 8;
        for (std::size_t k = 0; ok && k < 8; ++k)
            ok = csv::parse_double(cells[k], vals[k]);
        if (!ok)
            throw Error("'" + path.string() + "' line " + std::to_string(ln + 1) + ": malformed field row");
        FieldNode n{vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6] != 0.0, false, vals[7]};
        n.interpolated = n.valid && n.snr == 0.0;
        if (!n.valid)
            mark_invalid(n);
        f.nodes.push_back(n);
    }
    if (f.nodes.empty())
        throw Error("'" + path.string() + "': field has no nodes");

    const double y0 = f.nodes.front().y_px;
    std::size_t cols = 0;
    while (cols < f.nodes.size() && f.nodes[cols].y_px == y0)
        ++cols;
    if (f.nodes.size() % cols != 0)
        throw Error("'" + path.string() + "': node count is not a whole number of grid rows");
    f.cols = static_cast<int>(cols);
    f.rows = static_cast<int>(f.nodes.size() / cols);

    if (cal) {
        f.calibration = *cal;
    } else {
        double mpp = 1.0;
        for (const auto& n : f.nodes)
            if (n.x_px != 0.0) {
                mpp = n.x_m / n.x_px;
                break;
            }
        f.calibration = {mpp > 0.0 ? mpp : 1.0, 1.0};
    }
    return f;
}

} // namespace pivkit

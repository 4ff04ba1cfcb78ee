#pragma once

// Open-channel entrance (development) length and the flume design sweep.

#include <pivkit/csv.hpp>
#include <pivkit/error.hpp>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace pivkit::hydraulics {

// Water at 20 degC, m^2/s.
inline constexpr double kWaterViscosity20C = 1.004e-6;

// L/D = [0.631^1.6 + (0.0442 Re)^1.6]^(1/1.6)
inline double development_ratio(double re)
{
    if (!(re >= 0.0))
        throw std::domain_error("development_ratio: Reynolds number must be non-negative");
    constexpr double p = 1.6;
    if (re == 0.0)
        return 0.631;
    return std::pow(std::pow(0.631, p) + std::pow(0.0442 * re, p), 1.0 / p);
}

// Re from velocity (mm/s), depth (mm) and kinematic viscosity (m^2/s).
inline double reynolds(double velocity_mmps, double depth_mm, double viscosity)
{
    return (velocity_mmps * 1e-3) * (depth_mm * 1e-3) / viscosity;
}

struct ChannelDesign {
    double reynolds = 0.0;
    double free_surface_level = 0.0; // D, mm
    double kinematic_viscosity = kWaterViscosity20C;
    double velocity = 0.0;           // mm/s

    double development_length() const { return free_surface_level * development_ratio(reynolds); } // mm

    void validate() const
    {
        if (!(reynolds > 0.0 && free_surface_level > 0.0 && kinematic_viscosity > 0.0 && velocity > 0.0))
            throw Error("channel design values must all be positive");
        const double implied = pivkit::hydraulics::reynolds(velocity, free_surface_level, kinematic_viscosity);
        if (std::abs(implied - reynolds) > 0.005 * implied)
            throw Error("channel design is inconsistent: Re " + csv::number(reynolds) + " vs v*D/nu " +
                        csv::number(implied));
    }
};

inline ChannelDesign make_design(double velocity_mmps, double depth_mm, double viscosity = kWaterViscosity20C)
{
    ChannelDesign d{reynolds(velocity_mmps, depth_mm, viscosity), depth_mm, viscosity, velocity_mmps};
    d.validate();
    return d;
}

struct DesignRow {
    double velocity_mmps = 0.0;
    double depth_mm = 0.0;
    double re = 0.0;
    double length_mm = 0.0;
};

// Depths run min, min+step, ... up to max (inclusive within half a step's
// rounding slack). A step wider than the range yields the single depth min.
inline std::vector<DesignRow> design_sweep(const std::vector<double>& velocities_mmps, double depth_min_mm,
                                           double depth_max_mm, double viscosity, double step_mm)
{
    if (velocities_mmps.empty())
        throw Error("design sweep needs at least one velocity");
    if (!(depth_min_mm > 0.0) || !(depth_min_mm < depth_max_mm))
        throw Error("design sweep needs 0 < depth min < depth max");
    if (!(step_mm > 0.0))
        throw Error("design sweep step must be positive");
    if (!(viscosity > 0.0))
        throw Error("viscosity must be positive");
    for (double v : velocities_mmps)
        if (!(v > 0.0))
            throw Error("design sweep velocities must be positive");

    const auto steps = static_cast<long>(std::floor((depth_max_mm - depth_min_mm) / step_mm + 1e-9));
    std::vector<DesignRow> rows;
    for (double v : velocities_mmps) {
        for (long k = 0; k <= steps; ++k) {
            const double d = depth_min_mm + k * step_mm;
            const double re = reynolds(v, d, viscosity);
            rows.push_back({v, d, re, d * development_ratio(re)});
        }
    }
    return rows;
}

inline constexpr const char* kDesignHeader = "velocity_mmps,D_mm,Re,L_mm";

inline std::string format_design(const std::vector<DesignRow>& rows)
{
    std::string out = std::string(kDesignHeader) + "\n";
    for (const auto& r : rows)
        out += csv::number(r.velocity_mmps) + ',' + csv::number(r.depth_mm) + ',' + csv::number(r.re) + ',' +
               csv::number(r.length_mm) + '\n';
    return out;
}

} // namespace pivkit::hydraulics

#pragma once

// Synthetic particle images with known ground truth.
//
// Particles are scattered uniformly by a seeded std::mt19937_64 (its output
// sequence is fixed by the C++ standard) and converted to doubles and normal
// deviates by the code below rather than <random> distributions, whose
// algorithms differ between standard libraries. Equal seeds therefore give
// identical frames on every platform.

#include <pivkit/correlation.hpp>
#include <pivkit/error.hpp>
#include <pivkit/field.hpp>
#include <pivkit/frame_io.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace pivkit {

struct UniformFlow {
    double u = 0.0; // m/s
    double v = 0.0;
};

struct SolidRotation {
    double center_x = 0.0; // m
    double center_y = 0.0;
    double omega = 0.0;    // rad/s, counter-clockwise positive
};

// Inviscid flow past a circular cylinder, free stream along +x.
struct CylinderPotential {
    double center_x = 0.0; // m
    double center_y = 0.0;
    double radius = 0.0;   // m
    double u_inf = 0.0;    // m/s
};

using FlowSpec = std::variant<UniformFlow, SolidRotation, CylinderPotential>;

inline Velocity evaluate_flow(const FlowSpec& spec, double x_m, double y_m)
{
    return std::visit(
        [&](const auto& f) -> Velocity {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, UniformFlow>) {
                return {f.u, f.v};
            } else if constexpr (std::is_same_v<T, SolidRotation>) {
                return {-f.omega * (y_m - f.center_y), f.omega * (x_m - f.center_x)};
            } else {
                if (!(f.radius > 0.0))
                    throw Error("cylinder radius must be positive");
                const double x = x_m - f.center_x, y = y_m - f.center_y;
                const double r2 = x * x + y * y;
                if (r2 < f.radius * f.radius)
                    return {};
                const double r4 = r2 * r2, R2 = f.radius * f.radius;
                return {f.u_inf * (1.0 - R2 * (x * x - y * y) / r4), -2.0 * f.u_inf * R2 * x * y / r4};
            }
        },
        spec);
}

// True where the flow has a solid body (no fluid, no tracer particles).
inline bool inside_body(const FlowSpec& spec, double x_m, double y_m)
{
    const auto* cyl = std::get_if<CylinderPotential>(&spec);
    return cyl && std::hypot(x_m - cyl->center_x, y_m - cyl->center_y) < cyl->radius;
}

struct SynthConfig {
    int width = 1920;
    int height = 1080;
    double particle_density = 0.02; // particles / px^2
    double particle_diameter = 3.0; // px, e^-2 intensity diameter
    double noise_sigma = 0.0;       // additive Gaussian, luminance units
    std::uint64_t seed = 42;
    Calibration calibration{kDefaultMetersPerPixel, 1.0 / 240.0};

    void validate() const
    {
        if (width <= 0 || height <= 0)
            throw Error("synthetic frame dimensions must be positive");
        if (!(particle_density > 0.0))
            throw Error("particle density must be positive");
        if (!(particle_diameter >= 1.0))
            throw Error("particle diameter must be at least 1 px");
        if (!(noise_sigma >= 0.0))
            throw Error("noise sigma must be non-negative");
        calibration.validate();
    }
};

class SynthRandom {
public:
    explicit SynthRandom(std::uint64_t seed) : engine_(seed) {}

    // 53-bit uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Box-Muller; one deviate per call.
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
};

struct Particle {
    double x = 0.0; // px
    double y = 0.0;
};

namespace detail {

inline void render_particles(Frame& frame, const std::vector<Particle>& particles, double diameter)
{
    const double k = 8.0 / (diameter * diameter); // exp(-2) at r = d/2
    const int reach = static_cast<int>(std::ceil(1.5 * diameter));
    for (const Particle& p : particles) {
        const int cx = static_cast<int>(std::lround(p.x)), cy = static_cast<int>(std::lround(p.y));
        const int x0 = std::max(0, cx - reach), x1 = std::min(frame.width - 1, cx + reach);
        const int y0 = std::max(0, cy - reach), y1 = std::min(frame.height - 1, cy + reach);
        for (int y = y0; y <= y1; ++y) {
            const double dy2 = (y - p.y) * (y - p.y);
            for (int x = x0; x <= x1; ++x)
                frame.at(x, y) += std::exp(-k * ((x - p.x) * (x - p.x) + dy2));
        }
    }
}

// Largest displacement (px) per step, sampled on a coarse lattice.
inline double max_step_px(const FlowSpec& spec, const SynthConfig& cfg, const PixelFrame& pf)
{
    double best = 0.0;
    constexpr int kSamples = 64;
    for (int j = 0; j <= kSamples; ++j)
        for (int i = 0; i <= kSamples; ++i) {
            const double x = (cfg.width - 1) * static_cast<double>(i) / kSamples;
            const double y = (cfg.height - 1) * static_cast<double>(j) / kSamples;
            const Velocity vel = evaluate_flow(spec, pf.x_m(x), pf.y_m(y));
            best = std::max(best, std::hypot(vel.u, vel.v));
        }
    return best * cfg.calibration.dt / cfg.calibration.meters_per_pixel;
}

} // namespace detail

struct SynthSequence {
    std::vector<Frame> frames;
    std::vector<std::string> warnings;
};

// Renders frame_count frames; frame k+1 advects every particle of frame k by
// one explicit Euler step of length dt. Particles are seeded over the frame
// plus a margin so that the inflow side stays populated. Particles inside a
// solid body are not drawn.
inline SynthSequence render_sequence(const FlowSpec& spec, const SynthConfig& cfg, int frame_count = 2)
{
    cfg.validate();
    if (frame_count < 1)
        throw Error("frame count must be at least 1");
    const PixelFrame pf{cfg.calibration.meters_per_pixel, cfg.height};
    const double dt = cfg.calibration.dt, mpp = cfg.calibration.meters_per_pixel;

    const double travel = detail::max_step_px(spec, cfg, pf) * 1.25 * (frame_count - 1);
    const double margin = std::ceil(travel + 2.0 * cfg.particle_diameter) + 2.0;
    const double span_x = cfg.width + 2.0 * margin, span_y = cfg.height + 2.0 * margin;
    const auto count = static_cast<std::size_t>(std::llround(cfg.particle_density * span_x * span_y));

    SynthRandom rng(cfg.seed);
    std::vector<Particle> particles(count);
    for (Particle& p : particles) {
        p.x = -margin + rng.uniform() * span_x;
        p.y = -margin + rng.uniform() * span_y;
    }

    std::vector<Particle> visible;
    visible.reserve(particles.size());
    SynthSequence seq;
    seq.frames.reserve(static_cast<std::size_t>(frame_count));
    for (int k = 0; k < frame_count; ++k) {
        if (k > 0) {
            for (Particle& p : particles) {
                const Velocity vel = evaluate_flow(spec, pf.x_m(p.x), pf.y_m(p.y));
                p.x += vel.u * dt / mpp;
                p.y -= vel.v * dt / mpp;
            }
        }
        Frame f = make_frame(cfg.width, cfg.height);
        f.source_index = k;
        visible.clear();
        for (const Particle& p : particles)
            if (!inside_body(spec, pf.x_m(p.x), pf.y_m(p.y)))
                visible.push_back(p);
        detail::render_particles(f, visible, cfg.particle_diameter);
        seq.frames.push_back(std::move(f));
    }
    for (Frame& f : seq.frames) {
        for (double& v : f.intensities) {
            if (cfg.noise_sigma > 0.0)
                v += cfg.noise_sigma * rng.normal();
            v = std::clamp(v, 0.0, 1.0);
        }
    }
    return seq;
}

// Flags seeding too sparse for a window of the given size.
inline std::vector<std::string> seeding_warnings(const SynthConfig& cfg, int window_size)
{
    const double per_window = cfg.particle_density * window_size * window_size;
    if (per_window < 5.0)
        return {"low seeding: about " + csv::number(per_window) + " particles per " + std::to_string(window_size) +
                " px window (fewer than 5)"};
    return {};
}

// Exact flow sampled at the window centers of grid.
inline VectorField ground_truth(const FlowSpec& spec, const WindowGrid& grid, const Calibration& cal)
{
    VectorField f = empty_field(grid, cal);
    for (FieldNode& n : f.nodes) {
        const Velocity vel = evaluate_flow(spec, n.x_m, n.y_m);
        n.u = vel.u;
        n.v = vel.v;
        n.valid = true;
        n.snr = std::numeric_limits<double>::infinity();
    }
    return f;
}

struct SynthPair {
    FramePair pair;
    VectorField truth;
    std::vector<std::string> warnings;
};

inline SynthPair render_pair(const FlowSpec& spec, const SynthConfig& cfg, const WindowGrid& grid)
{
    if (grid.frame_width != cfg.width || grid.frame_height != cfg.height)
        throw Error("render_pair: grid does not match the synthetic frame size");
    SynthSequence seq = render_sequence(spec, cfg, 2);
    SynthPair out{make_pair(std::move(seq.frames[0]), std::move(seq.frames[1]), cfg.calibration.dt),
                  ground_truth(spec, grid, cfg.calibration), seeding_warnings(cfg, grid.window_size)};
    return out;
}

} // namespace pivkit

#pragma once

// Windowed normalized cross-correlation with sub-pixel peak refinement.
//
// For a window pair (a, b) of size w the correlation map holds, for every
// integer shift s with |s_x|, |s_y| <= w-1,
//
//     C(s) = sum_x a'(x) b'(x + s) / sqrt(sum a'^2 * sum b'^2)
//
// where a', b' are the mean-subtracted windows and pixels outside the window
// count as zero. A particle pattern that moves by +d between a and b peaks at
// s = d. The sum is evaluated through 2w x 2w zero-padded real FFTs, so shifts
// never wrap around.

#include <pivkit/error.hpp>
#include <pivkit/frame_io.hpp>

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace pivkit {

struct WindowOrigin {
    int x = 0;
    int y = 0;
    friend bool operator==(const WindowOrigin&, const WindowOrigin&) = default;
};

struct WindowGrid {
    int frame_width = 0;
    int frame_height = 0;
    int window_size = 0;
    double overlap_fraction = 0.0;
    int step = 0;
    int cols = 0;
    int rows = 0;
    std::vector<WindowOrigin> origins; // row-major

    std::size_t size() const { return origins.size(); }
    double center_x(std::size_t i) const { return origins[i].x + (window_size - 1) / 2.0; }
    double center_y(std::size_t i) const { return origins[i].y + (window_size - 1) / 2.0; }
};

constexpr bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

// Largest centered block of windows that fits the frame. step = floor(w * (1 - overlap)).
inline WindowGrid build_grid(int frame_width, int frame_height, int window_size, double overlap_fraction)
{
    if (window_size < 16 || !is_power_of_two(window_size))
        throw Error("window size must be a power of two >= 16 (got " + std::to_string(window_size) + ")");
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
        throw Error("overlap fraction must be in [0, 1)");
    if (frame_width <= 0 || frame_height <= 0)
        throw Error("frame dimensions must be positive");
    if (window_size > std::min(frame_width, frame_height))
        throw Error("window exceeds frame (" + std::to_string(window_size) + " px window, " +
                    std::to_string(frame_width) + "x" + std::to_string(frame_height) + " frame)");

    WindowGrid g;
    g.frame_width = frame_width;
    g.frame_height = frame_height;
    g.window_size = window_size;
    g.overlap_fraction = overlap_fraction;
    g.step = std::max(1, static_cast<int>(std::floor(window_size * (1.0 - overlap_fraction))));
    g.cols = (frame_width - window_size) / g.step + 1;
    g.rows = (frame_height - window_size) / g.step + 1;
    const int x0 = (frame_width - ((g.cols - 1) * g.step + window_size)) / 2;
    const int y0 = (frame_height - ((g.rows - 1) * g.step + window_size)) / 2;
    g.origins.reserve(static_cast<std::size_t>(g.cols) * g.rows);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c)
            g.origins.push_back({x0 + c * g.step, y0 + r * g.step});
    return g;
}

struct CorrelationMap {
    int window_size = 0;
    WindowOrigin window_origin;
    bool valid = false;
    std::vector<double> values; // (2w-1) x (2w-1), row-major, center = zero shift

    int extent() const { return 2 * window_size - 1; }
    // Value at integer shift (sx, sy).
    double at_shift(int sx, int sy) const
    {
        return values[static_cast<std::size_t>(sy + window_size - 1) * extent() + (sx + window_size - 1)];
    }
};

struct DisplacementEstimate {
    double dx = 0.0; // px
    double dy = 0.0; // px, pixel rows (downward)
    double peak_value = 0.0;
    std::optional<double> snr; // empty: no secondary peak, ratio unbounded
    bool valid = false;
};

namespace detail {

inline std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

template <class T>
struct FftwDeleter {
    void operator()(T* p) const { fftw_free(p); }
};

template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwDeleter<T>>;

template <class T>
FftwBuffer<T> fftw_alloc(std::size_t n)
{
    auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
    if (!p)
        throw std::bad_alloc();
    return FftwBuffer<T>(p);
}

} // namespace detail

// Holds FFTW plans and scratch buffers for one window size. Not safe to use
// from several threads at once; give each worker its own instance.
class Correlator {
public:
    explicit Correlator(int window_size)
        : w_(window_size), n_(2 * window_size), spectrum_len_(static_cast<std::size_t>(n_) * (n_ / 2 + 1)),
          real_(detail::fftw_alloc<double>(static_cast<std::size_t>(n_) * n_)),
          spec_a_(detail::fftw_alloc<fftw_complex>(spectrum_len_)),
          spec_b_(detail::fftw_alloc<fftw_complex>(spectrum_len_))
    {
        if (window_size < 1)
            throw Error("window size must be positive");
        std::lock_guard lock(detail::fftw_planner_mutex());
        // FFTW_ESTIMATE keeps the chosen algorithm, and therefore the rounding, fixed between runs.
        forward_ = fftw_plan_dft_r2c_2d(n_, n_, real_.get(), spec_a_.get(), FFTW_ESTIMATE);
        inverse_ = fftw_plan_dft_c2r_2d(n_, n_, spec_a_.get(), real_.get(), FFTW_ESTIMATE);
        if (!forward_ || !inverse_)
            throw Error("FFTW planning failed for window size " + std::to_string(window_size));
    }

    Correlator(const Correlator&) = delete;
    Correlator& operator=(const Correlator&) = delete;

    ~Correlator()
    {
        std::lock_guard lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(inverse_);
    }

    int window_size() const { return w_; }

    CorrelationMap correlate(std::span<const double> a, std::span<const double> b, WindowOrigin origin = {})
    {
        const std::size_t wsq = static_cast<std::size_t>(w_) * w_;
        if (a.size() != wsq || b.size() != wsq)
            throw Error("correlate_window: windows must both be " + std::to_string(w_) + "x" + std::to_string(w_));

        CorrelationMap map;
        map.window_size = w_;
        map.window_origin = origin;
        const int m = map.extent();
        map.values.assign(static_cast<std::size_t>(m) * m, 0.0);

        const double energy_a = load_padded(a);
        fftw_execute_dft_r2c(forward_, real_.get(), spec_a_.get());
        const double energy_b = load_padded(b);
        fftw_execute_dft_r2c(forward_, real_.get(), spec_b_.get());

        // Zero-variance windows carry no pattern to match.
        const double floor = 1e-24 * static_cast<double>(wsq);
        if (!(energy_a > floor) || !(energy_b > floor))
            return map;

        // conj(A) * B -> sum_x a(x) b(x + s)
        fftw_complex* A = spec_a_.get();
        const fftw_complex* B = spec_b_.get();
        for (std::size_t k = 0; k < spectrum_len_; ++k) {
            const double re = A[k][0] * B[k][0] + A[k][1] * B[k][1];
            const double im = A[k][0] * B[k][1] - A[k][1] * B[k][0];
            A[k][0] = re;
            A[k][1] = im;
        }
        fftw_execute_dft_c2r(inverse_, spec_a_.get(), real_.get());

        const double scale = 1.0 / (static_cast<double>(n_) * n_ * std::sqrt(energy_a * energy_b));
        for (int sy = -(w_ - 1); sy <= w_ - 1; ++sy) {
            const std::size_t src_row = static_cast<std::size_t>((sy + n_) % n_) * n_;
            double* dst = &map.values[static_cast<std::size_t>(sy + w_ - 1) * m];
            for (int sx = -(w_ - 1); sx <= w_ - 1; ++sx)
                dst[sx + w_ - 1] = real_[src_row + static_cast<std::size_t>((sx + n_) % n_)] * scale;
        }
        map.valid = true;
        return map;
    }

private:
    // Copies the mean-subtracted window into the top-left of the zeroed
    // 2w x 2w buffer and returns its energy.
    double load_padded(std::span<const double> win)
    {
        double mean = 0.0;
        for (double v : win)
            mean += v;
        mean /= static_cast<double>(win.size());
        std::fill_n(real_.get(), static_cast<std::size_t>(n_) * n_, 0.0);
        double energy = 0.0;
        for (int y = 0; y < w_; ++y) {
            for (int x = 0; x < w_; ++x) {
                const double v = win[static_cast<std::size_t>(y) * w_ + x] - mean;
                real_[static_cast<std::size_t>(y) * n_ + x] = v;
                energy += v * v;
            }
        }
        return energy;
    }

    int w_;
    int n_;
    std::size_t spectrum_len_;
    detail::FftwBuffer<double> real_;
    detail::FftwBuffer<fftw_complex> spec_a_;
    detail::FftwBuffer<fftw_complex> spec_b_;
    fftw_plan forward_ = nullptr;
    fftw_plan inverse_ = nullptr;
};

inline std::size_t window_side(std::size_t pixels)
{
    const auto w = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(pixels))));
    if (w * w != pixels)
        throw Error("correlate_window: window is not square");
    return w;
}

// One-off correlation of two square windows (row-major w*w pixels).
inline CorrelationMap correlate_window(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw Error("correlate_window: windows differ in size");
    Correlator c(static_cast<int>(window_side(a.size())));
    return c.correlate(a, b);
}

// Offset of a peak from three equally spaced samples. Gaussian fit when all
// samples are positive, parabolic otherwise.
inline double gaussian_three_point(double c_minus, double c0, double c_plus)
{
    const double lm = std::log(c_minus), l0 = std::log(c0), lp = std::log(c_plus);
    const double denom = 2.0 * lm + 2.0 * lp - 4.0 * l0;
    return denom == 0.0 ? 0.0 : (lm - lp) / denom;
}

inline double parabolic_three_point(double c_minus, double c0, double c_plus)
{
    const double denom = 2.0 * c_minus + 2.0 * c_plus - 4.0 * c0;
    return denom == 0.0 ? 0.0 : (c_minus - c_plus) / denom;
}

inline double three_point_offset(double c_minus, double c0, double c_plus)
{
    if (c_minus > 0.0 && c0 > 0.0 && c_plus > 0.0)
        return gaussian_three_point(c_minus, c0, c_plus);
    return parabolic_three_point(c_minus, c0, c_plus);
}

inline DisplacementEstimate subpixel_peak(const CorrelationMap& map)
{
    DisplacementEstimate est;
    if (!map.valid || map.values.empty())
        return est;
    const int m = map.extent();
    const auto it = std::max_element(map.values.begin(), map.values.end());
    const auto idx = static_cast<int>(it - map.values.begin());
    const int px = idx % m, py = idx / m;
    est.peak_value = *it;
    if (px == 0 || py == 0 || px == m - 1 || py == m - 1)
        return est;

    auto value = [&](int x, int y) { return map.values[static_cast<std::size_t>(y) * m + x]; };
    const double c0 = value(px, py);
    const double ox = three_point_offset(value(px - 1, py), c0, value(px + 1, py));
    const double oy = three_point_offset(value(px, py - 1), c0, value(px, py + 1));
    est.dx = px - (map.window_size - 1) + ox;
    est.dy = py - (map.window_size - 1) + oy;

    // Secondary peak: highest value outside the 3x3 block around the primary.
    double second = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < m; ++y) {
        const bool near_row = std::abs(y - py) <= 1;
        const double* row = &map.values[static_cast<std::size_t>(y) * m];
        for (int x = 0; x < m; ++x) {
            if (near_row && std::abs(x - px) <= 1)
                continue;
            second = std::max(second, row[x]);
        }
    }
    if (second > 0.0)
        est.snr = c0 / second;
    est.valid = true;
    return est;
}

inline void copy_window(const Frame& frame, WindowOrigin o, int w, std::vector<double>& out)
{
    out.resize(static_cast<std::size_t>(w) * w);
    for (int y = 0; y < w; ++y) {
        const double* src = &frame.intensities[static_cast<std::size_t>(o.y + y) * frame.width + o.x];
        std::copy(src, src + w, out.begin() + static_cast<std::ptrdiff_t>(y) * w);
    }
}

// One estimate per grid window, in grid order. threads == 0 picks the
// hardware concurrency; the result does not depend on the thread count.
inline std::vector<DisplacementEstimate> process_pair(const FramePair& pair, const WindowGrid& grid, unsigned threads = 1)
{
    if (!pair.frame_a || !pair.frame_b)
        throw Error("process_pair: empty frame pair");
    const Frame& a = *pair.frame_a;
    const Frame& b = *pair.frame_b;
    if (a.width != grid.frame_width || a.height != grid.frame_height || b.width != grid.frame_width ||
        b.height != grid.frame_height)
        throw Error("process_pair: grid was built for " + std::to_string(grid.frame_width) + "x" +
                    std::to_string(grid.frame_height) + " but frames are " + std::to_string(a.width) + "x" +
                    std::to_string(a.height));

    std::vector<DisplacementEstimate> out(grid.size());
    if (threads == 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, grid.size())));

    std::vector<std::exception_ptr> failures(threads);
    auto worker = [&](unsigned tid) {
        try {
            Correlator corr(grid.window_size);
            std::vector<double> wa, wb;
            for (std::size_t i = tid; i < grid.size(); i += threads) {
                copy_window(a, grid.origins[i], grid.window_size, wa);
                copy_window(b, grid.origins[i], grid.window_size, wb);
                out[i] = subpixel_peak(corr.correlate(wa, wb, grid.origins[i]));
            }
        } catch (...) {
            failures[tid] = std::current_exception();
        }
    };

    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back(worker, t);
    }
    for (const auto& f : failures)
        if (f)
            std::rethrow_exception(f);
    return out;
}

// Number of valid estimates whose displacement magnitude exceeds a quarter of
// the window size.
inline std::size_t quarter_rule_violations(std::span<const DisplacementEstimate> estimates, int window_size)
{
    const double limit = window_size / 4.0;
    return static_cast<std::size_t>(std::count_if(estimates.begin(), estimates.end(), [&](const auto& e) {
        return e.valid && std::hypot(e.dx, e.dy) > limit;
    }));
}

} // namespace pivkit

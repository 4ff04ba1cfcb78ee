#pragma once

// Grayscale frame ingestion: PGM (P2/P5, 8 or 16 bit) and PNG (gray/RGB),
// natural-order directory loading, pairing and optional normalization.

#include <pivkit/error.hpp>

#include <png.h>

#include <fnmatch.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace pivkit {

namespace fs = std::filesystem;

struct Frame {
    int width = 0;
    int height = 0;
    std::vector<double> intensities; // row-major, [0,1] for loaded frames
    int source_index = 0;
    int max_value = 255;             // format max value the frame was quantized to

    double at(int x, int y) const { return intensities[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return intensities[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return intensities.size(); }
};

inline Frame make_frame(int width, int height, double fill = 0.0)
{
    if (width <= 0 || height <= 0)
        throw Error("frame dimensions must be positive");
    Frame f;
    f.width = width;
    f.height = height;
    f.intensities.assign(static_cast<std::size_t>(width) * height, fill);
    return f;
}

struct FramePair {
    std::shared_ptr<const Frame> frame_a;
    std::shared_ptr<const Frame> frame_b;
    double dt = 0.0; // seconds between exposures
};

inline FramePair make_pair(Frame a, Frame b, double dt)
{
    if (a.width != b.width || a.height != b.height)
        throw Error("frame pair has mismatched dimensions");
    if (!(dt > 0.0))
        throw Error("frame pair dt must be positive");
    return {std::make_shared<const Frame>(std::move(a)), std::make_shared<const Frame>(std::move(b)), dt};
}

// Rec. 601 luma.
constexpr double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

namespace detail {

inline std::string read_file_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Reads the next whitespace-delimited PGM header token, skipping comments.
inline std::string pgm_token(std::string_view data, std::size_t& pos)
{
    for (;;) {
        while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos])))
            ++pos;
        if (pos < data.size() && data[pos] == '#') {
            while (pos < data.size() && data[pos] != '\n')
                ++pos;
            continue;
        }
        break;
    }
    std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos])))
        ++pos;
    return std::string(data.substr(start, pos - start));
}

inline int pgm_int(std::string_view data, std::size_t& pos, const fs::path& path)
{
    std::string tok = pgm_token(data, pos);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        throw Error("malformed PGM header in '" + path.string() + "'");
    return std::stoi(tok);
}

} // namespace detail

inline Frame read_pgm(const fs::path& path)
{
    const std::string data = detail::read_file_bytes(path);
    std::size_t pos = 0;
    const std::string magic = detail::pgm_token(data, pos);
    if (magic != "P5" && magic != "P2")
        throw Error("'" + path.string() + "' is not a PGM file");
    const int width = detail::pgm_int(data, pos, path);
    const int height = detail::pgm_int(data, pos, path);
    const int maxval = detail::pgm_int(data, pos, path);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
        throw Error("invalid PGM geometry or maxval in '" + path.string() + "'");

    Frame f = make_frame(width, height);
    f.max_value = maxval;
    const std::size_t n = f.size();
    const double scale = 1.0 / maxval;

    if (magic == "P5") {
        ++pos; // single whitespace after maxval
        const std::size_t bpp = maxval > 255 ? 2 : 1;
        if (data.size() < pos + n * bpp)
            throw Error("truncated PGM raster in '" + path.string() + "'");
        const auto* raw = reinterpret_cast<const unsigned char*>(data.data() + pos);
        for (std::size_t i = 0; i < n; ++i) {
            unsigned v = bpp == 1 ? raw[i] : (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1];
            if (v > unsigned(maxval))
                throw Error("PGM sample exceeds maxval in '" + path.string() + "'");
            f.intensities[i] = v * scale;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            int v = detail::pgm_int(data, pos, path);
            if (v > maxval)
                throw Error("PGM sample exceeds maxval in '" + path.string() + "'");
            f.intensities[i] = v * scale;
        }
    }
    return f;
}

// Writes a binary PGM quantized to frame.max_value; values are clamped to [0,1].
inline void write_pgm(const Frame& frame, const fs::path& path)
{
    const int maxval = std::clamp(frame.max_value, 1, 65535);
    std::string out = "P5\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n" +
                      std::to_string(maxval) + "\n";
    const bool wide = maxval > 255;
    out.reserve(out.size() + frame.size() * (wide ? 2 : 1));
    for (double v : frame.intensities) {
        auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (wide)
            out.push_back(static_cast<char>(q >> 8));
        out.push_back(static_cast<char>(q & 0xff));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os || !os.write(out.data(), static_cast<std::streamsize>(out.size())))
        throw Error("cannot write '" + path.string() + "'");
}

inline Frame read_png(const fs::path& path)
{
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp)
        throw Error("cannot open '" + path.string() + "'");
    unsigned char sig[8] = {};
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        std::fclose(fp);
        throw Error("'" + path.string() + "' is not a PNG file");
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw Error("libpng initialisation failed for '" + path.string() + "'");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw Error("cannot decode PNG '" + path.string() + "'");
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_png(png, info, PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA | PNG_TRANSFORM_PACKING, nullptr);

    const auto width = static_cast<int>(png_get_image_width(png, info));
    const auto height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    png_bytepp rows = png_get_rows(png, info);

    Frame f;
    f.width = width;
    f.height = height;
    f.max_value = depth == 16 ? 65535 : 255;
    f.intensities.resize(static_cast<std::size_t>(width) * height);
    const double scale = 1.0 / f.max_value;
    const int bytes = depth == 16 ? 2 : 1;
    for (int y = 0; y < height; ++y) {
        const png_bytep row = rows[y];
        for (int x = 0; x < width; ++x) {
            auto sample = [&](int c) {
                const png_bytep p = row + (static_cast<std::size_t>(x) * channels + c) * bytes;
                return (bytes == 2 ? (unsigned(p[0]) << 8) | p[1] : unsigned(p[0])) * scale;
            };
            f.at(x, y) = channels >= 3 ? luminance(sample(0), sample(1), sample(2)) : sample(0);
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return f;
}

// Dispatches on file magic, not extension.
inline Frame read_frame(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + path.string() + "'");
    char magic[2] = {};
    in.read(magic, 2);
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '2'))
        return read_pgm(path);
    if (static_cast<unsigned char>(magic[0]) == 0x89 && magic[1] == 'P')
        return read_png(path);
    throw Error("unsupported image format in '" + path.string() + "'");
}

// Compares digit runs by numeric value so that "frame_10" sorts after "frame_9".
inline bool natural_less(std::string_view a, std::string_view b)
{
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const bool da = std::isdigit(static_cast<unsigned char>(a[i]));
        const bool db = std::isdigit(static_cast<unsigned char>(b[j]));
        if (da && db) {
            std::size_t ie = i, je = j;
            while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie])))
                ++ie;
            while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je])))
                ++je;
            std::string_view na = a.substr(i, ie - i), nb = b.substr(j, je - j);
            while (na.size() > 1 && na.front() == '0')
                na.remove_prefix(1);
            while (nb.size() > 1 && nb.front() == '0')
                nb.remove_prefix(1);
            if (na.size() != nb.size())
                return na.size() < nb.size();
            if (na != nb)
                return na < nb;
            // equal value: shorter run (fewer leading zeros) first
            if (ie - i != je - j)
                return ie - i < je - j;
            i = ie;
            j = je;
        } else {
            if (a[i] != b[j])
                return a[i] < b[j];
            ++i;
            ++j;
        }
    }
    return a.size() - i < b.size() - j;
}

inline std::vector<fs::path> list_frames(const fs::path& directory, const std::string& pattern)
{
    if (!fs::is_directory(directory))
        throw Error("frame directory '" + directory.string() + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (!entry.is_regular_file())
            continue;
        const std::string name = entry.path().filename().string();
        if (::fnmatch(pattern.c_str(), name.c_str(), 0) == 0)
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
        return natural_less(a.filename().string(), b.filename().string());
    });
    return files;
}

inline std::vector<Frame> load_sequence(const fs::path& directory, const std::string& pattern = "*.pgm")
{
    const auto files = list_frames(directory, pattern);
    if (files.empty())
        throw Error("no frames found in '" + directory.string() + "' matching '" + pattern + "'");
    std::vector<Frame> frames;
    frames.reserve(files.size());
    for (const auto& file : files) {
        Frame f = read_frame(file);
        if (!frames.empty() && (f.width != frames.front().width || f.height != frames.front().height))
            throw Error("inconsistent frame geometry: '" + file.string() + "' is " + std::to_string(f.width) + "x" +
                        std::to_string(f.height) + ", expected " + std::to_string(frames.front().width) + "x" +
                        std::to_string(frames.front().height));
        f.source_index = static_cast<int>(frames.size());
        frames.push_back(std::move(f));
    }
    return frames;
}

inline std::vector<FramePair> make_pairs(const std::vector<Frame>& frames, double fps, int stride = 1)
{
    if (!(fps > 0.0))
        throw Error("fps must be positive");
    if (stride < 1)
        throw Error("stride must be at least 1");
    if (frames.size() < static_cast<std::size_t>(stride) + 1)
        throw Error("need at least stride+1 frames (stride " + std::to_string(stride) + ", got " +
                    std::to_string(frames.size()) + ")");
    std::vector<std::shared_ptr<const Frame>> shared;
    shared.reserve(frames.size());
    for (const auto& f : frames)
        shared.push_back(std::make_shared<const Frame>(f));

    const double dt = stride / fps;
    std::vector<FramePair> pairs;
    for (std::size_t i = 0; i + stride < shared.size(); ++i)
        pairs.push_back({shared[i], shared[i + stride], dt});
    return pairs;
}

// (I - mean) / (max - min). Output is zero-mean with unit range, so the
// operation is idempotent and invariant under positive affine rescaling.
// Constant frames map to all zeros.
inline Frame normalize_frame(const Frame& frame)
{
    Frame out = frame;
    if (frame.intensities.empty())
        return out;
    const auto [lo, hi] = std::minmax_element(frame.intensities.begin(), frame.intensities.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) {
        std::fill(out.intensities.begin(), out.intensities.end(), 0.0);
        return out;
    }
    const double mean =
        std::accumulate(frame.intensities.begin(), frame.intensities.end(), 0.0) / static_cast<double>(frame.size());
    for (double& v : out.intensities)
        v = (v - mean) / range;
    return out;
}

} // namespace pivkit

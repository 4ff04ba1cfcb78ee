#pragma once

// End-to-end workflows behind the command-line subcommands. Each returns its
// results and writes files; console output goes to the supplied streams.

#include <pivkit/config.hpp>
#include <pivkit/correlation.hpp>
#include <pivkit/error.hpp>
#include <pivkit/field.hpp>
#include <pivkit/frame_io.hpp>
#include <pivkit/hydraulics.hpp>
#include <pivkit/metrics.hpp>
#include <pivkit/synth.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace pivkit::commands {

namespace fs = std::filesystem;

// Runs fn, re-raising any failure tagged with the stage name.
template <class Fn>
auto staged(const std::string& stage, Fn&& fn) -> decltype(fn())
{
    try {
        return fn();
    } catch (const Error& e) {
        throw with_stage(stage, e);
    } catch (const std::domain_error& e) {
        throw with_stage(stage, e);
    } catch (const std::filesystem::filesystem_error& e) {
        throw with_stage(stage, e);
    }
}

inline std::string pair_file_name(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "pair_%04zu.csv", i);
    return buf;
}

inline std::string frame_file_name(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.pgm", i);
    return buf;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeOptions {
    fs::path frames_dir;
    std::string pattern = "*.pgm";
    double fps = 0.0;
    int stride = 1;
    int window = 128;
    double overlap = 0.5;
    double mpp = kDefaultMetersPerPixel;
    double threshold = 2.0;
    double epsilon = 0.1;
    bool normalize = false;
    unsigned threads = 1;
    std::optional<fs::path> per_pair_dir;
};

struct AnalyzeResult {
    VectorField field;
    std::vector<VectorField> pair_fields;
    std::vector<std::string> diagnostics;
};

inline double mean_speed(const VectorField& f)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& node : f.nodes)
        if (node.valid) {
            sum += std::hypot(node.u, node.v);
            ++n;
        }
    return n ? sum / n : 0.0;
}

// Per pair: correlation -> median test -> gap fill; the pair fields are then
// averaged node-wise over their valid nodes.
inline AnalyzeResult analyze_frames(std::vector<Frame> frames, const AnalyzeOptions& opt)
{
    if (opt.normalize)
        for (auto& f : frames)
            f = normalize_frame(f);
    const auto pairs = staged("frame_io", [&] { return make_pairs(frames, opt.fps, opt.stride); });
    frames.clear();
    const WindowGrid grid = staged("correlation", [&] {
        return build_grid(pairs.front().frame_a->width, pairs.front().frame_a->height, opt.window, opt.overlap);
    });

    AnalyzeResult res;
    std::size_t violations = 0;
    for (const auto& pair : pairs) {
        const Calibration cal{opt.mpp, pair.dt};
        const auto estimates = staged("correlation", [&] { return process_pair(pair, grid, opt.threads); });
        violations += quarter_rule_violations(estimates, grid.window_size);
        res.pair_fields.push_back(staged("field", [&] {
            return fill_invalid(validate_median(assemble_field(grid, estimates, cal), opt.threshold, opt.epsilon));
        }));
    }
    res.field = staged("field", [&] { return average_fields(res.pair_fields); });
    if (violations > 0)
        res.diagnostics.push_back("warning: " + std::to_string(violations) +
                                  " vectors moved more than a quarter of the " + std::to_string(grid.window_size) +
                                  " px window; consider a larger window or shorter dt");
    return res;
}

inline AnalyzeResult analyze(const AnalyzeOptions& opt)
{
    auto frames = staged("frame_io", [&] { return load_sequence(opt.frames_dir, opt.pattern); });
    return analyze_frames(std::move(frames), opt);
}

inline AnalyzeResult cmd_analyze(const AnalyzeOptions& opt, const fs::path& out, std::ostream& log = std::cout,
                                 std::ostream& diag = std::cerr)
{
    AnalyzeResult res = analyze(opt);
    staged("field", [&] {
        write_field(res.field, out);
        if (opt.per_pair_dir) {
            fs::create_directories(*opt.per_pair_dir);
            for (std::size_t i = 0; i < res.pair_fields.size(); ++i)
                write_field(res.pair_fields[i], *opt.per_pair_dir / pair_file_name(i));
        }
    });
    for (const auto& d : res.diagnostics)
        diag << d << '\n';
    log << "pairs: " << res.pair_fields.size() << "\n"
        << "vectors: " << res.field.size() << "\n"
        << "valid fraction: " << csv::number(res.field.valid_fraction()) << "\n"
        << "mean speed (m/s): " << csv::number(mean_speed(res.field)) << "\n";
    return res;
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
    FlowSpec flow = UniformFlow{0.15, 0.0};
    SynthConfig config;
    int frames = 2;
    int window = 128;
    double overlap = 0.5;
};

struct SynthResult {
    std::vector<fs::path> frame_files;
    fs::path truth_file;
    std::vector<std::string> warnings;
};

// Writes frame_0000.pgm ... and truth.csv (exact flow at the window centers).
inline SynthResult cmd_synth(const SynthOptions& opt, const fs::path& out_dir, std::ostream& log = std::cout,
                             std::ostream& diag = std::cerr)
{
    const WindowGrid grid = staged("synth", [&] {
        opt.config.validate();
        return build_grid(opt.config.width, opt.config.height, opt.window, opt.overlap);
    });
    if (opt.frames < 2)
        throw Error("[synth] need at least 2 frames");
    SynthResult res;
    staged("synth", [&] {
        auto seq = render_sequence(opt.flow, opt.config, opt.frames);
        fs::create_directories(out_dir);
        for (std::size_t i = 0; i < seq.frames.size(); ++i) {
            res.frame_files.push_back(out_dir / frame_file_name(i));
            write_pgm(seq.frames[i], res.frame_files.back());
        }
        res.truth_file = out_dir / "truth.csv";
        write_field(ground_truth(opt.flow, grid, opt.config.calibration), res.truth_file);
    });
    res.warnings = seeding_warnings(opt.config, opt.window);
    for (const auto& w : res.warnings)
        diag << "warning: " << w << '\n';
    log << "frames: " << res.frame_files.size() << " in " << out_dir.string() << "\n"
        << "truth: " << res.truth_file.string() << "\n";
    return res;
}

// ---------------------------------------------------------------- design

struct DesignOptions {
    std::vector<double> velocities_mmps;
    double depth_min_mm = 10.0;
    double depth_max_mm = 100.0;
    double step_mm = 1.0;
    double viscosity = hydraulics::kWaterViscosity20C;
};

inline std::vector<hydraulics::DesignRow> cmd_design(const DesignOptions& opt, const fs::path& out,
                                                     std::ostream& log = std::cout)
{
    return staged("design", [&] {
        auto rows = hydraulics::design_sweep(opt.velocities_mmps, opt.depth_min_mm, opt.depth_max_mm, opt.viscosity,
                                             opt.step_mm);
        csv::write_text(out, hydraulics::format_design(rows));
        log << "rows: " << rows.size() << " -> " << out.string() << "\n";
        return rows;
    });
}

// ---------------------------------------------------------------- compare

struct LineComparison {
    Profile measured;
    Profile reference;
    DeviationReport report;
};

struct Comparison {
    std::vector<LineComparison> lines;
    DeviationReport pooled;

    std::vector<DeviationReport> reports() const
    {
        std::vector<DeviationReport> out;
        for (const auto& l : lines)
            out.push_back(l.report);
        out.push_back(pooled);
        return out;
    }
};

inline std::vector<Profile> sample_lines(const VectorField& field, const std::vector<LineSegment>& lines)
{
    std::vector<Profile> out;
    for (const auto& l : lines)
        out.push_back(sample_line(field, l));
    return out;
}

inline Comparison compare_field(const VectorField& field, const std::vector<LineSegment>& lines,
                                const std::vector<Profile>& references)
{
    Comparison cmp;
    std::vector<std::pair<Profile, Profile>> pairs;
    for (const auto& line : lines) {
        const auto ref = std::find_if(references.begin(), references.end(),
                                      [&](const Profile& p) { return p.line_id == line.id; });
        if (ref == references.end())
            throw Error("reference has no profile for line '" + line.id + "'");
        Profile measured = sample_line(field, line);
        DeviationReport rep = compare(measured, *ref);
        pairs.emplace_back(measured, *ref);
        cmp.lines.push_back({std::move(measured), *ref, std::move(rep)});
    }
    cmp.pooled = compare_pooled(pairs);
    return cmp;
}

struct CompareOptions {
    fs::path field;
    std::optional<fs::path> reference;
    fs::path lines;
    std::optional<fs::path> out;          // report CSV
    std::optional<fs::path> profiles_out; // sampled profiles in reference format
};

// With no reference, only samples the lines (and writes them with
// profiles_out); this is how a reference is derived from a truth field.
inline std::optional<Comparison> cmd_compare(const CompareOptions& opt, std::ostream& log = std::cout)
{
    const VectorField field = staged("compare/field", [&] { return read_field(opt.field); });
    const auto lines = staged("compare/lines", [&] { return config::load_lines(opt.lines); });
    const auto profiles = staged("compare/metrics", [&] { return sample_lines(field, lines); });
    if (opt.profiles_out)
        staged("compare/metrics", [&] { csv::write_text(*opt.profiles_out, format_profiles(profiles)); });
    if (!opt.reference) {
        if (!opt.profiles_out)
            throw Error("[compare] nothing to do: give --reference and/or --profiles-out");
        log << "profiles: " << profiles.size() << " -> " << opt.profiles_out->string() << "\n";
        return std::nullopt;
    }
    const auto refs = staged("compare/reference", [&] { return load_reference(*opt.reference); });
    Comparison cmp = staged("compare/metrics", [&] { return compare_field(field, lines, refs); });
    if (opt.out)
        staged("compare/metrics", [&] { csv::write_text(*opt.out, format_reports(cmp.reports())); });
    log << format_report_table(cmp.reports());
    return cmp;
}

// ---------------------------------------------------------------- sweep

struct VariantOutcome {
    config::Variant variant;
    Comparison comparison;
    double valid_fraction = 0.0;
};

struct SweepResult {
    std::vector<VariantOutcome> variants;
    std::vector<std::size_t> ranking; // indices into variants, best first
};

inline bool mape_less(const std::optional<double>& a, const std::optional<double>& b)
{
    if (a && b)
        return *a < *b;
    return a.has_value() && !b.has_value();
}

inline std::string format_ranking(const SweepResult& res, const std::string& parameter)
{
    std::string out = "rank,label," + parameter;
    if (!res.variants.empty())
        for (const auto& l : res.variants.front().comparison.lines)
            out += ",mape_pct_" + l.report.line_id;
    out += ",pooled_mape_pct\n";
    for (std::size_t k = 0; k < res.ranking.size(); ++k) {
        const VariantOutcome& v = res.variants[res.ranking[k]];
        out += std::to_string(k + 1) + ',' + v.variant.label + ',' +
               (parameter == "fps" ? csv::number(v.variant.fps) : v.variant.label);
        for (const auto& l : v.comparison.lines)
            out += ',' + format_mape(l.report.mape);
        out += ',' + format_mape(v.comparison.pooled.mape) + '\n';
    }
    return out;
}

inline std::string format_sweep_report(const SweepResult& res)
{
    std::string out = "label,line_id,mad_mps,std_mps,mape_pct,valid_fraction\n";
    for (const auto& v : res.variants)
        for (const auto& r : v.comparison.reports())
            out += v.variant.label + ',' + r.line_id + ',' + csv::number(r.mad) + ',' + csv::number(r.std_dev) + ',' +
                   format_mape(r.mape) + ',' + csv::number(v.valid_fraction) + '\n';
    return out;
}

// Analyze + compare per variant, in config order. Writes <label>_field.csv,
// sweep_report.csv and sweep_ranking.csv (ranked by pooled MAPE, ties keep
// config order, undefined MAPE last).
inline SweepResult cmd_sweep(const fs::path& config_path, const fs::path& out_dir, std::ostream& log = std::cout,
                             std::ostream& diag = std::cerr)
{
    const auto cfg = staged("sweep/config", [&] { return config::load_sweep(config_path); });
    if (cfg.variants.size() < 2)
        diag << "warning: sweep has a single variant; ranking is trivial\n";
    const auto refs = staged("sweep/reference", [&] { return load_reference(cfg.reference); });
    staged("sweep", [&] { fs::create_directories(out_dir); });

    SweepResult res;
    for (const auto& variant : cfg.variants) {
        const std::string stage = "sweep/" + variant.label;
        AnalyzeOptions opt;
        opt.frames_dir = variant.frames_directory;
        opt.pattern = cfg.pattern;
        opt.fps = variant.fps;
        opt.stride = cfg.stride;
        opt.window = cfg.window_size;
        opt.overlap = cfg.overlap;
        opt.mpp = cfg.meters_per_pixel;
        AnalyzeResult ar = [&] {
            try {
                return analyze(opt);
            } catch (const Error& e) {
                throw with_stage(stage, e);
            }
        }();
        for (const auto& d : ar.diagnostics)
            diag << variant.label << ": " << d << '\n';
        staged(stage, [&] { write_field(ar.field, out_dir / (variant.label + "_field.csv")); });
        Comparison cmp = staged(stage, [&] { return compare_field(ar.field, cfg.lines, refs); });
        res.variants.push_back({variant, std::move(cmp), ar.field.valid_fraction()});
    }

    res.ranking.resize(res.variants.size());
    for (std::size_t i = 0; i < res.ranking.size(); ++i)
        res.ranking[i] = i;
    std::stable_sort(res.ranking.begin(), res.ranking.end(), [&](std::size_t a, std::size_t b) {
        return mape_less(res.variants[a].comparison.pooled.mape, res.variants[b].comparison.pooled.mape);
    });

    staged("sweep", [&] {
        csv::write_text(out_dir / "sweep_report.csv", format_sweep_report(res));
        csv::write_text(out_dir / "sweep_ranking.csv", format_ranking(res, cfg.parameter));
    });

    for (std::size_t k = 0; k < res.ranking.size(); ++k) {
        const VariantOutcome& v = res.variants[res.ranking[k]];
        log << "#" << (k + 1) << " " << v.variant.label << " (pooled MAPE " << format_mape(v.comparison.pooled.mape)
            << " %)\n"
            << format_report_table(v.comparison.reports());
    }
    return res;
}

} // namespace pivkit::commands

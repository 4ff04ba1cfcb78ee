// pivkit command-line front end.

#include <pivkit/commands.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace pivkit;

void add_analyze(CLI::App& app, commands::AnalyzeOptions& opt, std::string& out, std::string& per_pair)
{
    auto* cmd = app.add_subcommand("analyze", "Compute an averaged velocity field from a frame sequence");
    cmd->add_option("--frames", opt.frames_dir, "Directory of numbered frames")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--pattern", opt.pattern, "Filename glob")->capture_default_str();
    cmd->add_option("--fps", opt.fps, "Frame rate (frames/s)")->required()->check(CLI::PositiveNumber);
    cmd->add_option("--stride", opt.stride, "Pair frame i with frame i+stride")->capture_default_str();
    cmd->add_option("--window", opt.window, "Interrogation window size (px, power of two)")->capture_default_str();
    cmd->add_option("--overlap", opt.overlap, "Window overlap fraction [0,1)")->capture_default_str();
    cmd->add_option("--mpp", opt.mpp, "Calibration (m/px)")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--threshold", opt.threshold, "Median test threshold")->capture_default_str();
    cmd->add_option("--epsilon", opt.epsilon, "Median test epsilon (px)")->capture_default_str();
    cmd->add_flag("--normalize", opt.normalize, "Normalize frames before correlation");
    cmd->add_option("--threads", opt.threads, "Worker threads (0 = all cores)")->capture_default_str();
    cmd->add_option("--per-pair", per_pair, "Also write each pair's field into this directory");
    cmd->add_option("--out", out, "Output field CSV")->required();
}

struct SynthArgs {
    std::string flow = "uniform";
    double u = 0.15, v = 0.0;
    std::optional<double> cx, cy;
    double omega = 1.0, radius = 0.02, u_inf = 0.15;
    double fps = 240.0;
    std::string out;
};

void add_synth(CLI::App& app, commands::SynthOptions& opt, SynthArgs& a)
{
    auto* cmd = app.add_subcommand("synth", "Render synthetic particle frames and the exact field");
    cmd->add_option("--flow", a.flow, "uniform | rotation | cylinder")
        ->check(CLI::IsMember({"uniform", "rotation", "cylinder"}))
        ->capture_default_str();
    cmd->add_option("--u", a.u, "Uniform flow u (m/s)")->capture_default_str();
    cmd->add_option("--v", a.v, "Uniform flow v (m/s, upward)")->capture_default_str();
    cmd->add_option("--center-x", a.cx, "Rotation/cylinder center x (m); default frame center");
    cmd->add_option("--center-y", a.cy, "Rotation/cylinder center y (m); default frame center");
    cmd->add_option("--omega", a.omega, "Rotation rate (rad/s)")->capture_default_str();
    cmd->add_option("--radius", a.radius, "Cylinder radius (m)")->capture_default_str();
    cmd->add_option("--u-inf", a.u_inf, "Cylinder free-stream speed (m/s)")->capture_default_str();
    cmd->add_option("--width", opt.config.width, "Frame width (px)")->capture_default_str();
    cmd->add_option("--height", opt.config.height, "Frame height (px)")->capture_default_str();
    cmd->add_option("--density", opt.config.particle_density, "Particles per px^2")->capture_default_str();
    cmd->add_option("--diameter", opt.config.particle_diameter, "Particle e^-2 diameter (px)")->capture_default_str();
    cmd->add_option("--noise", opt.config.noise_sigma, "Additive noise sigma")->capture_default_str();
    cmd->add_option("--seed", opt.config.seed, "Random seed")->capture_default_str();
    cmd->add_option("--mpp", opt.config.calibration.meters_per_pixel, "Calibration (m/px)")->capture_default_str();
    cmd->add_option("--fps", a.fps, "Frame rate; dt = 1/fps")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--frames", opt.frames, "Number of frames")->capture_default_str();
    cmd->add_option("--window", opt.window, "Window size for the truth grid")->capture_default_str();
    cmd->add_option("--overlap", opt.overlap, "Overlap for the truth grid")->capture_default_str();
    cmd->add_option("--out", a.out, "Output directory")->required();
}

void finish_synth(commands::SynthOptions& opt, const SynthArgs& a)
{
    opt.config.calibration.dt = 1.0 / a.fps;
    const PixelFrame pf{opt.config.calibration.meters_per_pixel, opt.config.height};
    const double cx = a.cx.value_or(pf.x_m((opt.config.width - 1) / 2.0));
    const double cy = a.cy.value_or(pf.y_m((opt.config.height - 1) / 2.0));
    if (a.flow == "uniform")
        opt.flow = UniformFlow{a.u, a.v};
    else if (a.flow == "rotation")
        opt.flow = SolidRotation{cx, cy, a.omega};
    else
        opt.flow = CylinderPotential{cx, cy, a.radius, a.u_inf};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"pivkit: particle image velocimetry toolkit"};
    app.require_subcommand(1);

    commands::AnalyzeOptions analyze;
    std::string analyze_out, per_pair;
    add_analyze(app, analyze, analyze_out, per_pair);

    commands::SynthOptions synth;
    SynthArgs synth_args;
    add_synth(app, synth, synth_args);

    commands::DesignOptions design;
    std::string design_out;
    auto* design_cmd = app.add_subcommand("design", "Flume development-length sweep");
    design_cmd->add_option("--velocities", design.velocities_mmps, "Velocities (mm/s), comma separated")
        ->required()
        ->delimiter(',');
    design_cmd->add_option("--depth-min", design.depth_min_mm, "Minimum free-surface level D (mm)")->capture_default_str();
    design_cmd->add_option("--depth-max", design.depth_max_mm, "Maximum free-surface level D (mm)")->capture_default_str();
    design_cmd->add_option("--step", design.step_mm, "Depth step (mm)")->capture_default_str();
    design_cmd->add_option("--viscosity", design.viscosity, "Kinematic viscosity (m^2/s)")->capture_default_str();
    design_cmd->add_option("--out", design_out, "Output CSV")->required();

    commands::CompareOptions compare;
    std::string cmp_field, cmp_ref, cmp_lines, cmp_out, cmp_profiles;
    auto* compare_cmd = app.add_subcommand("compare", "Deviation of line profiles against a reference");
    compare_cmd->add_option("--field", cmp_field, "Field CSV")->required();
    compare_cmd->add_option("--reference", cmp_ref, "Reference profile CSV (line_id,ystar,speed_mps)");
    compare_cmd->add_option("--lines", cmp_lines, "Line definitions (INI)")->required();
    compare_cmd->add_option("--out", cmp_out, "Report CSV");
    compare_cmd->add_option("--profiles-out", cmp_profiles, "Write sampled profiles in reference format");

    std::string sweep_config, sweep_out;
    auto* sweep_cmd = app.add_subcommand("sweep", "Analyze and rank a set of recording variants");
    sweep_cmd->add_option("--config", sweep_config, "Sweep configuration (INI)")->required();
    sweep_cmd->add_option("--out", sweep_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("analyze")) {
            if (!per_pair.empty())
                analyze.per_pair_dir = per_pair;
            commands::cmd_analyze(analyze, analyze_out);
        } else if (app.got_subcommand("synth")) {
            finish_synth(synth, synth_args);
            commands::cmd_synth(synth, synth_args.out);
        } else if (app.got_subcommand("design")) {
            commands::cmd_design(design, design_out);
        } else if (app.got_subcommand("compare")) {
            compare.field = cmp_field;
            compare.lines = cmp_lines;
            if (!cmp_ref.empty())
                compare.reference = cmp_ref;
            if (!cmp_out.empty())
                compare.out = cmp_out;
            if (!cmp_profiles.empty())
                compare.profiles_out = cmp_profiles;
            commands::cmd_compare(compare);
        } else if (app.got_subcommand("sweep")) {
            commands::cmd_sweep(sweep_config, sweep_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

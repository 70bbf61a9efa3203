#include "reproduce.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gratmag/bloch.hpp"
#include "gratmag/fieldmodel.hpp"
#include "gratmag/grape.hpp"
#include "gratmag/imaging.hpp"
#include "gratmag/io.hpp"
#include "gratmag/sensitivity.hpp"

namespace fs = std::filesystem;
using namespace gratmag;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kGammaHzPerT = 2.8e10;

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::string cache_dir(const ReproduceArgs& a) {
    return a.cache_dir.empty() ? a.out_dir : a.cache_dir;
}

std::string manifest_path(const ReproduceArgs& a) {
    return a.manifest.empty() ? join(a.out_dir, a.figure + ".manifest.json")
                              : a.manifest;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << header << "\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) out << ",";
            out << io::format_double(r[i]);
        }
        out << "\n";
    }
}

grape::GratingSpec seven_dip_grating() {
    grape::GratingSpec g;
    g.n_dips = 7;
    g.spacing_hz = 0.7e6;
    g.dip_width_hz = 0.105e6;
    g.dip_depth = 1.0;
    return g;
}

struct PulseBundle {
    bloch::ControlPulse pulse;
    grape::TargetProfile target;
    grape::OptimizationTrace trace;  // empty when loaded from cache
    bool from_cache = false;
    std::string cache_path;
};

// 7-dip comb pulse shared by the synthesis and imaging recipes. tau = 4 us
// sits a factor ~2.5 above the Fourier limit for the 105 kHz dip width, so
// the optimizer has spectral resolution to spend on the dip shapes.
PulseBundle grating_pulse(const std::string& cache, int threads) {
    PulseBundle b;
    b.cache_path = join(cache, "grating_pulse.json");
    b.target = grape::make_grating_target(
        seven_dip_grating(),
        bloch::linspace_grid(-kTwoPi * 3.0e6, kTwoPi * 3.0e6, 241));
    if (fs::exists(b.cache_path)) {
        b.pulse = io::read_pulse(b.cache_path);
        b.from_cache = true;
        return b;
    }
    const double omega_max = kTwoPi * 1.0e6;
    const auto guess = grape::initial_guess(b.target, omega_max, 4.0e-6, 256);
    grape::GrapeConfig cfg;
    cfg.max_iterations = 4000;
    cfg.convergence_tol = 1e-12;
    cfg.threads = threads;
    auto res = grape::optimize(guess, b.target, cfg);
    b.pulse = std::move(res.pulse);
    b.trace = std::move(res.trace);
    io::write_pulse(b.cache_path, b.pulse);
    return b;
}

double worst_dip_depth(const bloch::ExcitationProfile& prof,
                       const std::vector<double>& centers_hz) {
    double worst = 2.0;
    for (double c_hz : centers_hz) {
        const double c = kTwoPi * c_hz;
        std::size_t best = 0;
        for (std::size_t i = 1; i < prof.grid.size(); ++i) {
            if (std::abs(prof.grid.values[i] - c) <
                std::abs(prof.grid.values[best] - c)) {
                best = i;
            }
        }
        worst = std::min(worst, (1.0 - prof.mz[best]) / 2.0);
    }
    return worst;
}

int run_fig2(const ReproduceArgs& a) {
    auto b = grating_pulse(cache_dir(a), a.threads);

    const auto fine =
        bloch::linspace_grid(-kTwoPi * 3.0e6, kTwoPi * 3.0e6, 1201);
    const auto prof = bloch::excitation_profile(b.pulse, fine, a.threads);

    std::vector<std::vector<double>> target_rows;
    for (std::size_t i = 0; i < b.target.grid.size(); ++i) {
        target_rows.push_back(
            {b.target.grid.values[i] / kTwoPi, b.target.target_mz[i]});
    }
    const std::string f_target = join(a.out_dir, "fig2_target.csv");
    write_csv(f_target, "detuning_hz,target_mz", target_rows);

    const std::string f_profile = join(a.out_dir, "fig2_profile.csv");
    io::write_profile_csv(f_profile, prof);

    std::vector<std::vector<double>> pulse_rows;
    for (std::size_t k = 0; k < b.pulse.steps.size(); ++k) {
        const auto& s = b.pulse.steps[k];
        pulse_rows.push_back({static_cast<double>(k) * b.pulse.dt, s.omega_x,
                              s.omega_y, std::hypot(s.omega_x, s.omega_y)});
    }
    const std::string f_pulse = join(a.out_dir, "fig2_pulse.csv");
    write_csv(f_pulse, "t_s,omega_x_rad_s,omega_y_rad_s,amplitude_rad_s",
              pulse_rows);

    std::vector<std::string> outputs = {f_target, f_profile, f_pulse};
    std::vector<std::string> inputs;
    if (b.from_cache) {
        inputs.push_back(b.cache_path);
    } else {
        const std::string f_trace = join(a.out_dir, "fig2_trace.csv");
        io::write_trace_csv(f_trace, b.trace);
        outputs.push_back(f_trace);
        outputs.push_back(b.cache_path);
    }

    grape::GrapeConfig nominal;
    const double infid = grape::infidelity(b.pulse, b.target, nominal);
    const double depth =
        worst_dip_depth(prof, seven_dip_grating().active_dip_centers_hz());
    std::printf("fig2 infidelity=%.6g worst_dip_depth=%.6g cached_pulse=%d\n",
                infid, depth, b.from_cache ? 1 : 0);

    io::write_manifest(manifest_path(a), "reproduce fig2", a.seed, a.threads,
                       inputs, outputs);
    return 0;
}

double max_abs_gradient(const field::FieldMap& m) {
    const auto& g = m.grid;
    const double px = g.nx > 1 ? g.x_range / (g.nx - 1) : 1.0;
    const double py = g.ny > 1 ? g.y_range / (g.ny - 1) : 1.0;
    double worst = 0.0;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = m.index(ix, iy);
            if (!m.mask[i]) continue;
            if (ix + 1 < g.nx && m.mask[m.index(ix + 1, iy)]) {
                worst = std::max(worst,
                                 std::abs(m.b[m.index(ix + 1, iy)] - m.b[i]) / px);
            }
            if (iy + 1 < g.ny && m.mask[m.index(ix, iy + 1)]) {
                worst = std::max(worst,
                                 std::abs(m.b[m.index(ix, iy + 1)] - m.b[i]) / py);
            }
        }
    }
    return worst;
}

double rms_error(const field::FieldMap& got, const field::FieldMap& truth,
                 const std::vector<std::uint8_t>& exclude) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < got.b.size(); ++i) {
        if (!got.mask[i] || !truth.mask[i]) continue;
        if (!exclude.empty() && exclude[i]) continue;
        const double d = got.b[i] - truth.b[i];
        acc += d * d;
        ++n;
    }
    return n ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
}

int run_fig3(const ReproduceArgs& a) {
    auto b = grating_pulse(cache_dir(a), a.threads);

    const double t2_star = 5.0e-6;
    const double c0 = 0.3;
    const auto rgrid =
        bloch::linspace_grid(-kTwoPi * 3.0e6, kTwoPi * 3.0e6, 1201);
    const auto response = img::build_response(
        bloch::excitation_profile(b.pulse, rgrid, a.threads), t2_star, c0);

    field::TipFieldModel tip;
    tip.variant = field::TipVariant::pseudopole;
    // polarity picked so the tip field adds to the bias and walks the sensor
    // deeper into the comb toward the tip; the pole height keeps the field
    // step per scan pixel well under half a grating spacing, where fringe
    // assignment is unambiguous
    tip.strength = -1.2e-11;
    tip.tip_offset = Eigen::Vector3d(0.0, 0.0, 180.0e-9);

    field::SensorGeometry geom;
    geom.bias_field = 7.8e-3;

    img::ReconstructionConfig cfg;
    cfg.gamma = kGammaHzPerT;
    // far-from-tip pixels sit midway between the 0 and 0.7 MHz rungs
    cfg.carrier_offset_hz = kGammaHzPerT * geom.bias_field - 0.35e6;
    cfg.max_iterations = 80;
    cfg.convergence_tol = 1e-14;
    cfg.seed = a.seed;
    cfg.threads = a.threads;

    struct Case {
        const char* tag;
        double lift;
    };
    const Case cases[] = {{"contact", 50.0e-9}, {"lift600nm", 600.0e-9}};

    std::vector<std::string> outputs;
    double max_grad[2] = {0.0, 0.0};
    double rms[2] = {0.0, 0.0};
    for (int ci = 0; ci < 2; ++ci) {
        field::ScanGrid grid;
        grid.x_range = 2.0e-6;
        grid.y_range = 2.0e-6;
        grid.nx = 64;
        grid.ny = 64;
        grid.lift_height = cases[ci].lift;

        const auto truth = field::field_map(tip, geom, grid, a.threads);
        const auto image = img::simulate_scan(truth, response, cfg);

        auto anchored = cfg;
        anchored.seed_anchors = {{0, 0, truth.b[truth.index(0, 0)]}};
        const auto assigned = img::assign_fringes(image, response, anchored);
        const auto recon = img::reconstruct(image, response, assigned.map, anchored);

        const std::string f_img =
            join(a.out_dir, std::string("fringes_") + cases[ci].tag + ".csv");
        const std::string f_map =
            join(a.out_dir, std::string("field_") + cases[ci].tag + ".csv");
        io::write_image_csv(f_img, image);
        io::write_map_csv(f_map, recon.map);
        outputs.insert(outputs.end(),
                       {f_img, f_img + ".json", f_map, f_map + ".json"});

        max_grad[ci] = max_abs_gradient(recon.map);
        rms[ci] = rms_error(recon.map, truth, recon.low_information);
    }

    std::printf(
        "fig3 rms_contact_t=%.6g rms_lift_t=%.6g max_grad_contact=%.6g "
        "max_grad_lift=%.6g cached_pulse=%d\n",
        rms[0], rms[1], max_grad[0], max_grad[1], b.from_cache ? 1 : 0);

    std::vector<std::string> inputs = {b.cache_path};
    io::write_manifest(manifest_path(a), "reproduce fig3", a.seed, a.threads,
                       inputs, outputs);
    return 0;
}

int run_fig4(const ReproduceArgs& a) {
    const double t2_star = 2.0e-6;
    const double c0 = 0.3;
    const double omega_max = kTwoPi * 1.0e6;
    const double deltas_hz[] = {0.25e6, 0.5e6, 1.0e6, 2.0e6};

    sens::SensitivityParams comb;
    comb.c0 = c0;
    comb.s0 = 150.0e3;
    comb.t_readout = 300.0e-9;
    comb.t_seq = 4.1e-6;
    comb.t2_star = t2_star;
    comb.gamma = kGammaHzPerT;

    std::vector<std::string> inputs;
    std::vector<std::string> outputs;

    std::vector<std::vector<double>> contrast_rows;
    for (int i = 0; i < 4; ++i) {
        const double delta = deltas_hz[i];
        const double w = 0.15 * delta;

        const double half = 2.5 * delta;
        const double spacing =
            std::min(w / 2.5, 1.0 / (kTwoPi * t2_star) / 2.0);
        const auto n =
            static_cast<std::size_t>(2.0 * std::ceil(half / spacing)) + 1;
        const auto grid = bloch::linspace_grid(-kTwoPi * half, kTwoPi * half, n);

        grape::GratingSpec spec;
        spec.n_dips = 5;
        spec.spacing_hz = delta;
        spec.dip_width_hz = w;
        spec.dip_depth = 1.0;
        const auto target = grape::make_grating_target(spec, grid);

        const std::string cache_path =
            join(cache_dir(a), "fig4_pulse_" + std::to_string(i) + ".json");
        bloch::ControlPulse pulse;
        if (fs::exists(cache_path)) {
            pulse = io::read_pulse(cache_path);
            inputs.push_back(cache_path);
        } else {
            const double tau = 2.0 / (3.0 * w);
            const auto guess = grape::initial_guess(target, omega_max, tau, 160);
            grape::GrapeConfig gc;
            gc.max_iterations = 3000;
            gc.convergence_tol = 1e-12;
            gc.threads = a.threads;
            pulse = grape::optimize(guess, target, gc).pulse;
            io::write_pulse(cache_path, pulse);
            outputs.push_back(cache_path);
        }

        const auto prof = bloch::excitation_profile(pulse, grid, a.threads);
        const auto deph = bloch::dephase_profile(prof, t2_star);

        // fringe contrast read off the window one half-spacing around the
        // center dip, the span one scan pixel actually traverses
        double lo = 1.0, hi = -1.0;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            if (std::abs(grid.values[k]) > kTwoPi * delta / 2.0) continue;
            lo = std::min(lo, deph.mz[k]);
            hi = std::max(hi, deph.mz[k]);
        }
        const double simulated = c0 * (hi - lo) / 2.0;
        contrast_rows.push_back({delta, simulated, sens::contrast(delta, comb)});
    }
    const std::string f_contrast = join(a.out_dir, "fig4_contrast.csv");
    write_csv(f_contrast, "delta_hz,contrast_sim,contrast_model", contrast_rows);
    outputs.push_back(f_contrast);

    // time-domain twin of the contrast decay
    std::vector<std::vector<double>> fid_rows;
    for (int k = 0; k <= 200; ++k) {
        const double t = 5.0 * t2_star * static_cast<double>(k) / 200.0;
        fid_rows.push_back({t, sens::fid_contrast(t, comb)});
    }
    const std::string f_fid = join(a.out_dir, "fig4_fid.csv");
    write_csv(f_fid, "t_s,contrast", fid_rows);
    outputs.push_back(f_fid);

    // sensitivity-vs-spacing sweep at the reference sensor parameters
    sens::SensitivityParams ref = comb;
    ref.t2_star = 416.0e-9;
    std::vector<double> sweep_hz;
    const int nsweep = 400;
    for (int k = 0; k < nsweep; ++k) {
        const double f = static_cast<double>(k) / (nsweep - 1);
        sweep_hz.push_back(1.0e5 * std::pow(1.0e3, f));
    }
    const auto curve = sens::sweep(sweep_hz, ref);
    const std::string f_sens = join(a.out_dir, "fig4_sensitivity.csv");
    io::write_sensitivity_csv(f_sens, curve);
    outputs.push_back(f_sens);

    // tip-family discrimination on a pseudopole ground truth
    field::TipFieldModel tip;
    tip.variant = field::TipVariant::pseudopole;
    tip.strength = -1.2e-11;
    tip.tip_offset = Eigen::Vector3d(0.0, 0.0, 180.0e-9);
    field::SensorGeometry geom;
    geom.bias_field = 7.8e-3;
    field::ScanGrid grid;
    grid.x_range = 2.0e-6;
    grid.y_range = 2.0e-6;
    grid.nx = 48;
    grid.ny = 48;
    grid.lift_height = 50.0e-9;
    const auto truth = field::field_map(tip, geom, grid, a.threads);

    std::vector<std::vector<double>> fit_rows;
    double rms_by_family[2] = {0.0, 0.0};
    const field::TipVariant families[] = {field::TipVariant::monopole,
                                          field::TipVariant::pseudopole};
    for (int fi = 0; fi < 2; ++fi) {
        const auto init = heuristic_fit_init(truth, families[fi]);
        const auto fit = field::fit_tip_model(truth, families[fi], geom, init);
        rms_by_family[fi] = fit.rms_residual;
        fit_rows.push_back({static_cast<double>(fi), fit.rms_residual,
                            fit.model.strength, fit.model.tip_offset.x(),
                            fit.model.tip_offset.y(), fit.model.tip_offset.z(),
                            fit.bias, fit.converged ? 1.0 : 0.0,
                            static_cast<double>(fit.iterations)});
    }
    const std::string f_fit = join(a.out_dir, "fig4_tipfit.csv");
    write_csv(f_fit,
              "family_0mono_1pseudo,rms_residual_t,strength,tip_offset_x_m,"
              "tip_offset_y_m,tip_offset_z_m,bias_t,converged,iterations",
              fit_rows);
    outputs.push_back(f_fit);

    std::printf("fig4 contrast_rel_err=[");
    for (std::size_t i = 0; i < contrast_rows.size(); ++i) {
        const double rel =
            contrast_rows[i][1] / contrast_rows[i][2] - 1.0;
        std::printf("%s%.3g", i ? "," : "", rel);
    }
    std::printf("] fit_rms_ratio=%.6g\n",
                rms_by_family[1] > 0.0 ? rms_by_family[0] / rms_by_family[1]
                                       : std::numeric_limits<double>::infinity());

    io::write_manifest(manifest_path(a), "reproduce fig4", a.seed, a.threads,
                       inputs, outputs);
    return 0;
}

}  // namespace

field::FitInit heuristic_fit_init(const field::FieldMap& map,
                                  field::TipVariant family) {
    const auto& g = map.grid;
    std::vector<double> border;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            if (!map.mask[map.index(ix, iy)]) continue;
            if (ix == 0 || ix == g.nx - 1 || iy == 0 || iy == g.ny - 1) {
                border.push_back(map.b[map.index(ix, iy)]);
            }
        }
    }
    if (border.empty()) {
        for (std::size_t i = 0; i < map.b.size(); ++i) {
            if (map.mask[i]) border.push_back(map.b[i]);
        }
    }
    if (border.empty()) {
        throw std::invalid_argument("map has no valid pixels to seed a fit");
    }
    std::nth_element(border.begin(), border.begin() + border.size() / 2,
                     border.end());
    const double bias = border[border.size() / 2];

    // strongest deviation from the border level marks the scan position with
    // the pole closest to the sensor
    double best = -1.0, bval = bias;
    int bx = 0, by = 0;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = map.index(ix, iy);
            if (!map.mask[i]) continue;
            const double d = std::abs(map.b[i] - bias);
            if (d > best) {
                best = d;
                bval = map.b[i];
                bx = ix;
                by = iy;
            }
        }
    }

    const double h = std::max(g.lift_height, 1.0e-9);
    const double q = family == field::TipVariant::monopole ? 2.0 : 1.0;
    field::FitInit init;
    // on-axis field of a pole at height h above the sensor: b - bias = -s/h^q
    init.strength = -(bval - bias) * std::pow(h, q);
    init.tip_offset = Eigen::Vector3d(-g.x_at(bx), -g.y_at(by), 0.0);
    init.bias = bias;
    return init;
}

int run_reproduce(const ReproduceArgs& args) {
    fs::create_directories(args.out_dir);
    fs::create_directories(cache_dir(args));
    if (args.figure == "fig2") return run_fig2(args);
    if (args.figure == "fig3") return run_fig3(args);
    if (args.figure == "fig4") return run_fig4(args);
    throw std::invalid_argument("unknown figure '" + args.figure +
                                "' (expected fig2|fig3|fig4)");
}

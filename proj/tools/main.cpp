#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gratmag/bloch.hpp"
#include "gratmag/fieldmodel.hpp"
#include "gratmag/grape.hpp"
#include "gratmag/imaging.hpp"
#include "gratmag/io.hpp"
#include "gratmag/sensitivity.hpp"
#include "reproduce.hpp"

using namespace gratmag;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct CommonOpts {
    std::uint64_t seed = 0;
    int threads = 1;
    std::string manifest;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--seed", c.seed, "seed for stochastic stages");
    cmd->add_option("--threads", c.threads,
                    "worker cap; outputs are identical for any value")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--manifest", c.manifest,
                    "manifest path (default: <out>.manifest.json)");
}

std::string manifest_path(const CommonOpts& c, const std::string& out) {
    return c.manifest.empty() ? out + ".manifest.json" : c.manifest;
}

// sweep spec "min_hz:max_hz:n", log-spaced
std::vector<double> parse_sweep(const std::string& spec) {
    const auto p1 = spec.find(':');
    const auto p2 = spec.find(':', p1 == std::string::npos ? p1 : p1 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos) {
        throw std::invalid_argument("sweep must be min_hz:max_hz:n, got '" +
                                    spec + "'");
    }
    double lo = 0.0, hi = 0.0;
    long n = 0;
    try {
        lo = std::stod(spec.substr(0, p1));
        hi = std::stod(spec.substr(p1 + 1, p2 - p1 - 1));
        n = std::stol(spec.substr(p2 + 1));
    } catch (const std::exception&) {
        throw std::invalid_argument("sweep must be min_hz:max_hz:n, got '" +
                                    spec + "'");
    }
    if (!(lo > 0.0) || !(hi > lo) || n < 2) {
        throw std::invalid_argument(
            "sweep needs 0 < min_hz < max_hz and n >= 2");
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n));
    const double llo = std::log(lo), lhi = std::log(hi);
    for (long k = 0; k < n; ++k) {
        const double f = static_cast<double>(k) / static_cast<double>(n - 1);
        out.push_back(std::exp(llo + f * (lhi - llo)));
    }
    return out;
}

// { "response_grid": { "min_hz", "max_hz", "n" } } from a recon config file
bloch::DetuningGrid response_grid_from(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error(config_path + ": cannot open");
    nlohmann::json j;
    in >> j;
    if (!j.contains("response_grid")) {
        throw std::runtime_error(
            config_path +
            ": missing response_grid { min_hz, max_hz, n } (the detuning band "
            "the response curve is tabulated on)");
    }
    const auto& r = j.at("response_grid");
    return bloch::linspace_grid(kTwoPi * r.at("min_hz").get<double>(),
                                kTwoPi * r.at("max_hz").get<double>(),
                                r.at("n").get<std::size_t>());
}

img::ResponseCurve response_from(const std::string& pulse_path,
                                 const std::string& config_path,
                                 const sens::SensitivityParams& sp,
                                 int threads) {
    const auto pulse = io::read_pulse(pulse_path);
    const auto grid = response_grid_from(config_path);
    const auto prof = bloch::excitation_profile(pulse, grid, threads);
    return img::build_response(prof, sp.t2_star, sp.c0);
}

// per-pixel flags: 0 fitted, 1 low-information, 2 masked
void write_diagnostics_csv(const std::string& path, const field::FieldMap& map,
                           const std::vector<std::uint8_t>& low_info) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    const auto& g = map.grid;
    out << "# nx,ny,x_range_m,y_range_m,lift_m\n";
    out << "# " << g.nx << "," << g.ny << "," << io::format_double(g.x_range)
        << "," << io::format_double(g.y_range) << ","
        << io::format_double(g.lift_height) << "\n";
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = map.index(ix, iy);
            const int flag = !map.mask[i] ? 2 : (low_info[i] ? 1 : 0);
            out << (ix ? "," : "") << flag;
        }
        out << "\n";
    }
}

struct OptimizeOpts {
    CommonOpts common;
    std::string target, config, out, trace, initial;
};

int run_optimize(const OptimizeOpts& o) {
    const auto target = io::read_target(o.target);
    auto cfg = io::read_grape_config(o.config);
    cfg.threads = o.common.threads;
    cfg.rng_seed = o.common.seed;

    bloch::ControlPulse init;
    std::vector<std::string> inputs = {o.target, o.config};
    if (!o.initial.empty()) {
        init = io::read_pulse(o.initial);
        inputs.push_back(o.initial);
    } else {
        std::ifstream in(o.config);
        nlohmann::json j;
        in >> j;
        if (!j.contains("initial")) {
            throw std::runtime_error(
                o.config +
                ": missing initial { omega_max_hz, duration_s, n_steps } "
                "(or pass --initial pulse.json)");
        }
        const auto& ij = j.at("initial");
        init = grape::initial_guess(
            target, kTwoPi * ij.at("omega_max_hz").get<double>(),
            ij.at("duration_s").get<double>(),
            ij.at("n_steps").get<std::size_t>());
    }

    const auto res = grape::optimize(init, target, cfg);
    io::write_pulse(o.out, res.pulse);
    std::vector<std::string> outputs = {o.out};
    if (!o.trace.empty()) {
        io::write_trace_csv(o.trace, res.trace);
        outputs.push_back(o.trace);
    }
    const auto& last = res.trace.iterations.back();
    std::printf("optimize iterations=%d infidelity=%.6g converged=%d stalled=%d\n",
                last.iter, last.infidelity, res.trace.converged ? 1 : 0,
                res.trace.stalled ? 1 : 0);
    io::write_manifest(manifest_path(o.common, o.out), "optimize",
                       o.common.seed, o.common.threads, inputs, outputs);
    return 0;
}

struct ProfileOpts {
    CommonOpts common;
    std::string pulse, grid, out;
    double t2_star = 0.0;
};

int run_profile(const ProfileOpts& o) {
    const auto pulse = io::read_pulse(o.pulse);
    const auto grid = io::read_detuning_grid(o.grid);
    auto prof = bloch::excitation_profile(pulse, grid, o.common.threads);
    if (o.t2_star > 0.0) prof = bloch::dephase_profile(prof, o.t2_star);
    if (o.out.empty()) {
        std::printf("detuning_hz,mz\n");
        for (std::size_t i = 0; i < prof.grid.size(); ++i) {
            std::printf("%s,%s\n",
                        io::format_double(prof.grid.values[i] / kTwoPi).c_str(),
                        io::format_double(prof.mz[i]).c_str());
        }
        if (!o.common.manifest.empty()) {
            io::write_manifest(o.common.manifest, "profile", o.common.seed,
                               o.common.threads, {o.pulse, o.grid}, {});
        }
        return 0;
    }
    io::write_profile_csv(o.out, prof);
    io::write_manifest(manifest_path(o.common, o.out), "profile", o.common.seed,
                       o.common.threads, {o.pulse, o.grid}, {o.out});
    return 0;
}

struct SensitivityOpts {
    CommonOpts common;
    std::string params, sweep, out;
};

int run_sensitivity(const SensitivityOpts& o) {
    const auto params = io::read_sensitivity_params(o.params);
    const auto spacing = parse_sweep(o.sweep);
    const auto curve = sens::sweep(spacing, params);
    if (!o.out.empty()) {
        io::write_sensitivity_csv(o.out, curve);
        io::write_manifest(manifest_path(o.common, o.out), "sensitivity",
                           o.common.seed, o.common.threads, {o.params}, {o.out});
    }
    const double dstar = sens::optimal_spacing(params);
    const double estar = sens::eta(dstar, params);
    std::printf("summary optimal_spacing_hz=%.6g eta_opt_uT_sqrtHz=%.6g\n",
                dstar, estar * 1.0e6);
    return 0;
}

struct FieldmapOpts {
    CommonOpts common;
    std::string model, grid, out;
};

int run_fieldmap(const FieldmapOpts& o) {
    const auto [model, geom] = io::read_tip_model(o.model);
    const auto grid = io::read_scan_grid(o.grid);
    const auto map = field::field_map(model, geom, grid, o.common.threads);
    io::write_map_csv(o.out, map);
    io::write_manifest(manifest_path(o.common, o.out), "fieldmap",
                       o.common.seed, o.common.threads, {o.model, o.grid},
                       {o.out, o.out + ".json"});
    return 0;
}

struct ScanOpts {
    CommonOpts common;
    std::string map, pulse, params, config, out;
};

int run_simulate_scan(const ScanOpts& o) {
    const auto truth = io::read_map_csv(o.map);
    const auto sp = io::read_sensitivity_params(o.params);
    auto cfg = io::read_recon_config(o.config);
    cfg.gamma = sp.gamma;
    cfg.seed = o.common.seed;
    cfg.threads = o.common.threads;
    const auto response =
        response_from(o.pulse, o.config, sp, o.common.threads);
    const auto image = img::simulate_scan(truth, response, cfg);
    io::write_image_csv(o.out, image);
    std::size_t masked = 0;
    for (auto m : image.mask) masked += m ? 0 : 1;
    std::printf("simulate-scan pixels=%zu masked=%zu\n", image.mask.size(),
                masked);
    io::write_manifest(manifest_path(o.common, o.out), "simulate-scan",
                       o.common.seed, o.common.threads,
                       {o.map, o.pulse, o.params, o.config},
                       {o.out, o.out + ".json"});
    return 0;
}

struct ReconstructOpts {
    CommonOpts common;
    std::string image, pulse, params, config, anchors, out, diagnostics;
};

int run_reconstruct(const ReconstructOpts& o) {
    const auto image = io::read_image_csv(o.image);
    const auto sp = io::read_sensitivity_params(o.params);
    auto cfg = io::read_recon_config(o.config);
    cfg.gamma = sp.gamma;
    cfg.seed = o.common.seed;
    cfg.threads = o.common.threads;
    std::vector<std::string> inputs = {o.image, o.pulse, o.params, o.config};
    if (!o.anchors.empty()) {
        const auto extra = io::read_anchors(o.anchors);
        cfg.seed_anchors.insert(cfg.seed_anchors.end(), extra.begin(),
                                extra.end());
        inputs.push_back(o.anchors);
    }
    if (cfg.seed_anchors.empty()) {
        throw std::runtime_error(
            "reconstruct needs at least one seed anchor (--anchors file or "
            "anchors in the config)");
    }
    const auto response =
        response_from(o.pulse, o.config, sp, o.common.threads);
    const auto assigned = img::assign_fringes(image, response, cfg);
    const auto recon = img::reconstruct(image, response, assigned.map, cfg);
    io::write_map_csv(o.out, recon.map);
    std::vector<std::string> outputs = {o.out, o.out + ".json"};
    if (!o.diagnostics.empty()) {
        write_diagnostics_csv(o.diagnostics, recon.map, recon.low_information);
        outputs.push_back(o.diagnostics);
    }
    std::size_t low = 0;
    for (auto f : recon.low_information) low += f ? 1 : 0;
    std::printf(
        "reconstruct iterations=%d objective=%.6g converged=%d unreached=%zu "
        "low_info=%zu\n",
        recon.iterations,
        recon.objective.empty() ? 0.0 : recon.objective.back(),
        recon.converged ? 1 : 0, assigned.unreached, low);
    io::write_manifest(manifest_path(o.common, o.out), "reconstruct",
                       o.common.seed, o.common.threads, inputs, outputs);
    return 0;
}

struct FitTipOpts {
    CommonOpts common;
    std::string map, family, out, model;
};

int run_fit_tip(const FitTipOpts& o) {
    const auto map = io::read_map_csv(o.map);
    const auto family = o.family == "monopole" ? field::TipVariant::monopole
                                               : field::TipVariant::pseudopole;
    field::SensorGeometry geom;
    field::FitInit init;
    std::vector<std::string> inputs = {o.map};
    if (!o.model.empty()) {
        const auto [m, g] = io::read_tip_model(o.model);
        geom = g;
        init.strength = m.strength;
        init.tip_offset = m.tip_offset;
        init.bias = g.bias_field;
        inputs.push_back(o.model);
    } else {
        init = heuristic_fit_init(map, family);
    }
    const auto fit = field::fit_tip_model(map, family, geom, init);
    io::write_fit_result(o.out, fit);
    std::printf("fit-tip family=%s rms_residual_t=%.6g converged=%d iterations=%d\n",
                o.family.c_str(), fit.rms_residual, fit.converged ? 1 : 0,
                fit.iterations);
    io::write_manifest(manifest_path(o.common, o.out), "fit-tip", o.common.seed,
                       o.common.threads, inputs, {o.out});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"excitation-grating magnetometry toolkit"};
    app.require_subcommand(1);

    OptimizeOpts opt;
    auto* c_opt = app.add_subcommand("optimize", "design a control pulse");
    c_opt->add_option("--target", opt.target, "target profile JSON")->required();
    c_opt->add_option("--config", opt.config, "optimizer config JSON")->required();
    c_opt->add_option("--out", opt.out, "output pulse JSON")->required();
    c_opt->add_option("--trace", opt.trace, "iteration trace CSV");
    c_opt->add_option("--initial", opt.initial,
                      "starting pulse JSON (default: built from the config's "
                      "initial block)");
    add_common(c_opt, opt.common);
    c_opt->callback([&opt] { run_optimize(opt); });

    ProfileOpts prof;
    auto* c_prof =
        app.add_subcommand("profile", "excitation profile of a pulse");
    c_prof->add_option("--pulse", prof.pulse, "pulse JSON")->required();
    c_prof->add_option("--grid", prof.grid, "detuning grid JSON")->required();
    c_prof->add_option("--out", prof.out, "profile CSV (default: stdout)");
    c_prof->add_option("--t2star", prof.t2_star,
                       "apply inhomogeneous dephasing of this T2* (s)");
    add_common(c_prof, prof.common);
    c_prof->callback([&prof] { run_profile(prof); });

    SensitivityOpts sen;
    auto* c_sen = app.add_subcommand("sensitivity",
                                     "contrast and sensitivity vs dip spacing");
    c_sen->add_option("--params", sen.params, "sensor parameters JSON")->required();
    c_sen->add_option("--sweep", sen.sweep, "min_hz:max_hz:n (log-spaced)")
        ->required();
    c_sen->add_option("--out", sen.out, "curve CSV");
    add_common(c_sen, sen.common);
    c_sen->callback([&sen] { run_sensitivity(sen); });

    FieldmapOpts fm;
    auto* c_fm = app.add_subcommand("fieldmap", "projected tip field on a scan grid");
    c_fm->add_option("--model", fm.model, "tip model + geometry JSON")->required();
    c_fm->add_option("--grid", fm.grid, "scan grid JSON")->required();
    c_fm->add_option("--out", fm.out, "map CSV")->required();
    add_common(c_fm, fm.common);
    c_fm->callback([&fm] { run_fieldmap(fm); });

    ScanOpts scan;
    auto* c_scan =
        app.add_subcommand("simulate-scan", "fluorescence image of a field map");
    c_scan->add_option("--map", scan.map, "ground-truth map CSV")->required();
    c_scan->add_option("--pulse", scan.pulse, "pulse JSON")->required();
    c_scan->add_option("--params", scan.params, "sensor parameters JSON")->required();
    c_scan->add_option("--config", scan.config, "reconstruction config JSON")
        ->required();
    c_scan->add_option("--out", scan.out, "fringe image CSV")->required();
    add_common(c_scan, scan.common);
    c_scan->callback([&scan] { run_simulate_scan(scan); });

    ReconstructOpts rec;
    auto* c_rec =
        app.add_subcommand("reconstruct", "field map from a fringe image");
    c_rec->add_option("--image", rec.image, "fringe image CSV")->required();
    c_rec->add_option("--pulse", rec.pulse, "pulse JSON")->required();
    c_rec->add_option("--params", rec.params, "sensor parameters JSON")->required();
    c_rec->add_option("--config", rec.config, "reconstruction config JSON")
        ->required();
    c_rec->add_option("--anchors", rec.anchors, "seed anchor JSON");
    c_rec->add_option("--out", rec.out, "reconstructed map CSV")->required();
    c_rec->add_option("--diagnostics", rec.diagnostics,
                      "per-pixel flag CSV (0 fitted, 1 low-info, 2 masked)");
    add_common(c_rec, rec.common);
    c_rec->callback([&rec] { run_reconstruct(rec); });

    FitTipOpts fit;
    auto* c_fit = app.add_subcommand("fit-tip", "fit a tip model to a field map");
    c_fit->add_option("--map", fit.map, "observed map CSV")->required();
    c_fit->add_option("--family", fit.family, "monopole | pseudopole")
        ->required()
        ->check(CLI::IsMember({"monopole", "pseudopole"}));
    c_fit->add_option("--out", fit.out, "fit result JSON")->required();
    c_fit->add_option("--model", fit.model,
                      "geometry + starting point JSON (default: heuristic)");
    add_common(c_fit, fit.common);
    c_fit->callback([&fit] { run_fit_tip(fit); });

    ReproduceArgs rep;
    auto* c_rep =
        app.add_subcommand("reproduce", "run a packaged figure recipe");
    c_rep->add_option("figure", rep.figure, "fig2 | fig3 | fig4")
        ->required()
        ->check(CLI::IsMember({"fig2", "fig3", "fig4"}));
    c_rep->add_option("--out", rep.out_dir, "output directory (default: .)");
    c_rep->add_option("--cache", rep.cache_dir,
                      "pulse cache directory (default: output directory)");
    c_rep->add_option("--seed", rep.seed, "seed for stochastic stages");
    c_rep->add_option("--threads", rep.threads,
                      "worker cap; outputs are identical for any value")
        ->check(CLI::PositiveNumber);
    c_rep->add_option("--manifest", rep.manifest,
                      "manifest path (default: <out>/<figure>.manifest.json)");
    c_rep->callback([&rep] { run_reproduce(rep); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

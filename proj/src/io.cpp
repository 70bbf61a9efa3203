#include "gratmag/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace gratmag::io {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr const char* kToolVersion = "0.1.0";

using nlohmann::json;

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return j;
}

void save_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << text;
    if (!out) throw std::runtime_error(path + ": write failed");
}

Eigen::Vector3d vec3(const json& j, const std::string& path, const char* key) {
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 3) {
        throw std::runtime_error(path + ": " + key + " must be a 3-element array");
    }
    return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

std::vector<double> hz_to_rad(const std::vector<double>& hz) {
    std::vector<double> out(hz.size());
    for (std::size_t i = 0; i < hz.size(); ++i) out[i] = kTwoPi * hz[i];
    return out;
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bloch::ControlPulse read_pulse(const std::string& path) {
    const json j = load_json(path);
    bloch::ControlPulse p;
    try {
        p.dt = j.at("dt_s").get<double>();
        p.omega_max = j.at("omega_max_rad_s").get<double>();
        for (const auto& s : j.at("steps")) {
            if (!s.is_array() || s.size() != 3) {
                throw std::runtime_error("steps entries must be [omega_x, omega_y, delta_z]");
            }
            p.steps.push_back({s[0].get<double>(), s[1].get<double>(), s[2].get<double>()});
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    p.validate();
    return p;
}

void write_pulse(const std::string& path, const bloch::ControlPulse& pulse) {
    // hand-rolled so every double goes through format_double (%.17g)
    std::ostringstream out;
    out << "{\n  \"dt_s\": " << format_double(pulse.dt)
        << ",\n  \"omega_max_rad_s\": " << format_double(pulse.omega_max)
        << ",\n  \"steps\": [";
    for (std::size_t k = 0; k < pulse.steps.size(); ++k) {
        out << (k ? ",\n    " : "\n    ") << '[' << format_double(pulse.steps[k].omega_x)
            << ", " << format_double(pulse.steps[k].omega_y) << ", "
            << format_double(pulse.steps[k].delta_z) << ']';
    }
    out << "\n  ]\n}\n";
    save_text(path, out.str());
}

bloch::DetuningGrid read_detuning_grid(const std::string& path) {
    const json j = load_json(path);
    try {
        if (j.contains("values_hz")) {
            bloch::DetuningGrid g;
            g.values = hz_to_rad(j.at("values_hz").get<std::vector<double>>());
            g.validate();
            return g;
        }
        const auto n = j.at("n").get<std::size_t>();
        return bloch::linspace_grid(kTwoPi * j.at("min_hz").get<double>(),
                                    kTwoPi * j.at("max_hz").get<double>(), n);
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

grape::TargetProfile read_target(const std::string& path) {
    const json j = load_json(path);
    try {
        if (j.contains("grating")) {
            const auto& gj = j.at("grating");
            grape::GratingSpec spec;
            spec.n_dips = gj.at("n_dips").get<int>();
            spec.spacing_hz = gj.value("spacing_hz", 0.0);
            spec.dip_width_hz = gj.at("dip_width_hz").get<double>();
            spec.dip_depth = gj.value("dip_depth", 1.0);
            spec.center_offset_hz = gj.value("center_offset_hz", 0.0);
            if (gj.contains("missing_dips")) {
                spec.missing_dips = gj.at("missing_dips").get<std::vector<int>>();
            }
            const auto& grj = j.at("grid");
            const auto grid = bloch::linspace_grid(kTwoPi * grj.at("min_hz").get<double>(),
                                                   kTwoPi * grj.at("max_hz").get<double>(),
                                                   grj.at("n").get<std::size_t>());
            return grape::make_grating_target(spec, grid);
        }
        grape::TargetProfile t;
        t.grid.values = hz_to_rad(j.at("grid_hz").get<std::vector<double>>());
        t.target_mz = j.at("target_mz").get<std::vector<double>>();
        if (j.contains("weights")) {
            t.weights = j.at("weights").get<std::vector<double>>();
        } else {
            t.weights.assign(t.target_mz.size(), 1.0);
        }
        t.validate();
        return t;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

grape::GrapeConfig read_grape_config(const std::string& path) {
    const json j = load_json(path);
    grape::GrapeConfig c;
    try {
        c.max_iterations = j.value("max_iterations", c.max_iterations);
        c.convergence_tol = j.value("convergence_tol", c.convergence_tol);
        if (j.contains("amplitude_ensemble")) {
            c.amplitude_ensemble = j.at("amplitude_ensemble").get<std::vector<double>>();
        }
        if (j.contains("line_search")) {
            const auto& ls = j.at("line_search");
            c.line_search.initial_step = ls.value("initial_step", c.line_search.initial_step);
            c.line_search.shrink = ls.value("shrink", c.line_search.shrink);
            c.line_search.sufficient_decrease =
                ls.value("sufficient_decrease", c.line_search.sufficient_decrease);
            c.line_search.max_backtracks =
                ls.value("max_backtracks", c.line_search.max_backtracks);
        }
        c.optimize_detuning_channel =
            j.value("optimize_detuning_channel", c.optimize_detuning_channel);
        c.rng_seed = j.value("rng_seed", c.rng_seed);
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    c.validate();
    return c;
}

void write_trace_csv(const std::string& path, const grape::OptimizationTrace& trace) {
    std::ostringstream out;
    out << "iter,infidelity,grad_norm,step\n";
    for (const auto& r : trace.iterations) {
        out << r.iter << ',' << format_double(r.infidelity) << ','
            << format_double(r.grad_norm) << ',' << format_double(r.step) << '\n';
    }
    save_text(path, out.str());
}

void write_profile_csv(const std::string& path, const bloch::ExcitationProfile& profile) {
    std::ostringstream out;
    out << "detuning_hz,mz\n";
    for (std::size_t i = 0; i < profile.grid.size(); ++i) {
        out << format_double(profile.grid.values[i] / kTwoPi) << ','
            << format_double(profile.mz[i]) << '\n';
    }
    save_text(path, out.str());
}

bloch::ExcitationProfile read_profile_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    bloch::ExcitationProfile p;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error(path + ": malformed row");
        p.grid.values.push_back(kTwoPi * std::stod(line.substr(0, comma)));
        p.mz.push_back(std::stod(line.substr(comma + 1)));
    }
    p.grid.validate();
    return p;
}

sens::SensitivityParams read_sensitivity_params(const std::string& path) {
    const json j = load_json(path);
    sens::SensitivityParams p;
    try {
        p.c0 = j.at("c0").get<double>();
        p.s0 = j.at("s0_counts_per_s").get<double>();
        p.t_readout = j.at("t_readout_s").get<double>();
        p.t_seq = j.at("t_seq_s").get<double>();
        p.t2_star = j.at("t2_star_s").get<double>();
        p.gamma = j.at("gamma_hz_per_t").get<double>();
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    p.validate();
    return p;
}

void write_sensitivity_csv(const std::string& path, const sens::SensitivityCurve& curve) {
    std::ostringstream out;
    out << "delta_hz,contrast,eta_T_per_sqrtHz\n";
    for (std::size_t i = 0; i < curve.spacing_hz.size(); ++i) {
        out << format_double(curve.spacing_hz[i]) << ',' << format_double(curve.contrast[i])
            << ',' << format_double(curve.eta[i]) << '\n';
    }
    save_text(path, out.str());
}

std::pair<field::TipFieldModel, field::SensorGeometry> read_tip_model(
    const std::string& path) {
    const json j = load_json(path);
    field::TipFieldModel m;
    field::SensorGeometry g;
    try {
        const auto family = j.at("family").get<std::string>();
        if (family == "monopole") {
            m.variant = field::TipVariant::monopole;
        } else if (family == "pseudopole") {
            m.variant = field::TipVariant::pseudopole;
        } else {
            throw std::runtime_error(path + ": family must be monopole or pseudopole");
        }
        m.strength = j.at("strength").get<double>();
        m.tip_offset = vec3(j, path, "tip_offset_m");
        m.singularity_epsilon = j.value("singularity_epsilon_m", m.singularity_epsilon);
        g.nv_position = vec3(j, path, "nv_position_m");
        g.nv_axis = vec3(j, path, "nv_axis");
        g.bias_field = j.at("bias_t").get<double>();
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    m.validate();
    g.validate();
    return {m, g};
}

field::ScanGrid read_scan_grid(const std::string& path) {
    const json j = load_json(path);
    field::ScanGrid g;
    try {
        g.x_range = j.at("x_range_m").get<double>();
        g.y_range = j.at("y_range_m").get<double>();
        g.nx = j.at("nx").get<int>();
        g.ny = j.at("ny").get<int>();
        g.lift_height = j.at("lift_m").get<double>();
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    g.validate();
    return g;
}

void write_fit_result(const std::string& path, const field::FitResult& fit) {
    std::ostringstream out;
    out << "{\n  \"family\": \""
        << (fit.model.variant == field::TipVariant::monopole ? "monopole" : "pseudopole")
        << "\",\n  \"strength\": " << format_double(fit.model.strength)
        << ",\n  \"tip_offset_m\": [" << format_double(fit.model.tip_offset.x()) << ", "
        << format_double(fit.model.tip_offset.y()) << ", "
        << format_double(fit.model.tip_offset.z()) << "]"
        << ",\n  \"bias_t\": " << format_double(fit.bias)
        << ",\n  \"rms_residual_t\": " << format_double(fit.rms_residual)
        << ",\n  \"converged\": " << (fit.converged ? "true" : "false")
        << ",\n  \"iterations\": " << fit.iterations << "\n}\n";
    save_text(path, out.str());
}

namespace {

void write_matrix_csv(const std::string& path, const field::ScanGrid& grid,
                      const std::vector<double>& cell,
                      const std::vector<std::uint8_t>& mask) {
    std::ostringstream out;
    out << "# nx,ny,x_range_m,y_range_m,lift_m\n";
    out << "# " << grid.nx << ',' << grid.ny << ',' << format_double(grid.x_range) << ','
        << format_double(grid.y_range) << ',' << format_double(grid.lift_height) << '\n';
    for (int iy = 0; iy < grid.ny; ++iy) {
        for (int ix = 0; ix < grid.nx; ++ix) {
            const std::size_t p =
                static_cast<std::size_t>(iy) * static_cast<std::size_t>(grid.nx) +
                static_cast<std::size_t>(ix);
            if (ix) out << ',';
            out << (mask[p] ? format_double(cell[p]) : "nan");
        }
        out << '\n';
    }
    save_text(path, out.str());

    std::ostringstream side;
    side << "{\n  \"nx\": " << grid.nx << ",\n  \"ny\": " << grid.ny
         << ",\n  \"x_range_m\": " << format_double(grid.x_range)
         << ",\n  \"y_range_m\": " << format_double(grid.y_range)
         << ",\n  \"lift_m\": " << format_double(grid.lift_height) << "\n}\n";
    save_text(path + ".json", side.str());
}

void read_matrix_csv(const std::string& path, field::ScanGrid* grid,
                     std::vector<double>* cell, std::vector<std::uint8_t>* mask) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::string line;
    bool have_header = false;
    std::vector<std::vector<double>> rows;
    std::vector<std::vector<std::uint8_t>> row_masks;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream hdr(line.substr(1));
            std::string tok;
            std::vector<std::string> toks;
            while (std::getline(hdr, tok, ',')) toks.push_back(tok);
            if (toks.size() == 5) {
                try {
                    grid->nx = std::stoi(toks[0]);
                    grid->ny = std::stoi(toks[1]);
                    grid->x_range = std::stod(toks[2]);
                    grid->y_range = std::stod(toks[3]);
                    grid->lift_height = std::stod(toks[4]);
                    have_header = true;
                } catch (const std::exception&) {
                    // label line, not the values line
                }
            }
            continue;
        }
        std::istringstream row(line);
        std::string tok;
        std::vector<double> vals;
        std::vector<std::uint8_t> ms;
        while (std::getline(row, tok, ',')) {
            const double v = std::stod(tok);
            vals.push_back(std::isnan(v) ? 0.0 : v);
            ms.push_back(std::isnan(v) ? 0 : 1);
        }
        rows.push_back(std::move(vals));
        row_masks.push_back(std::move(ms));
    }
    if (!have_header) throw std::runtime_error(path + ": missing geometry header comment");
    if (rows.size() != static_cast<std::size_t>(grid->ny)) {
        throw std::runtime_error(path + ": row count does not match header ny");
    }
    cell->clear();
    mask->clear();
    for (std::size_t iy = 0; iy < rows.size(); ++iy) {
        if (rows[iy].size() != static_cast<std::size_t>(grid->nx)) {
            throw std::runtime_error(path + ": column count does not match header nx");
        }
        cell->insert(cell->end(), rows[iy].begin(), rows[iy].end());
        mask->insert(mask->end(), row_masks[iy].begin(), row_masks[iy].end());
    }
    grid->validate();
}

}  // namespace

void write_map_csv(const std::string& path, const field::FieldMap& map) {
    map.validate();
    write_matrix_csv(path, map.grid, map.b, map.mask);
}

field::FieldMap read_map_csv(const std::string& path) {
    field::FieldMap m;
    read_matrix_csv(path, &m.grid, &m.b, &m.mask);
    return m;
}

void write_image_csv(const std::string& path, const img::FringeImage& image) {
    image.validate();
    write_matrix_csv(path, image.grid, image.fluorescence, image.mask);
}

img::FringeImage read_image_csv(const std::string& path) {
    img::FringeImage im;
    std::vector<double> cell;
    read_matrix_csv(path, &im.grid, &cell, &im.mask);
    im.fluorescence = std::move(cell);
    for (std::size_t p = 0; p < im.mask.size(); ++p) {
        if (!im.mask[p]) im.fluorescence[p] = std::numeric_limits<double>::quiet_NaN();
    }
    return im;
}

std::vector<img::Anchor> read_anchors(const std::string& path) {
    const json j = load_json(path);
    if (!j.is_array()) throw std::runtime_error(path + ": expected an array of anchors");
    std::vector<img::Anchor> out;
    try {
        for (const auto& a : j) {
            out.push_back({a.at("px").get<int>(), a.at("py").get<int>(),
                           a.at("b_tesla").get<double>()});
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return out;
}

img::ReconstructionConfig read_recon_config(const std::string& path) {
    const json j = load_json(path);
    img::ReconstructionConfig c;
    try {
        c.carrier_offset_hz = j.value("carrier_offset_hz", c.carrier_offset_hz);
        c.smoothness_weight = j.value("smoothness_weight", c.smoothness_weight);
        c.max_iterations = j.value("max_iterations", c.max_iterations);
        c.convergence_tol = j.value("convergence_tol", c.convergence_tol);
        c.low_info_fraction = j.value("low_info_fraction", c.low_info_fraction);
        if (j.contains("noise")) {
            const auto& nj = j.at("noise");
            const auto kind = nj.value("kind", std::string("none"));
            if (kind == "none") {
                c.noise.kind = img::NoiseModel::Kind::none;
            } else if (kind == "poisson") {
                c.noise.kind = img::NoiseModel::Kind::poisson;
                c.noise.s0 = nj.at("s0_counts_per_s").get<double>();
                c.noise.dwell = nj.at("dwell_s").get<double>();
            } else {
                throw std::runtime_error(path + ": noise kind must be none or poisson");
            }
        }
        if (j.contains("anchors")) {
            for (const auto& a : j.at("anchors")) {
                c.seed_anchors.push_back({a.at("px").get<int>(), a.at("py").get<int>(),
                                          a.at("b_tesla").get<double>()});
            }
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return c;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open for digest");
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (got < static_cast<std::streamsize>(sizeof buf)) break;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_manifest(const std::string& path, const std::string& subcommand,
                    std::uint64_t seed, int threads,
                    const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& output_paths) {
    nlohmann::ordered_json j;
    j["tool"] = "gratmag";
    j["version"] = kToolVersion;
    j["subcommand"] = subcommand;
    j["seed"] = seed;
    j["threads"] = threads;
    j["inputs"] = nlohmann::ordered_json::array();
    for (const auto& p : input_paths) {
        j["inputs"].push_back({{"path", p}, {"fnv1a64", hex64(fnv1a64_file(p))}});
    }
    j["outputs"] = output_paths;
    save_text(path, j.dump(2) + "\n");
}

}  // namespace gratmag::io

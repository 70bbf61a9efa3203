#ifndef GRATMAG_IO_HPP
#define GRATMAG_IO_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gratmag/bloch.hpp"
#include "gratmag/fieldmodel.hpp"
#include "gratmag/grape.hpp"
#include "gratmag/imaging.hpp"
#include "gratmag/sensitivity.hpp"

// File formats. All on-disk frequencies are Hz; in-memory detunings are
// rad/s (factor 2*pi at this boundary), except pulse steps which are stored
// in rad/s explicitly (field names carry the unit). Doubles are printed with
// %.17g so a written value reads back bitwise.
namespace gratmag::io {

// { "dt_s": .., "omega_max_rad_s": .., "steps": [[wx, wy, dz], ..] }
bloch::ControlPulse read_pulse(const std::string& path);
void write_pulse(const std::string& path, const bloch::ControlPulse& pulse);

// { "min_hz": .., "max_hz": .., "n": .. } or { "values_hz": [..] }
bloch::DetuningGrid read_detuning_grid(const std::string& path);

// { "grid_hz": [..], "target_mz": [..], "weights": [..] } or
// { "grating": { n_dips, spacing_hz, .. }, "grid": { min_hz, max_hz, n } }
grape::TargetProfile read_target(const std::string& path);

// every field optional, defaults from GrapeConfig
grape::GrapeConfig read_grape_config(const std::string& path);

// CSV `iter,infidelity,grad_norm,step`
void write_trace_csv(const std::string& path, const grape::OptimizationTrace& trace);

// CSV `detuning_hz,mz`
void write_profile_csv(const std::string& path, const bloch::ExcitationProfile& profile);
bloch::ExcitationProfile read_profile_csv(const std::string& path);

// { "c0", "s0_counts_per_s", "t_readout_s", "t_seq_s", "t2_star_s", "gamma_hz_per_t" }
sens::SensitivityParams read_sensitivity_params(const std::string& path);

// CSV `delta_hz,contrast,eta_T_per_sqrtHz`
void write_sensitivity_csv(const std::string& path, const sens::SensitivityCurve& curve);

// { "family": "monopole"|"pseudopole", "strength", "tip_offset_m": [x,y,z],
//   "nv_position_m": [x,y,z], "nv_axis": [x,y,z], "bias_t",
//   "singularity_epsilon_m"? }
std::pair<field::TipFieldModel, field::SensorGeometry> read_tip_model(
    const std::string& path);

// { "x_range_m", "y_range_m", "nx", "ny", "lift_m" }
field::ScanGrid read_scan_grid(const std::string& path);

void write_fit_result(const std::string& path, const field::FitResult& fit);

// CSV matrix, row-major, masked cells as nan, preceded by the two comment
// lines `# nx,ny,x_range_m,y_range_m,lift_m` and `# <values>`; a JSON
// sidecar `<path>.json` repeats the geometry.
void write_map_csv(const std::string& path, const field::FieldMap& map);
field::FieldMap read_map_csv(const std::string& path);
void write_image_csv(const std::string& path, const img::FringeImage& image);
img::FringeImage read_image_csv(const std::string& path);

// [{ "px": i, "py": j, "b_tesla": v }, ..]
std::vector<img::Anchor> read_anchors(const std::string& path);

// { "carrier_offset_hz"?, "smoothness_weight"?, "max_iterations"?,
//   "convergence_tol"?, "low_info_fraction"?,
//   "noise"?: { "kind": "none"|"poisson", "s0_counts_per_s", "dwell_s" },
//   "anchors"?: [..] }
// gamma, seed, and threads come from the caller (params file / CLI flags).
img::ReconstructionConfig read_recon_config(const std::string& path);

// FNV-1a, non-cryptographic: identifies inputs in manifests, nothing more.
std::uint64_t fnv1a64_file(const std::string& path);
std::string hex64(std::uint64_t v);

void write_manifest(const std::string& path, const std::string& subcommand,
                    std::uint64_t seed, int threads,
                    const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& output_paths);

std::string format_double(double v);  // %.17g

}  // namespace gratmag::io

#endif

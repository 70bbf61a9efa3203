#ifndef GRATMAG_GRAPE_HPP
#define GRATMAG_GRAPE_HPP

#include <cstdint>
#include <vector>

#include "gratmag/bloch.hpp"

namespace gratmag::grape {

// Desired mz(detuning) with per-point least-squares weights.
struct TargetProfile {
    bloch::DetuningGrid grid;
    std::vector<double> target_mz;   // in [-1, 1]
    std::vector<double> weights;     // >= 0, at least one positive

    void validate() const;
};

// Comb of Gaussian dips, equally spaced, optionally with rungs removed.
// Dip k sits at center_offset_hz + (k - (n_dips-1)/2) * spacing_hz.
struct GratingSpec {
    int n_dips = 1;
    double spacing_hz = 0.0;      // ignored when n_dips == 1
    double dip_width_hz = 0.0;    // Gaussian width parameter of one dip
    double dip_depth = 1.0;       // in (0, 1]; mz at a dip center = 1 - 2*dip_depth
    double center_offset_hz = 0.0;
    std::vector<int> missing_dips;  // sorted unique indices in [0, n_dips)

    std::vector<double> dip_centers_hz() const;         // full ladder
    std::vector<double> active_dip_centers_hz() const;  // ladder minus missing
    void validate() const;
};

struct LineSearchRule {
    double initial_step = 0.25;        // dimensionless; trial step is
                                       // initial_step * omega_max / |grad|_inf
    double shrink = 0.5;
    double sufficient_decrease = 1e-4;
    int max_backtracks = 60;
};

struct GrapeConfig {
    int max_iterations = 2000;
    double convergence_tol = 1e-10;    // relative infidelity decrease per accepted step
    std::vector<double> amplitude_ensemble = {1.0};  // scales omega_x/omega_y only
    LineSearchRule line_search;
    bool optimize_detuning_channel = false;
    std::uint64_t rng_seed = 0;        // reserved; the optimizer is deterministic
    int threads = 1;

    void validate() const;
};

struct IterationRecord {
    int iter;
    double infidelity;
    double grad_norm;  // l2 over the optimized channels
    double step;       // accepted step length (0 for the initial record)
};

struct OptimizationTrace {
    std::vector<IterationRecord> iterations;
    bool converged = false;  // relative decrease fell below convergence_tol
    bool stalled = false;    // line search exhausted without sufficient decrease
};

// Per-step objective derivatives.
struct StepGradient {
    double d_omega_x = 0.0;
    double d_omega_y = 0.0;
    double d_delta_z = 0.0;
};

// Samples the comb onto the grid: mz = 1 - 2*dip_depth*sum of unit Gaussians,
// clamped to [-1, 1], uniform weights. Throws when the grid fails to cover
// all active dip centers, is coarser than dip_width/2, or dips overlap (bump
// sum exceeding 1 by more than 1%).
TargetProfile make_grating_target(const GratingSpec& spec,
                                  const bloch::DetuningGrid& grid);

// Ensemble mean of sum_i w_i (mz_i - target_i)^2 / sum_i w_i, propagating
// from +z per grid point with transverse amplitudes scaled by each ensemble
// member.
double infidelity(const bloch::ControlPulse& pulse, const TargetProfile& target,
                  const GrapeConfig& config);

// Exact derivatives of infidelity() w.r.t. every step control, adjoint
// backward pass against the same rotation chain (no finite differences).
std::vector<StepGradient> gradient(const bloch::ControlPulse& pulse,
                                   const TargetProfile& target,
                                   const GrapeConfig& config);

// Sum of resonant pi sub-pulses, one per dip of the target (superposition of
// e^{i delta_k t} tones, each of area pi), radially clipped to omega_max.
// Throws when the target shows no dips or when duration * omega_max^2 cannot
// cover the dip span (time-bandwidth limit).
bloch::ControlPulse initial_guess(const TargetProfile& target, double omega_max,
                                  double duration, std::size_t n_steps);

struct OptimizeResult {
    bloch::ControlPulse pulse;
    OptimizationTrace trace;
};

// Projected gradient descent with backtracking line search. Steps move
// omega_x/omega_y (and delta_z when enabled) down the gradient, then clip
// each step radially to omega_max. Infidelity is non-increasing across
// accepted iterations; an exactly optimal input returns unchanged with zero
// accepted iterations.
OptimizeResult optimize(const bloch::ControlPulse& initial,
                        const TargetProfile& target, const GrapeConfig& config);

}  // namespace gratmag::grape

#endif

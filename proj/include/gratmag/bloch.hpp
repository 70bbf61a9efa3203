#ifndef GRATMAG_BLOCH_HPP
#define GRATMAG_BLOCH_HPP

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace gratmag::bloch {

// Magnetization vector (mx, my, mz). |m| = 1 is preserved by all propagation
// routines; initial state for a sweep is +z.
using BlochState = Eigen::Vector3d;

// One piecewise-constant control interval. All rates are angular (rad/s).
struct ControlStep {
    double omega_x = 0.0;
    double omega_y = 0.0;
    double delta_z = 0.0;
};

// Piecewise-constant drive: steps.size() intervals of equal length dt.
// omega_max caps the transverse amplitude sqrt(omega_x^2 + omega_y^2).
struct ControlPulse {
    double dt = 0.0;         // s
    double omega_max = 0.0;  // rad/s
    std::vector<ControlStep> steps;

    double duration() const { return dt * static_cast<double>(steps.size()); }

    // Throws std::invalid_argument on dt <= 0, omega_max <= 0, empty steps,
    // or any step whose transverse amplitude exceeds omega_max (relative
    // slack 1e-12 for round-trips through text formats).
    void validate() const;
};

// Strictly increasing detuning samples, rad/s.
struct DetuningGrid {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double front() const { return values.front(); }
    double back() const { return values.back(); }
    double max_spacing() const;

    // Throws std::invalid_argument unless size >= 2 and strictly increasing.
    void validate() const;
};

DetuningGrid linspace_grid(double lo, double hi, std::size_t n);

// mz after the pulse, sampled per grid detuning.
struct ExcitationProfile {
    DetuningGrid grid;
    std::vector<double> mz;
};

// Rotates m by the constant effective field (omega_x, omega_y, delta) acting
// for dt: exact Rodrigues rotation about the field axis, angle |field|*dt.
BlochState step_rotate(const BlochState& m, double omega_x, double omega_y,
                       double delta, double dt);

// Applies every step of the pulse in order; extra_detuning adds to each
// step's delta_z (the sweep variable).
BlochState propagate(const ControlPulse& pulse, double extra_detuning,
                     const BlochState& initial);

// Sweeps propagate() from +z over the grid. Grid points are independent;
// `threads` > 1 evaluates them concurrently with identical results.
ExcitationProfile excitation_profile(const ControlPulse& pulse,
                                     const DetuningGrid& grid, int threads = 1);

// Convolves the excitation 1 - mz with a Gaussian detuning kernel of width
// sigma = 1/t2_star (rad/s), truncated at 5 sigma and renormalized per point
// so edges are not darkened. Throws std::runtime_error when the grid is too
// coarse to resolve the kernel (max spacing > sigma).
ExcitationProfile dephase_profile(const ExcitationProfile& profile, double t2_star);

}  // namespace gratmag::bloch

#endif

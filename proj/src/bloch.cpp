#include "gratmag/bloch.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gratmag/parallel.hpp"

namespace gratmag::bloch {

void ControlPulse::validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("pulse: dt must be > 0");
    if (!(omega_max > 0.0)) throw std::invalid_argument("pulse: omega_max must be > 0");
    if (steps.empty()) throw std::invalid_argument("pulse: needs at least one step");
    const double cap = omega_max * (1.0 + 1e-12);
    for (std::size_t k = 0; k < steps.size(); ++k) {
        double amp = std::hypot(steps[k].omega_x, steps[k].omega_y);
        if (amp > cap) {
            throw std::invalid_argument("pulse: step " + std::to_string(k) +
                                        " amplitude exceeds omega_max");
        }
    }
}

void DetuningGrid::validate() const {
    if (values.size() < 2) throw std::invalid_argument("grid: needs at least two points");
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (!(values[i] > values[i - 1])) {
            throw std::invalid_argument("grid: values must be strictly increasing");
        }
    }
}

double DetuningGrid::max_spacing() const {
    double h = 0.0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        h = std::max(h, values[i] - values[i - 1]);
    }
    return h;
}

DetuningGrid linspace_grid(double lo, double hi, std::size_t n) {
    if (n < 2) throw std::invalid_argument("grid: needs at least two points");
    if (!(hi > lo)) throw std::invalid_argument("grid: hi must exceed lo");
    DetuningGrid g;
    g.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        g.values[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return g;
}

BlochState step_rotate(const BlochState& m, double omega_x, double omega_y,
                       double delta, double dt) {
    const double vx = omega_x * dt, vy = omega_y * dt, vz = delta * dt;
    const double theta2 = vx * vx + vy * vy + vz * vz;
    if (theta2 == 0.0) return m;
    const double theta = std::sqrt(theta2);
    const Eigen::Vector3d n(vx / theta, vy / theta, vz / theta);
    const double c = std::cos(theta), s = std::sin(theta);
    return m * c + n.cross(m) * s + n * (n.dot(m) * (1.0 - c));
}

BlochState propagate(const ControlPulse& pulse, double extra_detuning,
                     const BlochState& initial) {
    BlochState m = initial;
    for (const ControlStep& u : pulse.steps) {
        m = step_rotate(m, u.omega_x, u.omega_y, u.delta_z + extra_detuning, pulse.dt);
    }
    return m;
}

ExcitationProfile excitation_profile(const ControlPulse& pulse,
                                     const DetuningGrid& grid, int threads) {
    pulse.validate();
    grid.validate();
    ExcitationProfile out;
    out.grid = grid;
    out.mz.resize(grid.size());
    parallel_for(grid.size(), threads, [&](std::size_t i) {
        out.mz[i] = propagate(pulse, grid.values[i], BlochState(0.0, 0.0, 1.0)).z();
    });
    return out;
}

ExcitationProfile dephase_profile(const ExcitationProfile& profile, double t2_star) {
    profile.grid.validate();
    if (profile.mz.size() != profile.grid.size()) {
        throw std::invalid_argument("dephase: profile length mismatch");
    }
    if (!(t2_star > 0.0)) throw std::invalid_argument("dephase: t2_star must be > 0");
    const double sigma = 1.0 / t2_star;
    if (profile.grid.max_spacing() > sigma) {
        throw std::runtime_error(
            "dephase: grid too coarse for kernel width 1/t2_star; refine the grid");
    }
    const auto& d = profile.grid.values;
    const std::size_t n = d.size();
    ExcitationProfile out;
    out.grid = profile.grid;
    out.mz.resize(n);
    const double cut = 5.0 * sigma;
    std::size_t lo = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (d[i] - d[lo] > cut) ++lo;
        double acc = 0.0, norm = 0.0;
        for (std::size_t j = lo; j < n && d[j] - d[i] <= cut; ++j) {
            double u = (d[j] - d[i]) / sigma;
            double w = std::exp(-0.5 * u * u);
            acc += w * (1.0 - profile.mz[j]);
            norm += w;
        }
        // renormalized window: convex combination, so mz stays in [-1, 1]
        out.mz[i] = 1.0 - acc / norm;
    }
    return out;
}

}  // namespace gratmag::bloch

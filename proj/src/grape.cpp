#include "gratmag/grape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "gratmag/parallel.hpp"

namespace gratmag::grape {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Right Jacobian of the rotation-vector exponential map:
//   exp([v + u]x) ~ exp([v]x) * exp([J_r(v) u]x)
// J_r(v) = I - A [v]x + B [v]x^2, A = (1-cos t)/t^2, B = (t - sin t)/t^3.
Eigen::Matrix3d right_jacobian(const Eigen::Vector3d& v) {
    const double t2 = v.squaredNorm();
    double a, b;
    if (t2 < 1e-8) {  // theta < 1e-4: series, exact to ~1e-24
        a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
    } else {
        const double t = std::sqrt(t2);
        a = (1.0 - std::cos(t)) / t2;
        b = (t - std::sin(t)) / (t2 * t);
    }
    Eigen::Matrix3d skew;
    skew << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return Eigen::Matrix3d::Identity() - a * skew + b * (skew * skew);
}

struct EnsembleTask {
    double scale;
    std::size_t grid_index;
};

std::vector<EnsembleTask> flatten_tasks(const TargetProfile& target,
                                        const GrapeConfig& config) {
    std::vector<EnsembleTask> tasks;
    tasks.reserve(config.amplitude_ensemble.size() * target.grid.size());
    for (double s : config.amplitude_ensemble) {
        for (std::size_t i = 0; i < target.grid.size(); ++i) {
            tasks.push_back({s, i});
        }
    }
    return tasks;
}

double weight_norm(const TargetProfile& target) {
    double w = 0.0;
    for (double x : target.weights) w += x;
    return w;
}

}  // namespace

void TargetProfile::validate() const {
    grid.validate();
    if (target_mz.size() != grid.size() || weights.size() != grid.size()) {
        throw std::invalid_argument("target: array lengths must match the grid");
    }
    double wsum = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (std::abs(target_mz[i]) > 1.0 + 1e-12) {
            throw std::invalid_argument("target: target_mz outside [-1, 1]");
        }
        if (weights[i] < 0.0) throw std::invalid_argument("target: negative weight");
        wsum += weights[i];
    }
    if (!(wsum > 0.0)) throw std::invalid_argument("target: all weights zero");
}

std::vector<double> GratingSpec::dip_centers_hz() const {
    std::vector<double> c(static_cast<std::size_t>(n_dips));
    const double half = 0.5 * static_cast<double>(n_dips - 1);
    for (int k = 0; k < n_dips; ++k) {
        c[static_cast<std::size_t>(k)] =
            center_offset_hz + (static_cast<double>(k) - half) * spacing_hz;
    }
    return c;
}

std::vector<double> GratingSpec::active_dip_centers_hz() const {
    auto all = dip_centers_hz();
    std::vector<double> out;
    out.reserve(all.size());
    for (int k = 0; k < n_dips; ++k) {
        if (!std::binary_search(missing_dips.begin(), missing_dips.end(), k)) {
            out.push_back(all[static_cast<std::size_t>(k)]);
        }
    }
    return out;
}

void GratingSpec::validate() const {
    if (n_dips < 1) throw std::invalid_argument("grating: n_dips must be >= 1");
    if (!(dip_width_hz > 0.0)) throw std::invalid_argument("grating: dip_width_hz must be > 0");
    if (n_dips > 1 && !(spacing_hz > dip_width_hz)) {
        throw std::invalid_argument("grating: spacing_hz must exceed dip_width_hz");
    }
    if (!(dip_depth > 0.0) || dip_depth > 1.0) {
        throw std::invalid_argument("grating: dip_depth must lie in (0, 1]");
    }
    for (std::size_t i = 0; i < missing_dips.size(); ++i) {
        if (missing_dips[i] < 0 || missing_dips[i] >= n_dips) {
            throw std::invalid_argument("grating: missing_dips index out of range");
        }
        if (i > 0 && missing_dips[i] <= missing_dips[i - 1]) {
            throw std::invalid_argument("grating: missing_dips must be sorted and unique");
        }
    }
}

void GrapeConfig::validate() const {
    if (max_iterations < 0) throw std::invalid_argument("grape: max_iterations must be >= 0");
    if (!(convergence_tol > 0.0)) throw std::invalid_argument("grape: convergence_tol must be > 0");
    if (amplitude_ensemble.empty()) {
        throw std::invalid_argument("grape: amplitude_ensemble must be non-empty");
    }
    for (double s : amplitude_ensemble) {
        if (!(s > 0.0)) throw std::invalid_argument("grape: ensemble scales must be > 0");
    }
    if (!(line_search.initial_step > 0.0) || !(line_search.shrink > 0.0) ||
        line_search.shrink >= 1.0 || !(line_search.sufficient_decrease > 0.0) ||
        line_search.max_backtracks < 1) {
        throw std::invalid_argument("grape: malformed line search rule");
    }
}

TargetProfile make_grating_target(const GratingSpec& spec,
                                  const bloch::DetuningGrid& grid) {
    spec.validate();
    grid.validate();
    const double w = kTwoPi * spec.dip_width_hz;
    std::vector<double> centers;
    for (double c : spec.active_dip_centers_hz()) centers.push_back(kTwoPi * c);
    if (!centers.empty()) {
        if (grid.front() > centers.front() || grid.back() < centers.back()) {
            throw std::invalid_argument("grating: grid does not cover all active dip centers");
        }
    }
    if (grid.max_spacing() >= 0.5 * w) {
        throw std::invalid_argument("grating: grid spacing must be below dip_width/2");
    }
    TargetProfile out;
    out.grid = grid;
    out.target_mz.resize(grid.size());
    out.weights.assign(grid.size(), 1.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double bump = 0.0;
        for (double c : centers) {
            const double u = (grid.values[i] - c) / w;
            bump += std::exp(-0.5 * u * u);
        }
        if (bump > 1.01) {
            throw std::invalid_argument("grating: dips overlap (bump sum exceeds 1 by > 1%)");
        }
        out.target_mz[i] = std::clamp(1.0 - 2.0 * spec.dip_depth * bump, -1.0, 1.0);
    }
    return out;
}

double infidelity(const bloch::ControlPulse& pulse, const TargetProfile& target,
                  const GrapeConfig& config) {
    pulse.validate();
    target.validate();
    config.validate();
    const auto tasks = flatten_tasks(target, config);
    const double norm =
        weight_norm(target) * static_cast<double>(config.amplitude_ensemble.size());
    std::vector<double> part(tasks.size());
    parallel_for(tasks.size(), config.threads, [&](std::size_t t) {
        const auto& task = tasks[t];
        bloch::BlochState m(0.0, 0.0, 1.0);
        const double delta_i = target.grid.values[task.grid_index];
        for (const auto& u : pulse.steps) {
            m = bloch::step_rotate(m, task.scale * u.omega_x, task.scale * u.omega_y,
                                   u.delta_z + delta_i, pulse.dt);
        }
        const double r = m.z() - target.target_mz[task.grid_index];
        part[t] = target.weights[task.grid_index] * r * r;
    });
    double acc = 0.0;  // fixed-order reduction keeps the result thread-count independent
    for (double p : part) acc += p;
    return acc / norm;
}

std::vector<StepGradient> gradient(const bloch::ControlPulse& pulse,
                                   const TargetProfile& target,
                                   const GrapeConfig& config) {
    pulse.validate();
    target.validate();
    config.validate();
    const auto tasks = flatten_tasks(target, config);
    const std::size_t nsteps = pulse.steps.size();
    const double norm =
        weight_norm(target) * static_cast<double>(config.amplitude_ensemble.size());
    const double dt = pulse.dt;

    std::vector<std::vector<StepGradient>> part(tasks.size());
    parallel_for(tasks.size(), config.threads, [&](std::size_t t) {
        const auto& task = tasks[t];
        const double s = task.scale;
        const double delta_i = target.grid.values[task.grid_index];

        // forward pass, keeping every intermediate state
        std::vector<Eigen::Vector3d> m(nsteps + 1);
        m[0] = Eigen::Vector3d(0.0, 0.0, 1.0);
        for (std::size_t k = 0; k < nsteps; ++k) {
            const auto& u = pulse.steps[k];
            m[k + 1] = bloch::step_rotate(m[k], s * u.omega_x, s * u.omega_y,
                                          u.delta_z + delta_i, dt);
        }

        // adjoint seed: d/dmz of w (mz - T)^2 / norm
        const double w = target.weights[task.grid_index];
        Eigen::Vector3d mu(0.0, 0.0,
                           2.0 * w * (m[nsteps].z() - target.target_mz[task.grid_index]) / norm);

        auto& g = part[t];
        g.resize(nsteps);
        for (std::size_t k = nsteps; k-- > 0;) {
            const auto& u = pulse.steps[k];
            const Eigen::Vector3d v(dt * s * u.omega_x, dt * s * u.omega_y,
                                    dt * (u.delta_z + delta_i));
            // mu_{k} = R_k^T mu_{k+1}: transpose of a rotation is the reverse rotation
            mu = bloch::step_rotate(mu, -s * u.omega_x, -s * u.omega_y,
                                    -(u.delta_z + delta_i), dt);
            const Eigen::Matrix3d jr = right_jacobian(v);
            // dm_k/du = R_k [ (J_r dv/du) x m_{k-1} ], dv/domega_x = dt*s*e_x etc.
            g[k].d_omega_x = dt * s * mu.dot(jr.col(0).cross(m[k]));
            g[k].d_omega_y = dt * s * mu.dot(jr.col(1).cross(m[k]));
            g[k].d_delta_z = dt * mu.dot(jr.col(2).cross(m[k]));
        }
    });

    std::vector<StepGradient> total(nsteps);
    for (const auto& g : part) {  // fixed-order reduction
        for (std::size_t k = 0; k < nsteps; ++k) {
            total[k].d_omega_x += g[k].d_omega_x;
            total[k].d_omega_y += g[k].d_omega_y;
            total[k].d_delta_z += g[k].d_delta_z;
        }
    }
    return total;
}

bloch::ControlPulse initial_guess(const TargetProfile& target, double omega_max,
                                  double duration, std::size_t n_steps) {
    target.validate();
    if (!(omega_max > 0.0)) throw std::invalid_argument("guess: omega_max must be > 0");
    if (!(duration > 0.0)) throw std::invalid_argument("guess: duration must be > 0");
    if (n_steps == 0) throw std::invalid_argument("guess: n_steps must be >= 1");

    // dip centers: plateau-tolerant local minima, deep enough to matter
    const auto& t = target.target_mz;
    const auto& d = target.grid.values;
    double tmin = t[0], tmax = t[0];
    for (double x : t) {
        tmin = std::min(tmin, x);
        tmax = std::max(tmax, x);
    }
    const double cut = tmax - 0.25 * (tmax - tmin);
    std::vector<double> centers;
    std::size_t i = 1;
    while (i + 1 < t.size()) {
        if (t[i] < t[i - 1]) {
            std::size_t j = i;
            while (j + 1 < t.size() && t[j + 1] == t[i]) ++j;  // flat run
            if (j + 1 < t.size() && t[j + 1] > t[i] && t[i] < cut) {
                centers.push_back(d[(i + j) / 2]);
            }
            i = j + 1;
        } else {
            ++i;
        }
    }
    if (centers.empty()) {
        throw std::invalid_argument("guess: target has no dips to seed from");
    }

    const double span = centers.back() - centers.front();
    if (duration * omega_max * omega_max < span) {
        throw std::invalid_argument(
            "guess: duration too short for the dip span; need at least " +
            std::to_string(span / (omega_max * omega_max)) + " s");
    }

    bloch::ControlPulse pulse;
    pulse.dt = duration / static_cast<double>(n_steps);
    pulse.omega_max = omega_max;
    pulse.steps.resize(n_steps);
    const double amp = std::numbers::pi / duration;  // each tone has area pi
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double tk = (static_cast<double>(k) + 0.5) * pulse.dt;
        double wx = 0.0, wy = 0.0;
        for (double c : centers) {
            wx += amp * std::cos(c * tk);
            wy += amp * std::sin(c * tk);
        }
        const double a = std::hypot(wx, wy);
        if (a > omega_max) {
            wx *= omega_max / a;
            wy *= omega_max / a;
        }
        pulse.steps[k] = {wx, wy, 0.0};
    }
    return pulse;
}

namespace {

double grad_norm_l2(const std::vector<StepGradient>& g, bool with_z) {
    double acc = 0.0;
    for (const auto& gk : g) {
        acc += gk.d_omega_x * gk.d_omega_x + gk.d_omega_y * gk.d_omega_y;
        if (with_z) acc += gk.d_delta_z * gk.d_delta_z;
    }
    return std::sqrt(acc);
}

double grad_norm_inf(const std::vector<StepGradient>& g, bool with_z) {
    double m = 0.0;
    for (const auto& gk : g) {
        m = std::max(m, std::abs(gk.d_omega_x));
        m = std::max(m, std::abs(gk.d_omega_y));
        if (with_z) m = std::max(m, std::abs(gk.d_delta_z));
    }
    return m;
}

// One descent step followed by radial projection onto the amplitude disc.
bloch::ControlPulse take_step(const bloch::ControlPulse& x,
                              const std::vector<StepGradient>& g, double alpha,
                              bool with_z) {
    bloch::ControlPulse out = x;
    for (std::size_t k = 0; k < out.steps.size(); ++k) {
        double wx = out.steps[k].omega_x - alpha * g[k].d_omega_x;
        double wy = out.steps[k].omega_y - alpha * g[k].d_omega_y;
        const double a = std::hypot(wx, wy);
        if (a > out.omega_max) {
            wx *= out.omega_max / a;
            wy *= out.omega_max / a;
        }
        out.steps[k].omega_x = wx;
        out.steps[k].omega_y = wy;
        if (with_z) out.steps[k].delta_z -= alpha * g[k].d_delta_z;
    }
    return out;
}

double step_distance2(const bloch::ControlPulse& a, const bloch::ControlPulse& b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.steps.size(); ++k) {
        const double dx = a.steps[k].omega_x - b.steps[k].omega_x;
        const double dy = a.steps[k].omega_y - b.steps[k].omega_y;
        const double dz = a.steps[k].delta_z - b.steps[k].delta_z;
        acc += dx * dx + dy * dy + dz * dz;
    }
    return acc;
}

}  // namespace

OptimizeResult optimize(const bloch::ControlPulse& initial,
                        const TargetProfile& target, const GrapeConfig& config) {
    initial.validate();
    target.validate();
    config.validate();

    OptimizeResult res;
    res.pulse = initial;
    double j = infidelity(res.pulse, target, config);
    auto g = gradient(res.pulse, target, config);
    const bool with_z = config.optimize_detuning_channel;
    res.trace.iterations.push_back({0, j, grad_norm_l2(g, with_z), 0.0});

    if (j == 0.0 || grad_norm_inf(g, with_z) == 0.0) {
        // already a stationary point: return the input untouched
        res.trace.converged = true;
        return res;
    }

    const auto& ls = config.line_search;
    for (int iter = 1; iter <= config.max_iterations; ++iter) {
        const double ginf = grad_norm_inf(g, with_z);
        if (ginf == 0.0) {
            res.trace.converged = true;
            break;
        }
        double alpha = ls.initial_step * res.pulse.omega_max / ginf;
        bloch::ControlPulse trial;
        double j_trial = j;
        bool accepted = false;
        for (int bt = 0; bt < ls.max_backtracks; ++bt) {
            trial = take_step(res.pulse, g, alpha, with_z);
            const double dist2 = step_distance2(trial, res.pulse);
            if (dist2 == 0.0) break;  // projection ate the whole step
            j_trial = infidelity(trial, target, config);
            // Armijo with the projected step: decrease proportional to the
            // realized displacement, which matches c*alpha*|g|^2 when the
            // clip is inactive
            if (j_trial <= j - ls.sufficient_decrease / alpha * dist2) {
                accepted = true;
                break;
            }
            alpha *= ls.shrink;
        }
        if (!accepted) {
            res.trace.stalled = true;
            break;
        }
        const double rel = (j - j_trial) / j;
        res.pulse = trial;
        j = j_trial;
        g = gradient(res.pulse, target, config);
        res.trace.iterations.push_back({iter, j, grad_norm_l2(g, with_z), alpha});
        if (rel < config.convergence_tol || j == 0.0) {
            res.trace.converged = true;
            break;
        }
    }
    return res;
}

}  // namespace gratmag::grape

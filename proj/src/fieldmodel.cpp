#include "gratmag/fieldmodel.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "gratmag/parallel.hpp"

namespace gratmag::field {

void TipFieldModel::validate() const {
    if (!std::isfinite(strength)) throw std::invalid_argument("tip model: strength must be finite");
    if (!(singularity_epsilon > 0.0)) {
        throw std::invalid_argument("tip model: singularity_epsilon must be > 0");
    }
}

void SensorGeometry::validate() const {
    if (std::abs(nv_axis.norm() - 1.0) > 1e-9) {
        throw std::invalid_argument("geometry: nv_axis must be a unit vector");
    }
    if (!std::isfinite(bias_field)) throw std::invalid_argument("geometry: bias must be finite");
}

double ScanGrid::x_at(int ix) const {
    if (nx < 2) return 0.0;
    return -0.5 * x_range + x_range * static_cast<double>(ix) / static_cast<double>(nx - 1);
}

double ScanGrid::y_at(int iy) const {
    if (ny < 2) return 0.0;
    return -0.5 * y_range + y_range * static_cast<double>(iy) / static_cast<double>(ny - 1);
}

void ScanGrid::validate() const {
    if (nx < 1 || ny < 1) throw std::invalid_argument("scan grid: nx and ny must be >= 1");
    if (nx > 1 && !(x_range > 0.0)) throw std::invalid_argument("scan grid: x_range must be > 0");
    if (ny > 1 && !(y_range > 0.0)) throw std::invalid_argument("scan grid: y_range must be > 0");
    if (!std::isfinite(lift_height)) throw std::invalid_argument("scan grid: lift must be finite");
}

void FieldMap::validate() const {
    grid.validate();
    const std::size_t n = static_cast<std::size_t>(grid.nx) * static_cast<std::size_t>(grid.ny);
    if (b.size() != n || mask.size() != n) {
        throw std::invalid_argument("field map: array lengths must match the grid");
    }
}

Eigen::Vector3d tip_field_at(const TipFieldModel& model,
                             const Eigen::Vector3d& pole_position,
                             const Eigen::Vector3d& point) {
    model.validate();
    const Eigen::Vector3d r = point - pole_position;
    const double dist = r.norm();
    if (dist < model.singularity_epsilon) {
        throw std::domain_error("tip field: evaluation point inside the singularity guard");
    }
    const double inv = (model.variant == TipVariant::monopole)
                           ? 1.0 / (dist * dist * dist)  // strength * R / |R|^3
                           : 1.0 / (dist * dist);        // strength * R / |R|^2
    return model.strength * inv * r;
}

FieldMap field_map(const TipFieldModel& model, const SensorGeometry& geom,
                   const ScanGrid& grid, int threads) {
    model.validate();
    geom.validate();
    grid.validate();
    FieldMap out;
    out.grid = grid;
    const std::size_t n = static_cast<std::size_t>(grid.nx) * static_cast<std::size_t>(grid.ny);
    out.b.resize(n);
    out.mask.assign(n, 1);
    parallel_for(n, threads, [&](std::size_t p) {
        const int ix = static_cast<int>(p % static_cast<std::size_t>(grid.nx));
        const int iy = static_cast<int>(p / static_cast<std::size_t>(grid.nx));
        const Eigen::Vector3d apex(grid.x_at(ix), grid.y_at(iy), grid.lift_height);
        const Eigen::Vector3d pole = apex + model.tip_offset;
        if ((geom.nv_position - pole).norm() < model.singularity_epsilon) {
            // a singular scan position masks its own pixel, not the whole map
            out.b[p] = 0.0;
            out.mask[p] = 0;
            return;
        }
        const Eigen::Vector3d bvec = tip_field_at(model, pole, geom.nv_position);
        out.b[p] = bvec.dot(geom.nv_axis) + geom.bias_field;
    });
    return out;
}

namespace {

// Residual and 5-column Jacobian rows (strength, offset xyz, bias) for a
// parameter vector; returns false when some pixel falls inside the
// singularity guard.
bool evaluate(const FieldMap& obs, TipVariant family, const SensorGeometry& geom,
              const Eigen::Matrix<double, 5, 1>& theta, double eps,
              Eigen::VectorXd* residual, Eigen::MatrixXd* jac) {
    const double s = theta[0];
    const Eigen::Vector3d offset(theta[1], theta[2], theta[3]);
    const double bias = theta[4];
    const double q = (family == TipVariant::monopole) ? 3.0 : 2.0;
    std::size_t row = 0;
    for (int iy = 0; iy < obs.grid.ny; ++iy) {
        for (int ix = 0; ix < obs.grid.nx; ++ix) {
            const std::size_t p = obs.index(ix, iy);
            if (!obs.mask[p]) continue;
            const Eigen::Vector3d pole =
                Eigen::Vector3d(obs.grid.x_at(ix), obs.grid.y_at(iy), obs.grid.lift_height) +
                offset;
            const Eigen::Vector3d r = geom.nv_position - pole;
            const double dist = r.norm();
            if (dist < eps) return false;
            const double invq = std::pow(dist, -q);
            const double u = r.dot(geom.nv_axis);
            (*residual)[row] = s * u * invq + bias - obs.b[p];
            if (jac) {
                // db/dR = s (n/|R|^q - q u R / |R|^{q+2}); offset moves R by -1
                const Eigen::Vector3d db_dr =
                    s * (geom.nv_axis * invq - q * u * invq / (dist * dist) * r);
                (*jac)(row, 0) = u * invq;
                (*jac)(row, 1) = -db_dr.x();
                (*jac)(row, 2) = -db_dr.y();
                (*jac)(row, 3) = -db_dr.z();
                (*jac)(row, 4) = 1.0;
            }
            ++row;
        }
    }
    return true;
}

}  // namespace

FitResult fit_tip_model(const FieldMap& observed, TipVariant family,
                        const SensorGeometry& geom, const FitInit& init,
                        const FitOptions& opts) {
    observed.validate();
    geom.validate();
    if (opts.max_iterations < 1) throw std::invalid_argument("fit: max_iterations must be >= 1");
    std::size_t nvalid = 0;
    for (auto m : observed.mask) nvalid += m;
    if (nvalid < 5) throw std::invalid_argument("fit: needs at least 5 valid pixels");

    const double eps = 1e-9;
    Eigen::Matrix<double, 5, 1> theta;
    theta << init.strength, init.tip_offset.x(), init.tip_offset.y(), init.tip_offset.z(),
        init.bias;
    Eigen::VectorXd residual(nvalid);
    Eigen::MatrixXd jac(nvalid, 5);
    if (!evaluate(observed, family, geom, theta, eps, &residual, nullptr)) {
        throw std::invalid_argument("fit: initial guess puts a pixel inside the singularity guard");
    }
    double cost = residual.squaredNorm();

    FitResult res;
    double mu = 1e-3;
    int iter = 0;
    for (; iter < opts.max_iterations; ++iter) {
        if (cost == 0.0) {
            res.converged = true;
            break;
        }
        evaluate(observed, family, geom, theta, eps, &residual, &jac);
        const Eigen::Matrix<double, 5, 5> h = jac.transpose() * jac;
        const Eigen::Matrix<double, 5, 1> g = jac.transpose() * residual;
        if (g.lpNorm<Eigen::Infinity>() == 0.0) {
            res.converged = true;
            break;
        }
        bool accepted = false;
        Eigen::VectorXd trial_res(nvalid);
        for (int attempt = 0; attempt < 40; ++attempt) {
            // Marquardt damping scales with diag(H), keeping the step sane
            // across wildly different parameter magnitudes
            Eigen::Matrix<double, 5, 5> damped = h;
            for (int k = 0; k < 5; ++k) {
                damped(k, k) += mu * std::max(h(k, k), 1e-300);
            }
            const Eigen::Matrix<double, 5, 1> delta = damped.ldlt().solve(-g);
            const Eigen::Matrix<double, 5, 1> trial = theta + delta;
            double trial_cost = std::numeric_limits<double>::infinity();
            if (evaluate(observed, family, geom, trial, eps, &trial_res, nullptr)) {
                trial_cost = trial_res.squaredNorm();
            }
            if (trial_cost < cost) {
                const double drop = cost - trial_cost;
                theta = trial;
                cost = trial_cost;
                mu *= 0.5;
                accepted = true;
                if (drop <= opts.tol * std::max(cost, 1e-300)) res.converged = true;
                break;
            }
            mu *= 3.0;
        }
        // Damping exhausted without an accepting step: no representable move
        // lowers the cost, so the fit is pinned at a numerical minimum.
        if (!accepted) res.converged = true;
        if (res.converged) break;
    }

    res.model.variant = family;
    res.model.strength = theta[0];
    res.model.tip_offset = Eigen::Vector3d(theta[1], theta[2], theta[3]);
    res.bias = theta[4];
    res.rms_residual = std::sqrt(cost / static_cast<double>(nvalid));
    res.iterations = iter;
    return res;
}

bool fit_residuals(const FieldMap& observed, TipVariant family,
                   const SensorGeometry& geom,
                   const Eigen::Matrix<double, 5, 1>& theta,
                   double singularity_epsilon, Eigen::VectorXd* residual,
                   Eigen::MatrixXd* jacobian) {
    observed.validate();
    geom.validate();
    std::size_t nvalid = 0;
    for (auto m : observed.mask) nvalid += m;
    Eigen::VectorXd local;
    Eigen::VectorXd* res = residual ? residual : &local;
    res->resize(static_cast<Eigen::Index>(nvalid));
    if (jacobian) jacobian->resize(static_cast<Eigen::Index>(nvalid), 5);
    return evaluate(observed, family, geom, theta, singularity_epsilon, res, jacobian);
}

}  // namespace gratmag::field

#ifndef GRATMAG_FIELDMODEL_HPP
#define GRATMAG_FIELDMODEL_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace gratmag::field {

enum class TipVariant { monopole, pseudopole };

// Point-pole description of the magnetic tip. The monopole field falls off
// as strength * R_hat / R^2 (strength in T*m^2); the pseudopole keeps the
// radial direction but falls off as strength * R_hat / R (strength in T*m),
// the slower decay of an extended pole distribution.
struct TipFieldModel {
    TipVariant variant = TipVariant::monopole;
    double strength = 0.0;
    Eigen::Vector3d tip_offset = Eigen::Vector3d::Zero();  // pole minus apex, m
    double singularity_epsilon = 1e-9;                     // m

    void validate() const;
};

struct SensorGeometry {
    Eigen::Vector3d nv_position = Eigen::Vector3d::Zero();
    Eigen::Vector3d nv_axis = Eigen::Vector3d::UnitZ();  // unit vector
    double bias_field = 0.0;                             // T, along nv_axis

    void validate() const;
};

// Raster of tip apex positions: pixel (ix, iy) puts the apex at
// (x_at(ix), y_at(iy), lift_height) in the sensor frame.
struct ScanGrid {
    double x_range = 0.0;  // m, full extent
    double y_range = 0.0;
    int nx = 0;
    int ny = 0;
    double lift_height = 0.0;  // m

    double x_at(int ix) const;
    double y_at(int iy) const;
    void validate() const;
};

// Projected field per pixel, row-major (iy * nx + ix). mask = 0 marks pixels
// with no usable value (their b entry is unspecified).
struct FieldMap {
    ScanGrid grid;
    std::vector<double> b;  // T
    std::vector<std::uint8_t> mask;

    std::size_t index(int ix, int iy) const {
        return static_cast<std::size_t>(iy) * static_cast<std::size_t>(grid.nx) +
               static_cast<std::size_t>(ix);
    }
    void validate() const;
};

// Vector field of the pole at pole_position evaluated at point. Throws
// std::domain_error when point is within singularity_epsilon of the pole.
Eigen::Vector3d tip_field_at(const TipFieldModel& model,
                             const Eigen::Vector3d& pole_position,
                             const Eigen::Vector3d& point);

// b(ix, iy) = B . nv_axis + bias_field with the pole at scan position plus
// tip_offset. All pixels valid; pixels are independent, so `threads` > 1
// changes nothing but wall time.
FieldMap field_map(const TipFieldModel& model, const SensorGeometry& geom,
                   const ScanGrid& grid, int threads = 1);

struct FitInit {
    double strength = 0.0;
    Eigen::Vector3d tip_offset = Eigen::Vector3d::Zero();
    double bias = 0.0;
};

struct FitOptions {
    int max_iterations = 200;
    double tol = 1e-12;  // relative cost decrease on an accepted step
};

struct FitResult {
    TipFieldModel model;
    double bias = 0.0;
    double rms_residual = 0.0;  // T, over valid pixels
    bool converged = false;
    int iterations = 0;
};

// Levenberg-Marquardt fit of (strength, tip_offset, bias) to the valid
// pixels of `observed`, analytic Jacobians throughout. Trial parameter sets
// that put a pixel inside the singularity guard are rejected, not fatal.
FitResult fit_tip_model(const FieldMap& observed, TipVariant family,
                        const SensorGeometry& geom, const FitInit& init,
                        const FitOptions& opts = {});

// Residual (model minus observed) and analytic Jacobian rows over the valid
// pixels, theta = (strength, offset_x, offset_y, offset_z, bias); the fit
// iterates on exactly these rows. Outputs are resized; either may be null.
// Returns false when a valid pixel falls inside the singularity guard, with
// outputs unspecified.
bool fit_residuals(const FieldMap& observed, TipVariant family,
                   const SensorGeometry& geom,
                   const Eigen::Matrix<double, 5, 1>& theta,
                   double singularity_epsilon, Eigen::VectorXd* residual,
                   Eigen::MatrixXd* jacobian);

}  // namespace gratmag::field

#endif

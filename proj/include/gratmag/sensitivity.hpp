#ifndef GRATMAG_SENSITIVITY_HPP
#define GRATMAG_SENSITIVITY_HPP

#include <functional>
#include <vector>

#include "gratmag/grape.hpp"

namespace gratmag::sens {

struct SensitivityParams {
    double c0 = 0.0;           // bare fringe contrast, dimensionless
    double s0 = 0.0;           // photon rate at full fluorescence, counts/s
    double t_readout = 0.0;    // s, photon collection window per cycle
    double t_seq = 0.0;        // s, full cycle time
    double t2_star = 0.0;      // s, inhomogeneous dephasing time
    double gamma = 0.0;        // Hz per tesla

    double duty() const { return t_readout / t_seq; }
    void validate() const;
};

struct SensitivityCurve {
    std::vector<double> spacing_hz;
    std::vector<double> contrast;
    std::vector<double> eta;  // T per sqrt(Hz)
};

// Shared Gaussian envelope exp(-x^2/2). contrast() and fid_contrast() both
// route through it, so the reciprocal pair c(1/t) == c(t) holds to the ulp.
double gauss_decay(double x);

// Dephased fringe contrast at dip spacing delta_hz: c0 * exp(-1/(2 delta^2 T2*^2)).
double contrast(double delta_hz, const SensitivityParams& p);

// Free-induction envelope c0 * exp(-t^2 / (2 T2*^2)).
double fid_contrast(double t_s, const SensitivityParams& p);

// Shot-noise-limited field sensitivity at dip spacing delta_hz:
//   eta = delta / (gamma * contrast(delta) * sqrt(s0 * duty))
double eta(double delta_hz, const SensitivityParams& p);

// Spacing minimizing eta, closed form 1/t2_star.
double optimal_spacing(const SensitivityParams& p);

// Addressable field span of a grating: ((n_dips-1)*spacing + dip_width)/gamma.
double dynamic_range(const grape::GratingSpec& spec, const SensitivityParams& p);

SensitivityCurve sweep(const std::vector<double>& spacing_hz,
                       const SensitivityParams& p);

// Golden-section minimizer on [lo, hi], used to cross-check the closed-form
// optimum in tests.
double golden_section_min(const std::function<double(double)>& f, double lo,
                          double hi, double tol);

}  // namespace gratmag::sens

#endif

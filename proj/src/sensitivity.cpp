#include "gratmag/sensitivity.hpp"

#include <cmath>
#include <stdexcept>

namespace gratmag::sens {

void SensitivityParams::validate() const {
    if (!(c0 > 0.0) || c0 > 1.0) throw std::invalid_argument("sensitivity: c0 must lie in (0, 1]");
    if (!(s0 > 0.0)) throw std::invalid_argument("sensitivity: s0 must be > 0");
    if (!(t_readout > 0.0)) throw std::invalid_argument("sensitivity: t_readout must be > 0");
    if (!(t_seq >= t_readout)) throw std::invalid_argument("sensitivity: t_seq must be >= t_readout");
    if (!(t2_star > 0.0)) throw std::invalid_argument("sensitivity: t2_star must be > 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("sensitivity: gamma must be > 0");
}

double gauss_decay(double x) { return std::exp(-0.5 * x * x); }

double contrast(double delta_hz, const SensitivityParams& p) {
    p.validate();
    if (!(delta_hz > 0.0)) throw std::invalid_argument("sensitivity: spacing must be > 0");
    return p.c0 * gauss_decay(1.0 / (delta_hz * p.t2_star));
}

double fid_contrast(double t_s, const SensitivityParams& p) {
    p.validate();
    if (t_s < 0.0) throw std::invalid_argument("sensitivity: time must be >= 0");
    return p.c0 * gauss_decay(t_s / p.t2_star);
}

double eta(double delta_hz, const SensitivityParams& p) {
    const double c = contrast(delta_hz, p);
    return delta_hz / (p.gamma * c * std::sqrt(p.s0 * p.duty()));
}

double optimal_spacing(const SensitivityParams& p) {
    p.validate();
    return 1.0 / p.t2_star;
}

double dynamic_range(const grape::GratingSpec& spec, const SensitivityParams& p) {
    spec.validate();
    p.validate();
    return (static_cast<double>(spec.n_dips - 1) * spec.spacing_hz + spec.dip_width_hz) /
           p.gamma;
}

SensitivityCurve sweep(const std::vector<double>& spacing_hz,
                       const SensitivityParams& p) {
    SensitivityCurve out;
    out.spacing_hz = spacing_hz;
    out.contrast.reserve(spacing_hz.size());
    out.eta.reserve(spacing_hz.size());
    for (double d : spacing_hz) {
        out.contrast.push_back(contrast(d, p));
        out.eta.push_back(eta(d, p));
    }
    return out;
}

double golden_section_min(const std::function<double(double)>& f, double lo,
                          double hi, double tol) {
    if (!(hi > lo)) throw std::invalid_argument("golden section: hi must exceed lo");
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace gratmag::sens

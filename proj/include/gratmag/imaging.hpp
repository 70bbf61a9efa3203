#ifndef GRATMAG_IMAGING_HPP
#define GRATMAG_IMAGING_HPP

#include <cstdint>
#include <vector>

#include "gratmag/bloch.hpp"
#include "gratmag/fieldmodel.hpp"

namespace gratmag::img {

// Normalized fluorescence raster: 1.0 is the far-off-resonance level, dips
// reach 1 - c0. Masked pixels carry no usable value.
struct FringeImage {
    field::ScanGrid grid;
    std::vector<double> fluorescence;
    std::vector<std::uint8_t> mask;

    std::size_t index(int ix, int iy) const {
        return static_cast<std::size_t>(iy) * static_cast<std::size_t>(grid.nx) +
               static_cast<std::size_t>(ix);
    }
    void validate() const;
};

// Expected fluorescence vs detuning, piecewise-linear on the profile grid.
// Detunings are rad/s internally, like every other in-memory frequency;
// files and CLI surfaces speak Hz.
struct ResponseCurve {
    bloch::DetuningGrid grid;
    std::vector<double> value;
    double c0 = 1.0;

    void validate() const;
    bool in_band(double delta_rad) const;
    // Linear interpolation; throws std::domain_error outside the band.
    double eval(double delta_rad) const;
    // Centered difference with step = mean grid spacing (one-sided at the
    // band edges).
    double derivative(double delta_rad) const;
    // All detunings where the curve crosses level f, ascending.
    std::vector<double> preimages(double f) const;
    // Local minima deeper than halfway between the extremes.
    std::vector<double> dip_centers() const;
    // Median gap between adjacent dip centers; throws when fewer than two.
    double dip_spacing() const;
};

struct NoiseModel {
    enum class Kind { none, poisson };
    Kind kind = Kind::none;
    double s0 = 0.0;     // counts/s at unit response
    double dwell = 0.0;  // s per pixel
};

struct Anchor {
    int px = 0;
    int py = 0;
    double b_tesla = 0.0;
};

struct ReconstructionConfig {
    double gamma = 0.0;              // Hz per tesla
    double carrier_offset_hz = 0.0;  // delta_hz = gamma * b - carrier_offset_hz
    std::vector<Anchor> seed_anchors;
    double smoothness_weight = 0.0;  // lambda, units 1/tesla^2; 0 = independent pixels
    int max_iterations = 50;
    double convergence_tol = 1e-12;  // relative objective decrease
    double low_info_fraction = 0.05; // response-slope fraction flagging flat pixels
    NoiseModel noise;
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const;
};

// response(delta) = 1 - c0 * (1 - mz_dephased(delta)) / 2, with the profile
// first pushed through dephase_profile(t2_star).
ResponseCurve build_response(const bloch::ExcitationProfile& profile,
                             double t2_star, double c0);

// Per pixel: delta = gamma*b - carrier (Hz); in-band pixels get
// response(delta), out-of-band or invalid pixels are masked. Poisson noise,
// when enabled, draws counts ~ Poisson(s0*dwell*response) from a per-pixel
// stream derived from (seed, ix, iy), so any thread count and evaluation
// order produce the identical image.
FringeImage simulate_scan(const field::FieldMap& truth,
                          const ResponseCurve& response,
                          const ReconstructionConfig& config);

struct AssignResult {
    field::FieldMap map;
    // valid image pixels in components no anchor reaches (masked out)
    std::size_t unreached = 0;
};

// Continuity unwrapping: each anchor claims its pixel at the response
// preimage nearest the anchor's field value, then a best-first frontier
// grows outward, committing whichever candidate best matches the value
// extrapolated through its already-assigned neighbor, followed by repair
// sweeps that re-pick preimages against the 8-neighbor mean. Deterministic:
// the frontier is totally ordered by (mismatch, pixel index, value). Throws
// unless at least one anchor sits on a valid pixel.
AssignResult assign_fringes(const FringeImage& image, const ResponseCurve& response,
                            const ReconstructionConfig& config);

struct ReconstructResult {
    field::FieldMap map;
    std::vector<std::uint8_t> low_information;  // per pixel, same indexing
    std::vector<double> objective;              // accepted iterations, non-increasing
    bool converged = false;
    int iterations = 0;
};

// Damped Gauss-Newton on
//   sum_valid (F - response(gamma*b - carrier))^2
//     + smoothness_weight * sum_neighbors (b_i - b_j)^2
// starting from `initial`, response slope by centered difference. Pixels
// where the response is locally flat (slope below low_info_fraction of the
// curve's max slope) are flagged low-information.
ReconstructResult reconstruct(const FringeImage& image, const ResponseCurve& response,
                              const field::FieldMap& initial,
                              const ReconstructionConfig& config);

struct DisambiguateResult {
    field::FieldMap map;
    // chosen branch offset (integer multiples of the dip spacing) per
    // connected valid component, in row-major seed order
    std::vector<int> branch_offsets;
};

// Anchor-free branch assignment from a grating pair shifted by `shift_hz`:
// each connected component is flood-filled from its deepest-fluorescence
// pixel, then the integer branch offset is chosen so both images' predicted
// fluorescence (and band membership) best match the observations. Throws
// unless 0 < shift < dip spacing of response_a.
DisambiguateResult disambiguate_shifted(const FringeImage& image_a,
                                        const FringeImage& image_b,
                                        const ResponseCurve& response_a,
                                        const ResponseCurve& response_b,
                                        double shift_hz,
                                        const ReconstructionConfig& config);

// b decremented by bias on valid pixels; mask untouched.
field::FieldMap subtract_bias(const field::FieldMap& map, double bias_tesla);

}  // namespace gratmag::img

#endif

#include "gratmag/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <stdexcept>

#include <Eigen/Sparse>

#include "gratmag/parallel.hpp"
#include "gratmag/rng.hpp"

namespace gratmag::img {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// squared-residual cost of a pixel whose predicted band membership
// contradicts the observation; larger than any in-band residual
constexpr double kMismatchPenalty = 4.0;

double nearest_or(const std::vector<double>& ascending, double target,
                  double fallback) {
    if (ascending.empty()) return fallback;
    double best = ascending.front();
    double dist = std::abs(best - target);
    for (double c : ascending) {
        const double d = std::abs(c - target);
        if (d < dist) {  // strict: ties keep the lower detuning
            dist = d;
            best = c;
        }
    }
    return best;
}

}  // namespace

void FringeImage::validate() const {
    grid.validate();
    const std::size_t n = static_cast<std::size_t>(grid.nx) * static_cast<std::size_t>(grid.ny);
    if (fluorescence.size() != n || mask.size() != n) {
        throw std::invalid_argument("image: array lengths must match the grid");
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (mask[p] && (!std::isfinite(fluorescence[p]) || fluorescence[p] < 0.0)) {
            throw std::invalid_argument("image: valid pixels need finite fluorescence >= 0");
        }
    }
}

void ResponseCurve::validate() const {
    grid.validate();
    if (value.size() != grid.size()) {
        throw std::invalid_argument("response: array length must match the grid");
    }
    if (!(c0 > 0.0) || c0 > 1.0) throw std::invalid_argument("response: c0 must lie in (0, 1]");
    for (double v : value) {
        if (v < 1.0 - c0 - 1e-9 || v > 1.0 + 1e-9) {
            throw std::invalid_argument("response: values must lie in [1 - c0, 1]");
        }
    }
}

bool ResponseCurve::in_band(double delta_rad) const {
    return delta_rad >= grid.front() && delta_rad <= grid.back();
}

double ResponseCurve::eval(double delta_rad) const {
    if (!in_band(delta_rad)) {
        throw std::domain_error("response: detuning outside the pulse bandwidth");
    }
    const auto& d = grid.values;
    const auto it = std::upper_bound(d.begin(), d.end(), delta_rad);
    if (it == d.begin()) return value.front();
    if (it == d.end()) return value.back();
    const std::size_t j = static_cast<std::size_t>(it - d.begin());
    const double t = (delta_rad - d[j - 1]) / (d[j] - d[j - 1]);
    return value[j - 1] + t * (value[j] - value[j - 1]);
}

double ResponseCurve::derivative(double delta_rad) const {
    const double h = (grid.back() - grid.front()) / static_cast<double>(grid.size() - 1);
    const double lo = std::max(grid.front(), delta_rad - h);
    const double hi = std::min(grid.back(), delta_rad + h);
    return (eval(hi) - eval(lo)) / (hi - lo);
}

std::vector<double> ResponseCurve::preimages(double f) const {
    const auto& d = grid.values;
    std::vector<double> out;
    for (std::size_t j = 0; j + 1 < d.size(); ++j) {
        const double a = value[j] - f, b = value[j + 1] - f;
        if (a == 0.0 && b == 0.0) continue;  // flat run at the level
        if (a == 0.0) {
            if (out.empty() || out.back() != d[j]) out.push_back(d[j]);
        } else if (a * b < 0.0) {
            const double t = a / (a - b);
            const double x = d[j] + t * (d[j + 1] - d[j]);
            if (out.empty() || out.back() != x) out.push_back(x);
        }
    }
    if (!value.empty() && value.back() == f) {
        if (out.empty() || out.back() != d.back()) out.push_back(d.back());
    }
    return out;
}

std::vector<double> ResponseCurve::dip_centers() const {
    const auto& v = value;
    double lo = v[0], hi = v[0];
    for (double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const double cut = 0.5 * (lo + hi);
    std::vector<double> out;
    std::size_t i = 1;
    while (i + 1 < v.size()) {
        if (v[i] < v[i - 1]) {
            std::size_t j = i;
            while (j + 1 < v.size() && v[j + 1] == v[i]) ++j;
            if (j + 1 < v.size() && v[j + 1] > v[i] && v[i] < cut) {
                out.push_back(grid.values[(i + j) / 2]);
            }
            i = j + 1;
        } else {
            ++i;
        }
    }
    return out;
}

double ResponseCurve::dip_spacing() const {
    const auto centers = dip_centers();
    if (centers.size() < 2) {
        throw std::runtime_error("response: needs at least two dips to define a spacing");
    }
    std::vector<double> gaps(centers.size() - 1);
    for (std::size_t i = 0; i + 1 < centers.size(); ++i) gaps[i] = centers[i + 1] - centers[i];
    std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
    return gaps[gaps.size() / 2];
}

void ReconstructionConfig::validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("recon config: gamma must be > 0");
    if (!std::isfinite(carrier_offset_hz)) {
        throw std::invalid_argument("recon config: carrier_offset must be finite");
    }
    if (smoothness_weight < 0.0) {
        throw std::invalid_argument("recon config: smoothness_weight must be >= 0");
    }
    if (max_iterations < 1) throw std::invalid_argument("recon config: max_iterations must be >= 1");
    if (!(convergence_tol > 0.0)) throw std::invalid_argument("recon config: convergence_tol must be > 0");
    if (low_info_fraction < 0.0 || low_info_fraction >= 1.0) {
        throw std::invalid_argument("recon config: low_info_fraction must lie in [0, 1)");
    }
    if (noise.kind == NoiseModel::Kind::poisson && (!(noise.s0 > 0.0) || !(noise.dwell > 0.0))) {
        throw std::invalid_argument("recon config: poisson noise needs s0 > 0 and dwell > 0");
    }
}

ResponseCurve build_response(const bloch::ExcitationProfile& profile,
                             double t2_star, double c0) {
    if (!(c0 > 0.0) || c0 > 1.0) throw std::invalid_argument("response: c0 must lie in (0, 1]");
    const auto dephased = bloch::dephase_profile(profile, t2_star);
    ResponseCurve out;
    out.grid = dephased.grid;
    out.c0 = c0;
    out.value.resize(dephased.mz.size());
    for (std::size_t i = 0; i < dephased.mz.size(); ++i) {
        out.value[i] = 1.0 - c0 * (1.0 - dephased.mz[i]) / 2.0;
    }
    return out;
}

FringeImage simulate_scan(const field::FieldMap& truth, const ResponseCurve& response,
                          const ReconstructionConfig& config) {
    truth.validate();
    response.validate();
    config.validate();
    FringeImage out;
    out.grid = truth.grid;
    const std::size_t n = truth.b.size();
    out.fluorescence.assign(n, kNan);
    out.mask.assign(n, 0);
    const bool noisy = config.noise.kind == NoiseModel::Kind::poisson;
    const double scale = noisy ? config.noise.s0 * config.noise.dwell : 0.0;
    const auto nx = static_cast<std::size_t>(truth.grid.nx);
    parallel_for(n, config.threads, [&](std::size_t p) {
        if (!truth.mask[p]) return;
        const double delta =
            kTwoPi * (config.gamma * truth.b[p] - config.carrier_offset_hz);
        if (!response.in_band(delta)) return;
        double f = response.eval(delta);
        if (noisy) {
            auto stream = substream(config.seed, p % nx, p / nx);
            f = static_cast<double>(poisson_sample(stream, scale * f)) / scale;
        }
        out.fluorescence[p] = f;
        out.mask[p] = 1;
    });
    return out;
}

namespace {

// Confidence-ordered continuity fill. The frontier is a min-heap keyed by
// how far a pixel's nearest response preimage lands from its extrapolated
// continuation, so contour-hugging commits (cost ~ 0 along iso-field lines)
// happen first and each closed fringe is crossed where the crossing is
// gentlest, not wherever a FIFO wavefront happens to arrive. The target
// extrapolates linearly through the committing pixel's upstream neighbor;
// that momentum carries the fill over a dip bottom onto the far flank,
// where the plain nearest preimage would mirror back onto the near one.
// The (cost, pixel, value) heap order is total, so the fill is
// deterministic for fixed seeds.
void flood_assign(const FringeImage& image, const ResponseCurve& response,
                  std::vector<double>& delta, std::vector<std::uint8_t>& assigned,
                  const std::vector<std::size_t>& seeds) {
    const int nx = image.grid.nx, ny = image.grid.ny;
    struct Cand {
        double cost;
        std::size_t pixel;
        double value;
        bool operator>(const Cand& o) const {
            if (cost != o.cost) return cost > o.cost;
            if (pixel != o.pixel) return pixel > o.pixel;
            return value > o.value;
        }
    };
    std::priority_queue<Cand, std::vector<Cand>, std::greater<Cand>> heap;

    auto offer_neighbors = [&](std::size_t p) {
        const int ix = static_cast<int>(p % static_cast<std::size_t>(nx));
        const int iy = static_cast<int>(p / static_cast<std::size_t>(nx));
        const int nbx[4] = {ix + 1, ix - 1, ix, ix};
        const int nby[4] = {iy, iy, iy + 1, iy - 1};
        for (int k = 0; k < 4; ++k) {
            if (nbx[k] < 0 || nbx[k] >= nx || nby[k] < 0 || nby[k] >= ny) continue;
            const std::size_t q = image.index(nbx[k], nby[k]);
            if (!image.mask[q] || assigned[q]) continue;
            const int ux = 2 * ix - nbx[k], uy = 2 * iy - nby[k];
            double target = delta[p];
            if (ux >= 0 && ux < nx && uy >= 0 && uy < ny) {
                const std::size_t u = image.index(ux, uy);
                if (assigned[u]) target = 2.0 * delta[p] - delta[u];
            }
            const double v =
                nearest_or(response.preimages(image.fluorescence[q]), target, target);
            heap.push({std::abs(v - target), q, v});
        }
    };

    for (std::size_t s : seeds) offer_neighbors(s);
    while (!heap.empty()) {
        const Cand c = heap.top();
        heap.pop();
        if (assigned[c.pixel]) continue;  // a cheaper commit claimed it already
        delta[c.pixel] = c.value;
        assigned[c.pixel] = 1;
        offer_neighbors(c.pixel);
    }
}

// Gauss-Seidel cleanup: re-picks each pixel's preimage against its assigned
// 8-neighborhood, eroding mirror-flipped patches the fill can leave where a
// front crossed a fringe at a bad angle. Row-major sweeps, ties keep the
// current value, so the result stays deterministic.
void repair_assign(const FringeImage& image, const ResponseCurve& response,
                   std::vector<double>& delta,
                   const std::vector<std::uint8_t>& assigned) {
    const int nx = image.grid.nx, ny = image.grid.ny;
    for (int sweep = 0; sweep < 100; ++sweep) {
        std::size_t changed = 0;
        for (int iy = 0; iy < ny; ++iy) {
            for (int ix = 0; ix < nx; ++ix) {
                const std::size_t p = image.index(ix, iy);
                if (!assigned[p]) continue;
                double num = 0.0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy) continue;
                        const int jx = ix + dx, jy = iy + dy;
                        if (jx < 0 || jx >= nx || jy < 0 || jy >= ny) continue;
                        const std::size_t q = image.index(jx, jy);
                        if (!assigned[q]) continue;
                        num += delta[q];
                        ++cnt;
                    }
                }
                if (!cnt) continue;
                const double mean = num / static_cast<double>(cnt);
                const double v =
                    nearest_or(response.preimages(image.fluorescence[p]), mean, delta[p]);
                if (std::abs(v - mean) < std::abs(delta[p] - mean)) {  // strict: ties stay
                    delta[p] = v;
                    ++changed;
                }
            }
        }
        if (!changed) break;
    }
}

double delta_to_field(double delta_rad, const ReconstructionConfig& config) {
    return (delta_rad / kTwoPi + config.carrier_offset_hz) / config.gamma;
}

double field_to_delta(double b, const ReconstructionConfig& config) {
    return kTwoPi * (config.gamma * b - config.carrier_offset_hz);
}

}  // namespace

AssignResult assign_fringes(const FringeImage& image, const ResponseCurve& response,
                            const ReconstructionConfig& config) {
    image.validate();
    response.validate();
    config.validate();
    if (config.seed_anchors.empty()) {
        throw std::invalid_argument("assign: needs at least one seed anchor");
    }
    const std::size_t n = image.fluorescence.size();
    std::vector<double> delta(n, 0.0);
    std::vector<std::uint8_t> assigned(n, 0);
    std::vector<std::size_t> seeds;
    for (const Anchor& a : config.seed_anchors) {
        if (a.px < 0 || a.px >= image.grid.nx || a.py < 0 || a.py >= image.grid.ny) {
            throw std::invalid_argument("assign: anchor pixel outside the grid");
        }
        const std::size_t p = image.index(a.px, a.py);
        if (!image.mask[p] || assigned[p]) continue;
        const double want = field_to_delta(a.b_tesla, config);
        delta[p] = nearest_or(response.preimages(image.fluorescence[p]), want, want);
        assigned[p] = 1;
        seeds.push_back(p);
    }
    if (seeds.empty()) {
        throw std::invalid_argument("assign: no seed anchor lies on a valid pixel");
    }
    flood_assign(image, response, delta, assigned, seeds);
    repair_assign(image, response, delta, assigned);

    AssignResult res;
    res.map.grid = image.grid;
    res.map.b.assign(n, 0.0);
    res.map.mask.assign(n, 0);
    for (std::size_t p = 0; p < n; ++p) {
        if (assigned[p]) {
            res.map.b[p] = delta_to_field(delta[p], config);
            res.map.mask[p] = 1;
        } else if (image.mask[p]) {
            ++res.unreached;  // disconnected region without an anchor
        }
    }
    return res;
}

ReconstructResult reconstruct(const FringeImage& image, const ResponseCurve& response,
                              const field::FieldMap& initial,
                              const ReconstructionConfig& config) {
    image.validate();
    response.validate();
    initial.validate();
    config.validate();
    if (initial.grid.nx != image.grid.nx || initial.grid.ny != image.grid.ny) {
        throw std::invalid_argument("reconstruct: initial map grid does not match the image");
    }

    const std::size_t n = image.fluorescence.size();
    std::vector<std::size_t> active;     // pixel index per unknown
    std::vector<std::ptrdiff_t> slot(n, -1);
    for (std::size_t p = 0; p < n; ++p) {
        if (image.mask[p] && initial.mask[p]) {
            slot[p] = static_cast<std::ptrdiff_t>(active.size());
            active.push_back(p);
        }
    }
    if (active.empty()) {
        throw std::invalid_argument("reconstruct: no pixel is valid in both image and initial map");
    }
    const std::size_t m = active.size();

    // work in detuning; lambda rescales from tesla^2 to rad^2/s^2
    const double to_delta = kTwoPi * config.gamma;
    const double lambda_rad = config.smoothness_weight / (to_delta * to_delta);
    std::vector<double> delta(m);
    for (std::size_t idx = 0; idx < m; ++idx) {
        delta[idx] = std::clamp(field_to_delta(initial.b[active[idx]], config),
                                response.grid.front(), response.grid.back());
    }

    // neighbor pairs (right and down) between active pixels
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (lambda_rad > 0.0) {
        for (int iy = 0; iy < image.grid.ny; ++iy) {
            for (int ix = 0; ix < image.grid.nx; ++ix) {
                const std::size_t p = image.index(ix, iy);
                if (slot[p] < 0) continue;
                if (ix + 1 < image.grid.nx && slot[p + 1] >= 0) {
                    pairs.emplace_back(static_cast<std::size_t>(slot[p]),
                                       static_cast<std::size_t>(slot[p + 1]));
                }
                const std::size_t q = p + static_cast<std::size_t>(image.grid.nx);
                if (iy + 1 < image.grid.ny && slot[q] >= 0) {
                    pairs.emplace_back(static_cast<std::size_t>(slot[p]),
                                       static_cast<std::size_t>(slot[q]));
                }
            }
        }
    }

    auto objective_at = [&](const std::vector<double>& d) {
        double s = 0.0;
        for (std::size_t idx = 0; idx < m; ++idx) {
            const double r = image.fluorescence[active[idx]] - response.eval(d[idx]);
            s += r * r;
        }
        for (const auto& [i, j] : pairs) {
            const double u = d[i] - d[j];
            s += lambda_rad * u * u;
        }
        return s;
    };

    ReconstructResult res;
    double obj = objective_at(delta);
    res.objective.push_back(obj);

    double mu = 1e-3;
    int iter = 0;
    if (obj == 0.0) {
        res.converged = true;  // exact fixed point: keep the input untouched
    } else {
        Eigen::SparseMatrix<double> h(static_cast<Eigen::Index>(m),
                                      static_cast<Eigen::Index>(m));
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(m));
        std::vector<Eigen::Triplet<double>> trip;
        for (; iter < config.max_iterations; ++iter) {
            // Gauss-Newton normal equations: diag(slope^2) + lambda * Laplacian
            rhs.setZero();
            trip.clear();
            double max_diag = 0.0;
            std::vector<double> diag(m, 0.0);
            for (std::size_t idx = 0; idx < m; ++idx) {
                const double sl = response.derivative(delta[idx]);
                const double r = image.fluorescence[active[idx]] - response.eval(delta[idx]);
                diag[idx] += sl * sl;
                rhs[static_cast<Eigen::Index>(idx)] += sl * r;  // -grad/2 of the data term
            }
            for (const auto& [i, j] : pairs) {
                diag[i] += lambda_rad;
                diag[j] += lambda_rad;
                trip.emplace_back(static_cast<int>(i), static_cast<int>(j), -lambda_rad);
                trip.emplace_back(static_cast<int>(j), static_cast<int>(i), -lambda_rad);
                const double u = delta[i] - delta[j];
                rhs[static_cast<Eigen::Index>(i)] -= lambda_rad * u;
                rhs[static_cast<Eigen::Index>(j)] += lambda_rad * u;
            }
            for (double dgg : diag) max_diag = std::max(max_diag, dgg);
            if (max_diag == 0.0) {
                res.converged = true;  // every pixel sits on a plateau
                break;
            }
            const double floor = 1e-12 * max_diag;

            bool accepted = false;
            for (int attempt = 0; attempt < 40; ++attempt) {
                trip.resize(pairs.size() * 2);
                for (std::size_t idx = 0; idx < m; ++idx) {
                    trip.emplace_back(static_cast<int>(idx), static_cast<int>(idx),
                                      diag[idx] + mu * std::max(diag[idx], floor));
                }
                h.setFromTriplets(trip.begin(), trip.end());
                Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h);
                if (solver.info() != Eigen::Success) {
                    mu *= 3.0;
                    continue;
                }
                const Eigen::VectorXd step = solver.solve(rhs);
                std::vector<double> trial(m);
                for (std::size_t idx = 0; idx < m; ++idx) {
                    trial[idx] = std::clamp(delta[idx] + step[static_cast<Eigen::Index>(idx)],
                                            response.grid.front(), response.grid.back());
                }
                const double trial_obj = objective_at(trial);
                if (trial_obj < obj) {
                    const double drop = obj - trial_obj;
                    delta = std::move(trial);
                    obj = trial_obj;
                    res.objective.push_back(obj);
                    mu *= 0.5;
                    accepted = true;
                    if (drop <= config.convergence_tol * std::max(obj, 1e-300)) {
                        res.converged = true;
                    }
                    break;
                }
                mu *= 3.0;
            }
            if (!accepted || res.converged || obj == 0.0) {
                if (obj == 0.0) res.converged = true;
                break;
            }
        }
    }
    res.iterations = iter;

    // low-information flags, relative to the curve's steepest segment
    double max_slope = 0.0;
    for (std::size_t j = 0; j + 1 < response.grid.size(); ++j) {
        max_slope = std::max(max_slope,
                             std::abs((response.value[j + 1] - response.value[j]) /
                                      (response.grid.values[j + 1] - response.grid.values[j])));
    }
    res.low_information.assign(n, 0);
    res.map.grid = image.grid;
    res.map.b.assign(n, 0.0);
    res.map.mask.assign(n, 0);
    for (std::size_t idx = 0; idx < m; ++idx) {
        const std::size_t p = active[idx];
        res.map.b[p] = delta_to_field(delta[idx], config);
        res.map.mask[p] = 1;
        if (std::abs(response.derivative(delta[idx])) <
            config.low_info_fraction * max_slope) {
            res.low_information[p] = 1;
        }
    }
    return res;
}

DisambiguateResult disambiguate_shifted(const FringeImage& image_a,
                                        const FringeImage& image_b,
                                        const ResponseCurve& response_a,
                                        const ResponseCurve& response_b,
                                        double shift_hz,
                                        const ReconstructionConfig& config) {
    image_a.validate();
    image_b.validate();
    response_a.validate();
    response_b.validate();
    config.validate();
    if (image_a.grid.nx != image_b.grid.nx || image_a.grid.ny != image_b.grid.ny) {
        throw std::invalid_argument("disambiguate: image grids do not match");
    }
    const double spacing = response_a.dip_spacing();
    const double shift = kTwoPi * shift_hz;
    if (!(shift > 0.0) || shift >= spacing) {
        throw std::invalid_argument(
            "disambiguate: shift must lie strictly between 0 and the grating spacing");
    }

    const std::size_t n = image_a.fluorescence.size();
    std::vector<double> delta(n, 0.0);
    std::vector<std::uint8_t> assigned(n, 0);
    std::vector<std::uint8_t> visited(n, 0);
    const double band_mid = 0.5 * (response_a.grid.front() + response_a.grid.back());

    DisambiguateResult res;
    res.map.grid = image_a.grid;
    res.map.b.assign(n, 0.0);
    res.map.mask.assign(n, 0);

    for (std::size_t start = 0; start < n; ++start) {
        if (!image_a.mask[start] || visited[start]) continue;

        // collect the connected component (same neighbor order as the fill)
        std::vector<std::size_t> comp;
        std::queue<std::size_t> bfs;
        bfs.push(start);
        visited[start] = 1;
        while (!bfs.empty()) {
            const std::size_t p = bfs.front();
            bfs.pop();
            comp.push_back(p);
            const int ix = static_cast<int>(p % static_cast<std::size_t>(image_a.grid.nx));
            const int iy = static_cast<int>(p / static_cast<std::size_t>(image_a.grid.nx));
            const int nbx[4] = {ix + 1, ix - 1, ix, ix};
            const int nby[4] = {iy, iy, iy + 1, iy - 1};
            for (int k = 0; k < 4; ++k) {
                if (nbx[k] < 0 || nbx[k] >= image_a.grid.nx || nby[k] < 0 ||
                    nby[k] >= image_a.grid.ny) {
                    continue;
                }
                const std::size_t q = image_a.index(nbx[k], nby[k]);
                if (image_a.mask[q] && !visited[q]) {
                    visited[q] = 1;
                    bfs.push(q);
                }
            }
        }

        // temporary anchor: deepest fluorescence, ties at the lowest index
        std::size_t anchor = comp.front();
        for (std::size_t p : comp) {
            if (image_a.fluorescence[p] < image_a.fluorescence[anchor]) anchor = p;
        }
        delta[anchor] = nearest_or(response_a.preimages(image_a.fluorescence[anchor]),
                                   band_mid, band_mid);
        assigned[anchor] = 1;
        flood_assign(image_a, response_a, delta, assigned, {anchor});
        repair_assign(image_a, response_a, delta, assigned);

        // integer branch offset scored jointly against both images
        double dmin = delta[comp.front()], dmax = dmin;
        for (std::size_t p : comp) {
            dmin = std::min(dmin, delta[p]);
            dmax = std::max(dmax, delta[p]);
        }
        const int klo =
            static_cast<int>(std::floor((response_a.grid.front() - dmax) / spacing)) - 1;
        const int khi =
            static_cast<int>(std::ceil((response_a.grid.back() - dmin) / spacing)) + 1;
        int best_k = 0;
        double best_score = std::numeric_limits<double>::infinity();
        for (int k = klo; k <= khi; ++k) {
            double score = 0.0;
            for (std::size_t p : comp) {
                const double dk = delta[p] + static_cast<double>(k) * spacing;
                if (response_a.in_band(dk)) {
                    const double r = image_a.fluorescence[p] - response_a.eval(dk);
                    score += r * r;
                } else {
                    score += kMismatchPenalty;  // pixel is observed valid in A
                }
                const bool predicted_b = response_b.in_band(dk);
                if (predicted_b != (image_b.mask[p] != 0)) {
                    score += kMismatchPenalty;
                } else if (predicted_b) {
                    const double r = image_b.fluorescence[p] - response_b.eval(dk);
                    score += r * r;
                }
            }
            const bool better =
                score < best_score ||
                (score == best_score && (std::abs(k) < std::abs(best_k) ||
                                         (std::abs(k) == std::abs(best_k) && k < best_k)));
            if (better) {
                best_score = score;
                best_k = k;
            }
        }
        res.branch_offsets.push_back(best_k);
        for (std::size_t p : comp) {
            const double dk = delta[p] + static_cast<double>(best_k) * spacing;
            if (response_a.in_band(dk)) {
                res.map.b[p] = delta_to_field(dk, config);
                res.map.mask[p] = 1;
            }
        }
    }
    return res;
}

field::FieldMap subtract_bias(const field::FieldMap& map, double bias_tesla) {
    map.validate();
    if (!std::isfinite(bias_tesla)) throw std::invalid_argument("subtract: bias must be finite");
    field::FieldMap out = map;
    for (std::size_t p = 0; p < out.b.size(); ++p) {
        if (out.mask[p]) out.b[p] -= bias_tesla;
    }
    return out;
}

}  // namespace gratmag::img

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "delaynet/dde.hpp"
#include "delaynet/errors.hpp"
#include "delaynet/graph.hpp"
#include "delaynet/reduce.hpp"
#include "delaynet/system.hpp"

namespace delaynet {

// ---------------------------------------------------------------------------
// state transformation

/**
 * Componentwise timeshift as a state-space map: run the original system
 * forward by max eta, then read each node's new history as
 * t -> x_j(t + eta_j) from the concatenation of the initial history and the
 * warm-up segment.  Nodes whose transformed lag window is shorter than the
 * common output window are padded by clamping into the stored range; the
 * padded samples lie outside the per-node requirement and are never read by
 * the transformed system.
 */
inline HistorySegment transform_state(const HistorySegment& x0, const NetworkTopology& topology,
                                      const DelayDistribution& tau, const TimeshiftVector& eta,
                                      const SystemDefinition& system, double dt) {
    if (eta.size() != topology.node_count())
        throw domain_error("transform_state: timeshift vector has " + std::to_string(eta.size()) +
                           " entries for " + std::to_string(topology.node_count()) + " nodes");
    if (eta.min_shift() < -1e-12)
        throw domain_error("transform_state: timeshifts must be nonnegative");
    DelayDistribution reduced = apply_timeshift(tau, eta, topology);
    if (int bad = reduced.first_negative_edge(1e-9); bad != 0)
        throw domain_error("transform_state: transformed delay on edge " + std::to_string(bad) +
                           " is negative; the timeshift is not admissible for this distribution");
    for (int id = 1; id <= reduced.size(); ++id)
        if (reduced(id) < 0.0) reduced.at(id) = 0.0; // absorb float dust

    const double eta_bar = eta.max_shift();
    const double warm_span = std::ceil(eta_bar / dt - 1e-9) * dt;
    Trajectory warm = simulate(topology, tau, system, x0, warm_span, dt);

    HistorySegment out;
    out.dt = dt;
    out.len = HistorySegment::span_samples(max_required_lag(reduced), dt);
    out.values.assign(static_cast<std::size_t>(topology.node_count()),
                      std::vector<double>(static_cast<std::size_t>(out.len) + 1, 0.0));
    out.slopes = out.values;
    const double lo = warm.start_time();
    const double hi = warm.end_time();
    for (int j = 1; j <= topology.node_count(); ++j) {
        for (int i = 0; i <= out.len; ++i) {
            double t = eta(j) + (i - out.len) * dt;
            t = std::min(std::max(t, lo), hi);
            out.values[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(i)] =
                value_at(warm, j, t);
            out.slopes[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(i)] =
                derivative_at(warm, j, t);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// trajectory correspondence

struct CorrespondenceReport {
    double max_deviation = 0.0;
    ReductionResult reduction;
};

/**
 * Certifies T(flow) = flow~(T) numerically: reduces the delays, runs the
 * original and the transformed system independently, and reports
 * max_j sup_t |y_j(t) - x_j(t + eta_j)| over the grid of [0, t_end].
 */
inline CorrespondenceReport verify_trajectory_correspondence(const NetworkTopology& topology,
                                                             const DelayDistribution& tau,
                                                             const SystemDefinition& system,
                                                             const HistorySegment& x0,
                                                             double t_end, double dt) {
    CorrespondenceReport report;
    report.reduction = reduce_to_spanning_tree(tau, topology);
    const TimeshiftVector& eta = report.reduction.timeshifts;
    const double eta_bar = std::ceil(eta.max_shift() / dt - 1e-9) * dt;

    Trajectory original = simulate(topology, tau, system, x0, t_end + eta_bar, dt);
    HistorySegment y0 = transform_state(x0, topology, tau, eta, system, dt);
    Trajectory transformed = simulate(topology, report.reduction.reduced, system, y0, t_end, dt);

    double dev = 0.0;
    const int steps = transformed.last_index() - transformed.hist_len;
    for (int j = 1; j <= topology.node_count(); ++j) {
        for (int i = 0; i <= steps; ++i) {
            double t = i * dt;
            double y = transformed.values[static_cast<std::size_t>(j) - 1]
                                         [static_cast<std::size_t>(transformed.hist_len + i)];
            double x = value_at(original, j, t + eta(j));
            dev = std::max(dev, std::abs(y - x));
        }
    }
    report.max_deviation = dev;
    return report;
}

// ---------------------------------------------------------------------------
// characteristic roots

struct SpectralRegion {
    double re_min, re_max, im_min, im_max;

    void validate() const {
        if (!(re_min < re_max) || !(im_min < im_max))
            throw domain_error("region: require re_min < re_max and im_min < im_max");
    }
    bool contains(std::complex<double> z, double margin = 0.0) const {
        return z.real() >= re_min - margin && z.real() <= re_max + margin &&
               z.imag() >= im_min - margin && z.imag() <= im_max + margin;
    }
    bool well_inside(std::complex<double> z, double margin) const {
        return z.real() > re_min + margin && z.real() < re_max - margin &&
               z.imag() > im_min + margin && z.imag() < im_max - margin;
    }
};

struct CharacteristicSpectrum {
    std::vector<std::complex<double>> roots; // sorted by (re, im)
    std::vector<double> residuals;           // scale-free |det| at each root
    SpectralRegion region{};
};

namespace detail {

/// First-order Taylor scalar in lambda: value + derivative, over complex.
struct DualC {
    std::complex<double> v{0.0, 0.0};
    std::complex<double> d{0.0, 0.0};
};

inline DualC operator+(DualC a, DualC b) { return {a.v + b.v, a.d + b.d}; }
inline DualC operator-(DualC a, DualC b) { return {a.v - b.v, a.d - b.d}; }
inline DualC operator*(DualC a, DualC b) { return {a.v * b.v, a.v * b.d + a.d * b.v}; }
inline DualC operator/(DualC a, DualC b) {
    std::complex<double> q = a.v / b.v;
    return {q, (a.d - q * b.d) / b.v};
}

/**
 * Determinant of the characteristic matrix together with its lambda
 * derivative, via LU with partial pivoting over dual scalars.  Rows are
 * equilibrated first (a constant scaling per evaluation), so the returned
 * value is a scale-free residual and the Newton ratio v/d is untouched.
 */
struct CharacteristicMatrix {
    int n;
    std::vector<double> intrinsic;                   // diagonal derivative terms
    std::vector<std::tuple<int, int, double, double>> terms; // (row, col, weight, delay)

    CharacteristicMatrix(const NetworkTopology& topology, const DelayDistribution& tau,
                         const SystemDefinition& system, const std::vector<double>& xbar)
        : n(topology.node_count()) {
        intrinsic.resize(static_cast<std::size_t>(n));
        for (int j = 1; j <= n; ++j)
            intrinsic[static_cast<std::size_t>(j) - 1] = system.intrinsic_derivative(j);
        for (const auto& e : topology.edges())
            terms.emplace_back(e.target - 1, e.source - 1,
                               system.coupling_derivative(
                                   e.id, xbar[static_cast<std::size_t>(e.source) - 1]),
                               tau(e.id));
    }

    DualC determinant(std::complex<double> lambda) const {
        std::vector<DualC> a(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
        auto at = [&](int r, int c) -> DualC& {
            return a[static_cast<std::size_t>(r) * static_cast<std::size_t>(n) +
                     static_cast<std::size_t>(c)];
        };
        // row scales accumulate the term magnitudes before any cancellation,
        // so |det| of the scaled matrix is a scale-free residual (~eps at a
        // root, order one away from it) even when exp(-lambda tau) is huge
        std::vector<double> scale(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            at(j, j).v = lambda - intrinsic[static_cast<std::size_t>(j)];
            at(j, j).d = 1.0;
            scale[static_cast<std::size_t>(j)] =
                std::abs(lambda) + std::abs(intrinsic[static_cast<std::size_t>(j)]);
        }
        for (const auto& [r, c, w, delay] : terms) {
            std::complex<double> e = std::exp(-lambda * delay);
            at(r, c).v -= w * e;
            at(r, c).d -= w * e * (-delay);
            scale[static_cast<std::size_t>(r)] += std::abs(w) * std::abs(e);
        }
        DualC det;
        det.v = 1.0;
        for (int r = 0; r < n; ++r) {
            double s = scale[static_cast<std::size_t>(r)];
            if (s == 0.0) return DualC{};
            for (int c = 0; c < n; ++c) {
                at(r, c).v /= s;
                at(r, c).d /= s;
            }
        }
        for (int k = 0; k < n; ++k) {
            int pivot = k;
            for (int r = k + 1; r < n; ++r)
                if (std::abs(at(r, k).v) > std::abs(at(pivot, k).v)) pivot = r;
            if (pivot != k) {
                for (int c = 0; c < n; ++c) std::swap(at(k, c), at(pivot, c));
                det.v = -det.v;
                det.d = -det.d;
            }
            if (std::abs(at(k, k).v) == 0.0) return DualC{};
            det = det * at(k, k);
            for (int r = k + 1; r < n; ++r) {
                DualC f = at(r, k) / at(k, k);
                for (int c = k + 1; c < n; ++c) at(r, c) = at(r, c) - f * at(k, c);
            }
        }
        return det;
    }
};

inline std::optional<std::complex<double>> newton_root(const CharacteristicMatrix& mat,
                                                       std::complex<double> seed,
                                                       double& residual_out) {
    std::complex<double> z = seed;
    for (int iter = 0; iter < 100; ++iter) {
        DualC det = mat.determinant(z);
        if (std::abs(det.d) < 1e-300) return std::nullopt;
        std::complex<double> step = det.v / det.d;
        z -= step;
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return std::nullopt;
        if (std::abs(step) <= 1e-13 * (1.0 + std::abs(z))) {
            residual_out = std::abs(mat.determinant(z).v);
            return z;
        }
    }
    return std::nullopt;
}

} // namespace detail

/**
 * Roots of det(lambda I - J0 - sum_l A(l) e^{-lambda tau(l)}) inside a
 * rectangle, by Newton iteration from a uniform grid of seeds (plus any
 * extra seeds).  Converged roots are deduplicated at radius 1e-6 and
 * completed under conjugation for roots off the real axis.  Grid seeding is
 * heuristic; a denser grid trades time for completeness.
 */
inline CharacteristicSpectrum characteristic_roots(
    const NetworkTopology& topology, const DelayDistribution& tau, const SystemDefinition& system,
    const std::vector<double>& xbar, const SpectralRegion& region, int grid_density = 40,
    const std::vector<std::complex<double>>& extra_seeds = {}) {
    region.validate();
    if (static_cast<int>(xbar.size()) != topology.node_count())
        throw domain_error("characteristic_roots: equilibrium has " + std::to_string(xbar.size()) +
                           " entries for " + std::to_string(topology.node_count()) + " nodes");
    if (grid_density < 2) throw domain_error("characteristic_roots: grid density must be >= 2");

    const detail::CharacteristicMatrix mat(topology, tau, system, xbar);
    constexpr double kResidualTol = 1e-10;
    constexpr double kDedupRadius = 1e-6;

    std::vector<std::complex<double>> roots;
    std::vector<double> residuals;
    auto admit = [&](std::complex<double> seed) {
        double residual = 0.0;
        auto root = detail::newton_root(mat, seed, residual);
        if (!root || residual > kResidualTol) return;
        if (!region.contains(*root)) return;
        for (std::size_t i = 0; i < roots.size(); ++i) {
            if (std::abs(roots[i] - *root) <= kDedupRadius) {
                if (residual < residuals[i]) {
                    roots[i] = *root;
                    residuals[i] = residual;
                }
                return;
            }
        }
        roots.push_back(*root);
        residuals.push_back(residual);
    };

    for (int a = 0; a < grid_density; ++a) {
        for (int b = 0; b < grid_density; ++b) {
            double re = region.re_min + (region.re_max - region.re_min) * a / (grid_density - 1);
            double im = region.im_min + (region.im_max - region.im_min) * b / (grid_density - 1);
            admit({re, im});
        }
    }
    for (auto seed : extra_seeds) admit(seed);

    // real systems: fill conjugate partners that land inside the region
    for (std::size_t i = 0, n0 = roots.size(); i < n0; ++i)
        if (std::abs(roots[i].imag()) > 1e-9 && region.contains(std::conj(roots[i])))
            admit(std::conj(roots[i]));

    std::vector<std::size_t> order(roots.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (roots[a].real() != roots[b].real()) return roots[a].real() < roots[b].real();
        return roots[a].imag() < roots[b].imag();
    });
    CharacteristicSpectrum spectrum;
    spectrum.region = region;
    for (std::size_t i : order) {
        spectrum.roots.push_back(roots[i]);
        spectrum.residuals.push_back(residuals[i]);
    }
    return spectrum;
}

struct SpectraComparison {
    bool matched = false;
    double max_pairing_distance = 0.0;
    CharacteristicSpectrum original;
    CharacteristicSpectrum reduced;
};

/**
 * Computes the equilibrium spectra under tau and under its spanning-tree
 * reduction and pairs the roots greedily by nearest neighbour.  The two
 * runs cross-seed each other so that a root found by one Newton search is
 * offered to the other.  Roots within 1e-6 of the region boundary are left
 * out of the count comparison (they may drift across it).
 */
inline SpectraComparison compare_spectra(const NetworkTopology& topology,
                                         const DelayDistribution& tau,
                                         const SystemDefinition& system,
                                         const std::vector<double>& xbar,
                                         const SpectralRegion& region, int grid_density = 40) {
    constexpr double kPairTol = 1e-8;
    constexpr double kBoundaryMargin = 1e-6;

    ReductionResult red = reduce_to_spanning_tree(tau, topology);
    CharacteristicSpectrum a = characteristic_roots(topology, tau, system, xbar, region,
                                                    grid_density);
    CharacteristicSpectrum b = characteristic_roots(topology, red.reduced, system, xbar, region,
                                                    grid_density, a.roots);
    a = characteristic_roots(topology, tau, system, xbar, region, grid_density, b.roots);

    auto interior = [&](const CharacteristicSpectrum& s) {
        std::vector<std::complex<double>> out;
        for (auto z : s.roots)
            if (region.well_inside(z, kBoundaryMargin)) out.push_back(z);
        return out;
    };
    std::vector<std::complex<double>> ia = interior(a), ib = interior(b);

    SpectraComparison cmp;
    cmp.original = std::move(a);
    cmp.reduced = std::move(b);
    cmp.matched = ia.size() == ib.size();
    std::vector<char> used(ib.size(), 0);
    for (auto z : ia) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_i = ib.size();
        for (std::size_t i = 0; i < ib.size(); ++i) {
            if (used[i]) continue;
            double d = std::abs(z - ib[i]);
            if (d < best) {
                best = d;
                best_i = i;
            }
        }
        if (best_i == ib.size()) {
            cmp.matched = false;
            break;
        }
        used[best_i] = 1;
        cmp.max_pairing_distance = std::max(cmp.max_pairing_distance, best);
        if (best > kPairTol) cmp.matched = false;
    }
    return cmp;
}

// ---------------------------------------------------------------------------
// maximal Lyapunov exponent (Benettin two-trajectory method)

struct MleEstimate {
    double value = 0.0;
    double half_width = 0.0;
    bool lower_bound_only = false; // separation collapsed; value is a lower bound
};

namespace detail {

inline double splitmix_uniform(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

inline double history_distance(const HistorySegment& a, const HistorySegment& b) {
    double d = 0.0;
    for (std::size_t j = 0; j < a.values.size(); ++j)
        for (std::size_t i = 0; i < a.values[j].size(); ++i)
            d = std::max(d, std::abs(a.values[j][i] - b.values[j][i]));
    return d;
}

} // namespace detail

/**
 * Benettin-style estimate of the maximal Lyapunov exponent along the
 * trajectory from x0: co-integrate a companion trajectory displaced by
 * delta0 = 1e-8 (uniform per-node offset, direction drawn from the seed),
 * renormalize the max-norm separation over the history window every
 * renorm_interval, and average ln(d/delta0)/interval over the
 * post-transient window.  The half width is the standard error over up to
 * ten blocks of the interval estimates.
 */
inline MleEstimate estimate_mle(const NetworkTopology& topology, const DelayDistribution& tau,
                                const SystemDefinition& system, const HistorySegment& x0,
                                double t_end, double renorm_interval, double dt,
                                std::uint64_t seed, double transient_fraction = 0.2) {
    constexpr double kDelta0 = 1e-8;
    if (!(renorm_interval > 0.0))
        throw domain_error("estimate_mle: renorm_interval must be > 0");
    const double interval = std::max(1.0, std::round(renorm_interval / dt)) * dt;
    if (interval + 1e-9 < max_required_lag(tau))
        throw domain_error("estimate_mle: renorm_interval must cover the largest delay " +
                           std::to_string(max_required_lag(tau)));
    const int n_intervals = static_cast<int>(std::ceil(t_end / interval - 1e-9));
    if (n_intervals < 2) throw domain_error("estimate_mle: t_end allows fewer than 2 intervals");

    // uniform per-node displacement of the whole history segment
    std::uint64_t rng = seed ^ 0xd1b54a32d192ed03ull;
    std::vector<double> direction(static_cast<std::size_t>(topology.node_count()));
    double dmax = 0.0;
    for (double& u : direction) {
        u = 2.0 * detail::splitmix_uniform(rng) - 1.0;
        dmax = std::max(dmax, std::abs(u));
    }
    if (dmax == 0.0) direction[0] = dmax = 1.0;
    for (double& u : direction) u /= dmax;

    HistorySegment base = x0;
    HistorySegment pert = x0;
    for (std::size_t j = 0; j < pert.values.size(); ++j)
        for (double& v : pert.values[j]) v += kDelta0 * direction[j];

    std::vector<double> rates;
    bool collapsed = false;
    for (int k = 0; k < n_intervals; ++k) {
        Trajectory base_run = simulate(topology, tau, system, base, interval, dt);
        Trajectory pert_run = simulate(topology, tau, system, pert, interval, dt);
        base = extract_history(base_run, base_run.end_time());
        HistorySegment pert_tail = extract_history(pert_run, pert_run.end_time());
        double d = detail::history_distance(base, pert_tail);
        if (d < 1e-300) {
            collapsed = true;
            break;
        }
        rates.push_back(std::log(d / kDelta0) / interval);
        double blend = kDelta0 / d;
        pert = base;
        for (std::size_t j = 0; j < pert.values.size(); ++j)
            for (std::size_t i = 0; i < pert.values[j].size(); ++i) {
                pert.values[j][i] += blend * (pert_tail.values[j][i] - base.values[j][i]);
                pert.slopes[j][i] += blend * (pert_tail.slopes[j][i] - base.slopes[j][i]);
            }
    }

    std::size_t discard = static_cast<std::size_t>(transient_fraction * rates.size());
    if (discard >= rates.size() && !rates.empty()) discard = rates.size() - 1;
    std::vector<double> post(rates.begin() + static_cast<std::ptrdiff_t>(discard), rates.end());

    MleEstimate est;
    est.lower_bound_only = collapsed;
    if (post.empty()) {
        est.value = -std::numeric_limits<double>::infinity();
        return est;
    }
    double mean = 0.0;
    for (double r : post) mean += r;
    mean /= static_cast<double>(post.size());
    est.value = mean;

    std::size_t blocks = std::min<std::size_t>(10, post.size());
    if (blocks >= 2) {
        std::vector<double> block_means(blocks, 0.0);
        std::vector<std::size_t> counts(blocks, 0);
        for (std::size_t i = 0; i < post.size(); ++i) {
            std::size_t b = i * blocks / post.size();
            block_means[b] += post[i];
            ++counts[b];
        }
        double bm = 0.0;
        for (std::size_t b = 0; b < blocks; ++b) {
            block_means[b] /= static_cast<double>(counts[b]);
            bm += block_means[b];
        }
        bm /= static_cast<double>(blocks);
        double var = 0.0;
        for (double m : block_means) var += (m - bm) * (m - bm);
        var /= static_cast<double>(blocks - 1);
        est.half_width = std::sqrt(var / static_cast<double>(blocks));
    }
    return est;
}

// ---------------------------------------------------------------------------
// dominant Floquet exponent of a periodic orbit

struct FloquetResult {
    double exponent = 0.0;
    bool collapsed_to_zero = false; // variational state vanished; exponent is -inf
    bool deflated = false;          // trivial exponent ~0 was projected out
    double trivial_estimate = 0.0;  // leading estimate before deflation
};

namespace detail {

/// Time-frozen linearization around a stored orbit, wrapped modulo the
/// period.  Integrates the variational DDE with the same RK4 scheme.
struct VariationalIntegrator {
    const NetworkTopology& topology;
    const DelayDistribution& tau;
    const SystemDefinition& system;
    const Trajectory& orbit;
    double period;
    double base; // orbit time corresponding to variational time 0 (mod period)

    double orbit_value(int node, double t) const {
        double phase = std::fmod(t, period);
        if (phase < 0) phase += period;
        return value_at(orbit, node, base + phase);
    }

    /// One period of the variational flow from the given history; returns the
    /// trajectory so the caller can extract the new state.
    Trajectory run_period(const HistorySegment& xi0, double dt) const {
        const int n = topology.node_count();
        const int steps = static_cast<int>(std::llround(period / dt));
        Trajectory traj;
        traj.dt = dt;
        traj.hist_len = xi0.len;
        traj.tau = tau;
        traj.system = system;
        const int total = traj.hist_len + steps;
        traj.values.assign(static_cast<std::size_t>(n),
                           std::vector<double>(static_cast<std::size_t>(total) + 1, 0.0));
        traj.slopes = traj.values;
        traj.start_left_slope.assign(static_cast<std::size_t>(n), 0.0);
        for (int j = 0; j < n; ++j) {
            std::copy(xi0.values[static_cast<std::size_t>(j)].begin(),
                      xi0.values[static_cast<std::size_t>(j)].end(),
                      traj.values[static_cast<std::size_t>(j)].begin());
            std::copy(xi0.slopes[static_cast<std::size_t>(j)].begin(),
                      xi0.slopes[static_cast<std::size_t>(j)].end(),
                      traj.slopes[static_cast<std::size_t>(j)].begin());
            traj.start_left_slope[static_cast<std::size_t>(j)] =
                xi0.slopes[static_cast<std::size_t>(j)][static_cast<std::size_t>(xi0.len)];
        }

        const auto& edges = topology.edges();
        std::vector<double> delayed(edges.size(), 0.0);
        std::vector<double> k1(static_cast<std::size_t>(n)), k2(k1), k3(k1), k4(k1);
        std::vector<double> stage(static_cast<std::size_t>(n));
        std::vector<double> x(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j)
            x[static_cast<std::size_t>(j)] =
                traj.values[static_cast<std::size_t>(j)][static_cast<std::size_t>(traj.hist_len)];

        auto read_delayed = [&](double ts, const TrajectoryReader& reader) {
            for (const auto& e : edges)
                if (tau(e.id) > 0.0)
                    delayed[static_cast<std::size_t>(e.id) - 1] =
                        reader.value(e.source, ts - tau(e.id));
        };
        auto rhs = [&](double ts, const std::vector<double>& xi, std::vector<double>& out) {
            for (int j = 1; j <= n; ++j)
                out[static_cast<std::size_t>(j) - 1] =
                    system.intrinsic_derivative(j) * xi[static_cast<std::size_t>(j) - 1];
            for (const auto& e : edges) {
                double u = orbit_value(e.source, ts - tau(e.id));
                double coeff = system.coupling_derivative(e.id, u);
                double xi_delayed = tau(e.id) > 0.0 ? delayed[static_cast<std::size_t>(e.id) - 1]
                                                    : xi[static_cast<std::size_t>(e.source) - 1];
                out[static_cast<std::size_t>(e.target) - 1] += coeff * xi_delayed;
            }
        };

        for (int i = traj.hist_len; i < total; ++i) {
            double t = traj.time_at(i);
            TrajectoryReader before{traj, i - 2};
            read_delayed(t, before);
            rhs(t, x, k1);
            for (int j = 0; j < n; ++j)
                traj.slopes[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
                    k1[static_cast<std::size_t>(j)];
            TrajectoryReader current{traj, i - 1};
            read_delayed(t + dt / 2.0, current);
            for (int j = 0; j < n; ++j)
                stage[static_cast<std::size_t>(j)] =
                    x[static_cast<std::size_t>(j)] + dt / 2.0 * k1[static_cast<std::size_t>(j)];
            rhs(t + dt / 2.0, stage, k2);
            for (int j = 0; j < n; ++j)
                stage[static_cast<std::size_t>(j)] =
                    x[static_cast<std::size_t>(j)] + dt / 2.0 * k2[static_cast<std::size_t>(j)];
            rhs(t + dt / 2.0, stage, k3);
            read_delayed(t + dt, current);
            for (int j = 0; j < n; ++j)
                stage[static_cast<std::size_t>(j)] =
                    x[static_cast<std::size_t>(j)] + dt * k3[static_cast<std::size_t>(j)];
            rhs(t + dt, stage, k4);
            for (int j = 0; j < n; ++j) {
                x[static_cast<std::size_t>(j)] +=
                    dt / 6.0 *
                    (k1[static_cast<std::size_t>(j)] + 2.0 * k2[static_cast<std::size_t>(j)] +
                     2.0 * k3[static_cast<std::size_t>(j)] + k4[static_cast<std::size_t>(j)]);
                if (!std::isfinite(x[static_cast<std::size_t>(j)]))
                    throw numeric_error("variational integration diverged at t = " +
                                        std::to_string(t + dt));
                traj.values[static_cast<std::size_t>(j)][static_cast<std::size_t>(i) + 1] =
                    x[static_cast<std::size_t>(j)];
            }
        }
        {
            TrajectoryReader before{traj, total - 2};
            read_delayed(traj.time_at(total), before);
            rhs(traj.time_at(total), x, k1);
            for (int j = 0; j < n; ++j)
                traj.slopes[static_cast<std::size_t>(j)][static_cast<std::size_t>(total)] =
                    k1[static_cast<std::size_t>(j)];
        }
        return traj;
    }
};

inline double history_norm(const HistorySegment& h) {
    double m = 0.0;
    for (const auto& v : h.values)
        for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline void scale_history(HistorySegment& h, double factor) {
    for (auto& v : h.values)
        for (double& x : v) x *= factor;
    for (auto& s : h.slopes)
        for (double& x : s) x *= factor;
}

inline double history_dot(const HistorySegment& a, const HistorySegment& b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.values.size(); ++j)
        for (std::size_t i = 0; i < a.values[j].size(); ++i)
            acc += a.values[j][i] * b.values[j][i];
    return acc;
}

inline double history_l2(const HistorySegment& h) { return std::sqrt(history_dot(h, h)); }

/// h -= c * direction on values and slopes (linear combinations of
/// variational solutions are solutions).
inline void history_axpy(HistorySegment& h, double c, const HistorySegment& direction) {
    for (std::size_t j = 0; j < h.values.size(); ++j)
        for (std::size_t i = 0; i < h.values[j].size(); ++i) {
            h.values[j][i] -= c * direction.values[j][i];
            h.slopes[j][i] -= c * direction.slopes[j][i];
        }
}

} // namespace detail

/**
 * Dominant Floquet exponent of a periodic orbit by power iteration on the
 * period map of the variational equation, with coefficients frozen from
 * the stored orbit.  When the leading estimate sits within 1e-3 of the
 * trivial exponent 0, the iteration switches to a two-vector scheme: the
 * first vector is seeded with the orbit's time derivative (the trivial
 * direction) and the second is re-orthogonalized against it every period,
 * so its growth rate gives the first non-trivial exponent.
 */
inline FloquetResult dominant_floquet_exponent(const NetworkTopology& topology,
                                               const DelayDistribution& tau,
                                               const SystemDefinition& system,
                                               const Trajectory& orbit, double period,
                                               int n_iterations, std::uint64_t seed = 1,
                                               const HistorySegment* initial = nullptr) {
    if (!(period > 0.0)) throw domain_error("dominant_floquet_exponent: period must be > 0");
    if (n_iterations < 4)
        throw domain_error("dominant_floquet_exponent: need at least 4 iterations");
    const double r_max = max_required_lag(tau);
    if (orbit.end_time() - orbit.start_time() < period + r_max - 1e-9)
        throw domain_error("dominant_floquet_exponent: orbit must cover max lag + period = " +
                           std::to_string(r_max + period));

    // periodicity check on the stored overlap
    {
        double worst = 0.0;
        const int probes = 257;
        for (int j = 1; j <= topology.node_count(); ++j)
            for (int i = 0; i < probes; ++i) {
                double t = orbit.end_time() - period - r_max +
                           (period + r_max - orbit.dt) * i / (probes - 1);
                if (t - period < orbit.start_time()) continue;
                worst = std::max(worst,
                                 std::abs(value_at(orbit, j, t) - value_at(orbit, j, t - period)));
            }
        if (worst > 1e-6)
            throw domain_error("dominant_floquet_exponent: orbit fails the periodicity check "
                               "(max |x(t) - x(t-T)| = " + std::to_string(worst) + ")");
    }

    const int steps = std::max(4, static_cast<int>(std::llround(period / orbit.dt)));
    const double dt = period / steps;
    if (initial != nullptr && std::abs(initial->dt - dt) > 1e-12 * std::max(1.0, dt))
        throw domain_error("dominant_floquet_exponent: the supplied variational history uses "
                           "grid step " + std::to_string(initial->dt) + ", the iteration needs " +
                           std::to_string(dt));
    detail::VariationalIntegrator var{topology, tau, system, orbit,
                                      period, orbit.end_time() - period};

    auto initial_history = [&]() {
        if (initial != nullptr) return *initial;
        HistorySegment h = HistorySegment::constant(topology.node_count(), 0.0, dt, r_max);
        std::uint64_t rng = seed ^ 0xa0761d6478bd642full;
        for (auto& v : h.values)
            for (double& x : v) x = 2.0 * detail::splitmix_uniform(rng) - 1.0;
        // slopes stay zero; a few flush periods remove the mismatch
        return h;
    };

    // the orbit's time derivative at the section phase, sampled on the
    // variational grid (the trivial Floquet direction)
    HistorySegment trivial = HistorySegment::constant(topology.node_count(), 0.0, dt, r_max);
    for (int j = 1; j <= topology.node_count(); ++j)
        for (int i = 0; i <= trivial.len; ++i) {
            double t = var.base + period + (i - trivial.len) * dt;
            trivial.values[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(i)] =
                derivative_at(orbit, j, t);
        }
    for (int j = 0; j < topology.node_count(); ++j)
        for (int i = 0; i <= trivial.len; ++i) {
            // slope of the derivative by centered differences
            int lo = std::max(i - 1, 0), hi = std::min(i + 1, trivial.len);
            trivial.slopes[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
                (trivial.values[static_cast<std::size_t>(j)][static_cast<std::size_t>(hi)] -
                 trivial.values[static_cast<std::size_t>(j)][static_cast<std::size_t>(lo)]) /
                ((hi - lo) * dt);
        }

    auto leading_pass = [&]() {
        HistorySegment state = initial_history();
        if (double norm = detail::history_l2(state); norm > 0)
            detail::scale_history(state, 1.0 / norm);
        std::vector<double> rates;
        for (int k = 0; k < n_iterations; ++k) {
            Trajectory run = var.run_period(state, dt);
            state = extract_history(run, run.end_time());
            double growth = detail::history_l2(state);
            if (growth < 1e-300) return std::pair<bool, std::vector<double>>{true, rates};
            rates.push_back(std::log(growth) / period);
            detail::scale_history(state, 1.0 / growth);
        }
        return std::pair<bool, std::vector<double>>{false, rates};
    };
    // two-vector Gram-Schmidt pass: the first direction tracks the trivial
    // multiplier, the orthogonalized second one carries the sought exponent
    auto deflated_pass = [&]() {
        HistorySegment lead = trivial;
        if (double norm = detail::history_l2(lead); norm > 0)
            detail::scale_history(lead, 1.0 / norm);
        HistorySegment second = initial_history();
        std::vector<double> rates;
        for (int k = 0; k < n_iterations; ++k) {
            double c0 = detail::history_dot(second, lead);
            detail::history_axpy(second, c0, lead);
            if (double norm = detail::history_l2(second); norm > 0)
                detail::scale_history(second, 1.0 / norm);

            Trajectory lead_run = var.run_period(lead, dt);
            Trajectory second_run = var.run_period(second, dt);
            lead = extract_history(lead_run, lead_run.end_time());
            second = extract_history(second_run, second_run.end_time());

            double g1 = detail::history_l2(lead);
            if (g1 < 1e-300) return std::pair<bool, std::vector<double>>{true, rates};
            detail::scale_history(lead, 1.0 / g1);
            double c = detail::history_dot(second, lead);
            detail::history_axpy(second, c, lead);
            double g2 = detail::history_l2(second);
            if (g2 < 1e-300) return std::pair<bool, std::vector<double>>{true, rates};
            rates.push_back(std::log(g2) / period);
            detail::scale_history(second, 1.0 / g2);
        }
        return std::pair<bool, std::vector<double>>{false, rates};
    };
    auto tail_mean = [](const std::vector<double>& rates) {
        std::size_t half = rates.size() / 2;
        double m = 0.0;
        for (std::size_t i = half; i < rates.size(); ++i) m += rates[i];
        return rates.size() > half ? m / static_cast<double>(rates.size() - half) : 0.0;
    };

    FloquetResult result;
    auto [collapsed, rates] = leading_pass();
    if (collapsed) {
        result.collapsed_to_zero = true;
        result.exponent = -std::numeric_limits<double>::infinity();
        return result;
    }
    result.trivial_estimate = tail_mean(rates);
    result.exponent = result.trivial_estimate;
    if (std::abs(result.trivial_estimate) < 1e-3) {
        auto [collapsed2, rates2] = deflated_pass();
        result.deflated = true;
        if (collapsed2) {
            result.collapsed_to_zero = true;
            result.exponent = -std::numeric_limits<double>::infinity();
            return result;
        }
        result.exponent = tail_mean(rates2);
    }
    return result;
}

/// Orbit located by long simulation: Poincare upward crossings of node 1
/// through its mean give a first period estimate, refined by minimizing the
/// mean-square mismatch |x(t) - x(t+T)|; returns the settled trajectory and
/// the refined period.
struct PeriodicOrbit {
    Trajectory trajectory;
    double period = 0.0;
    double mismatch = 0.0;
};

inline std::optional<PeriodicOrbit> find_periodic_orbit(const NetworkTopology& topology,
                                                        const DelayDistribution& tau,
                                                        const SystemDefinition& system,
                                                        const HistorySegment& x0, double t_settle,
                                                        double t_observe, double dt) {
    Trajectory traj = simulate(topology, tau, system, x0, t_settle + t_observe, dt);
    const int i_lo = traj.grid_index(std::max(t_settle, traj.hist_len * dt));
    const int i_hi = traj.last_index();
    const auto& x1 = traj.values[0];

    double mean = 0.0;
    for (int i = i_lo; i <= i_hi; ++i) mean += x1[static_cast<std::size_t>(i)];
    mean /= (i_hi - i_lo + 1);

    std::vector<double> crossings;
    for (int i = i_lo; i < i_hi; ++i) {
        double a = x1[static_cast<std::size_t>(i)] - mean;
        double b = x1[static_cast<std::size_t>(i) + 1] - mean;
        if (a < 0.0 && b >= 0.0)
            crossings.push_back(traj.time_at(i) + dt * a / (a - b));
    }
    if (crossings.size() < 4) return std::nullopt;
    std::vector<double> gaps;
    for (std::size_t i = 1; i < crossings.size(); ++i)
        gaps.push_back(crossings[i] - crossings[i - 1]);
    std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2),
                     gaps.end());
    double t0 = gaps[gaps.size() / 2];

    // refine by golden-section on the mean-square mismatch over one window
    auto mismatch = [&](double period) {
        double err = 0.0;
        const int probes = 400;
        double t_hi = traj.end_time();
        for (int j = 1; j <= topology.node_count(); ++j)
            for (int i = 0; i < probes; ++i) {
                double t = t_hi - period * i / (probes - 1.0);
                double d = value_at(traj, j, t) - value_at(traj, j, t - period);
                err += d * d;
            }
        return err;
    };
    double lo = 0.8 * t0, hi = 1.2 * t0;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = mismatch(c), fd = mismatch(d);
    for (int it = 0; it < 80; ++it) {
        if (fc < fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - gr * (hi - lo);
            fc = mismatch(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + gr * (hi - lo);
            fd = mismatch(d);
        }
    }
    PeriodicOrbit orbit;
    orbit.period = 0.5 * (lo + hi);
    orbit.trajectory = std::move(traj);

    double worst = 0.0;
    const int probes = 300;
    for (int j = 1; j <= topology.node_count(); ++j)
        for (int i = 0; i < probes; ++i) {
            double t = orbit.trajectory.end_time() - orbit.period * i / (probes - 1.0);
            worst = std::max(worst, std::abs(value_at(orbit.trajectory, j, t) -
                                             value_at(orbit.trajectory, j, t - orbit.period)));
        }
    orbit.mismatch = worst;
    if (worst > 1e-6) return std::nullopt;
    return orbit;
}

// ---------------------------------------------------------------------------
// combined report

struct EquivalenceReport {
    double max_trajectory_deviation = 0.0;
    bool spectra_matched = false;
    double max_root_pairing_distance = 0.0;
    CharacteristicSpectrum roots_original;
    CharacteristicSpectrum roots_reduced;
    MleEstimate mle_original;
    MleEstimate mle_reduced;
    ReductionResult reduction;
    // tolerances in force when the report was produced
    double pairing_tolerance = 1e-8;
    double residual_tolerance = 1e-10;
    double boundary_margin = 1e-6;
};

struct EquivalenceOptions {
    double t_end = 50.0;
    double dt = 1e-3;
    SpectralRegion region{-3.0, 1.0, 0.0, 20.0};
    int grid_density = 40;
    double mle_t_end = 200.0;
    double renorm_interval = 1.0;
    std::uint64_t seed = 1;
    std::vector<double> equilibrium_guess; // empty: zeros
};

/// Full certification pipeline: reduction, trajectory correspondence,
/// spectra at the equilibrium, and the two MLE estimates.
inline EquivalenceReport build_equivalence_report(const NetworkTopology& topology,
                                                  const DelayDistribution& tau,
                                                  const SystemDefinition& system,
                                                  const HistorySegment& x0,
                                                  const EquivalenceOptions& opt) {
    EquivalenceReport report;
    CorrespondenceReport corr =
        verify_trajectory_correspondence(topology, tau, system, x0, opt.t_end, opt.dt);
    report.max_trajectory_deviation = corr.max_deviation;
    report.reduction = corr.reduction;

    std::vector<double> guess = opt.equilibrium_guess;
    if (guess.empty()) guess.assign(static_cast<std::size_t>(topology.node_count()), 0.0);
    std::vector<double> xbar = find_equilibrium(topology, system, guess);
    SpectraComparison cmp =
        compare_spectra(topology, tau, system, xbar, opt.region, opt.grid_density);
    report.spectra_matched = cmp.matched;
    report.max_root_pairing_distance = cmp.max_pairing_distance;
    report.roots_original = std::move(cmp.original);
    report.roots_reduced = std::move(cmp.reduced);

    double interval = std::max(opt.renorm_interval,
                               std::max(max_required_lag(tau),
                                        max_required_lag(report.reduction.reduced)));
    report.mle_original = estimate_mle(topology, tau, system, x0, opt.mle_t_end, interval, opt.dt,
                                       opt.seed);
    HistorySegment y0 = transform_state(x0, topology, tau, report.reduction.timeshifts, system,
                                        opt.dt);
    report.mle_reduced = estimate_mle(topology, report.reduction.reduced, system, y0,
                                      opt.mle_t_end, interval, opt.dt, opt.seed);
    return report;
}

} // namespace delaynet

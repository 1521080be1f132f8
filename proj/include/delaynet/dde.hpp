#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "delaynet/errors.hpp"
#include "delaynet/graph.hpp"
#include "delaynet/log.hpp"
#include "delaynet/system.hpp"

namespace delaynet {

/// Largest transmission delay; every node history window of length r_max
/// covers the per-node requirement r_j = max over outgoing links.
inline double max_required_lag(const DelayDistribution& tau) {
    double r = 0.0;
    for (double d : tau.values()) r = std::max(r, d);
    return r;
}

/// Per-node history requirement r_j = max over outgoing links of tau(l)
/// (zero for nodes without outputs).  Histories are stored on the common
/// window [-max r_j, 0]; samples of node j before -r_j are filler.
inline std::vector<double> per_node_lags(const NetworkTopology& topology,
                                         const DelayDistribution& tau) {
    std::vector<double> lags(static_cast<std::size_t>(topology.node_count()), 0.0);
    for (const auto& e : topology.edges())
        lags[static_cast<std::size_t>(e.source) - 1] =
            std::max(lags[static_cast<std::size_t>(e.source) - 1], tau(e.id));
    return lags;
}

/**
 * Sampled per-node history on [-len*dt, 0].  slopes[j][len] is the
 * history's own (left-sided) derivative at t = 0; the integrator replaces
 * the slope at 0 by the DDE right-hand side for times after the start, so
 * the derivative kink of the method of steps sits exactly on a grid point.
 */
struct HistorySegment {
    double dt = 0.0;
    int len = 0; // samples are indexed 0..len, covering [-len*dt, 0]
    std::vector<std::vector<double>> values; // per node
    std::vector<std::vector<double>> slopes; // per node

    int node_count() const { return static_cast<int>(values.size()); }
    double span() const { return len * dt; }

    static HistorySegment constant(int nodes, double value, double dt, double min_span) {
        HistorySegment h;
        h.dt = dt;
        h.len = span_samples(min_span, dt);
        h.values.assign(static_cast<std::size_t>(nodes),
                        std::vector<double>(static_cast<std::size_t>(h.len) + 1, value));
        h.slopes.assign(static_cast<std::size_t>(nodes),
                        std::vector<double>(static_cast<std::size_t>(h.len) + 1, 0.0));
        return h;
    }

    static HistorySegment constant(std::vector<double> node_values, double dt, double min_span) {
        HistorySegment h = constant(static_cast<int>(node_values.size()), 0.0, dt, min_span);
        for (std::size_t j = 0; j < node_values.size(); ++j)
            h.values[j].assign(static_cast<std::size_t>(h.len) + 1, node_values[j]);
        return h;
    }

    /// Samples fn(node, t) on the grid; slopes by central differences
    /// (one-sided at the ends).
    template <typename F>
    static HistorySegment sampled(int nodes, F&& fn, double dt, double min_span) {
        HistorySegment h;
        h.dt = dt;
        h.len = span_samples(min_span, dt);
        h.values.assign(static_cast<std::size_t>(nodes),
                        std::vector<double>(static_cast<std::size_t>(h.len) + 1, 0.0));
        h.slopes = h.values;
        for (int j = 1; j <= nodes; ++j) {
            auto& v = h.values[static_cast<std::size_t>(j) - 1];
            auto& s = h.slopes[static_cast<std::size_t>(j) - 1];
            for (int i = 0; i <= h.len; ++i) v[static_cast<std::size_t>(i)] = fn(j, (i - h.len) * dt);
            for (int i = 0; i <= h.len; ++i) {
                if (h.len == 0) s[static_cast<std::size_t>(i)] = 0.0;
                else if (i == 0)
                    s[0] = (v[1] - v[0]) / dt;
                else if (i == h.len)
                    s[static_cast<std::size_t>(i)] = (v[static_cast<std::size_t>(i)] -
                                                      v[static_cast<std::size_t>(i) - 1]) / dt;
                else
                    s[static_cast<std::size_t>(i)] = (v[static_cast<std::size_t>(i) + 1] -
                                                      v[static_cast<std::size_t>(i) - 1]) /
                                                     (2.0 * dt);
            }
        }
        return h;
    }

    static int span_samples(double min_span, double dt) {
        if (!(dt > 0.0)) throw domain_error("history: dt must be > 0");
        if (min_span < 0.0) throw domain_error("history: span must be >= 0");
        return static_cast<int>(std::ceil(min_span / dt - 1e-9));
    }
};

/**
 * Dense solution of one simulation run.  Samples live on the uniform grid
 * t_i = (i - hist_len)*dt, i = 0..last_index(); the first hist_len+1 samples
 * are the initial history.  Cubic Hermite interpolation between samples is
 * exact at grid points.
 */
struct Trajectory {
    double dt = 0.0;
    int hist_len = 0;
    std::vector<std::vector<double>> values; // per node
    std::vector<std::vector<double>> slopes; // per node; index hist_len holds the RHS slope
    std::vector<double> start_left_slope;    // history-side derivative at t = 0, per node
    DelayDistribution tau;
    SystemDefinition system;

    int node_count() const { return static_cast<int>(values.size()); }
    int last_index() const { return static_cast<int>(values.front().size()) - 1; }
    double time_at(int index) const { return (index - hist_len) * dt; }
    double start_time() const { return -hist_len * dt; }
    double end_time() const { return time_at(last_index()); }

    /// Grid index of a grid-aligned time; throws when t is off-grid.
    int grid_index(double t, const char* what = "time") const {
        double raw = t / dt + hist_len;
        int i = static_cast<int>(std::llround(raw));
        if (std::abs(raw - i) > 1e-6)
            throw domain_error(std::string(what) + " " + std::to_string(t) +
                               " is not aligned to the grid (dt = " + std::to_string(dt) + ")");
        if (i < 0 || i > last_index())
            throw domain_error(std::string(what) + " " + std::to_string(t) +
                               " outside the stored range");
        return i;
    }
};

namespace detail {

inline void hermite_weights(double u, double& h00, double& h10, double& h01, double& h11) {
    double u2 = u * u, u3 = u2 * u;
    h00 = 2 * u3 - 3 * u2 + 1;
    h10 = u3 - 2 * u2 + u;
    h01 = -2 * u3 + 3 * u2;
    h11 = u3 - u2;
}

inline void hermite_dweights(double u, double& g00, double& g10, double& g01, double& g11) {
    double u2 = u * u;
    g00 = 6 * u2 - 6 * u;
    g10 = 3 * u2 - 4 * u + 1;
    g01 = -6 * u2 + 6 * u;
    g11 = 3 * u2 - 2 * u;
}

/**
 * Hermite evaluation over the trajectory arrays.  max_segment limits which
 * segment may be used (the integrator advances it as slopes become final);
 * queries beyond it extrapolate the last admissible cubic.  History segments
 * are always usable: the one ending at the start index takes its right-end
 * slope from the history side of the kink, not from the integration.
 */
struct TrajectoryReader {
    const Trajectory& traj;
    int max_segment; // highest usable segment index k (segment [k, k+1])

    int segment_cap() const { return std::max(max_segment, traj.hist_len - 1); }

    double right_slope(int node, int k) const {
        if (k + 1 == traj.hist_len) return traj.start_left_slope[static_cast<std::size_t>(node) - 1];
        return traj.slopes[static_cast<std::size_t>(node) - 1][static_cast<std::size_t>(k) + 1];
    }

    double value(int node, double t) const {
        const auto& v = traj.values[static_cast<std::size_t>(node) - 1];
        const auto& s = traj.slopes[static_cast<std::size_t>(node) - 1];
        const int cap = segment_cap();
        double raw = t / traj.dt + traj.hist_len;
        int k = static_cast<int>(std::floor(raw));
        double u = raw - k;
        // snap to grid points so stored samples are returned exactly
        if (u < 1e-9 && k >= 0 && k <= cap + 1 && k <= traj.last_index())
            return v[static_cast<std::size_t>(k)];
        if (u > 1.0 - 1e-9 && k + 1 >= 0 && k + 1 <= cap + 1 && k + 1 <= traj.last_index())
            return v[static_cast<std::size_t>(k) + 1];
        if (k < 0 || raw < 0.0)
            throw domain_error("trajectory lookup at t = " + std::to_string(t) +
                               " before the stored history");
        if (k > cap) { // extrapolate the last admissible segment
            u += k - cap;
            k = cap;
        }
        double h00, h10, h01, h11;
        hermite_weights(u, h00, h10, h01, h11);
        return h00 * v[static_cast<std::size_t>(k)] +
               h10 * traj.dt * s[static_cast<std::size_t>(k)] +
               h01 * v[static_cast<std::size_t>(k) + 1] +
               h11 * traj.dt * right_slope(node, k);
    }

    double derivative(int node, double t) const {
        const auto& v = traj.values[static_cast<std::size_t>(node) - 1];
        const auto& s = traj.slopes[static_cast<std::size_t>(node) - 1];
        const int cap = segment_cap();
        double raw = t / traj.dt + traj.hist_len;
        int k = static_cast<int>(std::floor(raw));
        double u = raw - k;
        if (u > 1.0 - 1e-9 && k + 1 <= cap + 1) {
            k += 1;
            u = 0.0;
        }
        if (k < 0 || raw < -1e-9)
            throw domain_error("trajectory lookup at t = " + std::to_string(t) +
                               " before the stored history");
        if (k > cap) {
            u += k - cap;
            k = cap;
        }
        if (u < 1e-9 && k < traj.hist_len) // inside the history, grid point
            return s[static_cast<std::size_t>(k)];
        double g00, g10, g01, g11;
        hermite_dweights(u, g00, g10, g01, g11);
        return (g00 * v[static_cast<std::size_t>(k)] +
                g01 * v[static_cast<std::size_t>(k) + 1]) / traj.dt +
               g10 * s[static_cast<std::size_t>(k)] + g11 * right_slope(node, k);
    }
};

} // namespace detail

/// Interpolated state; exact at grid points.  t must lie in the stored range.
inline double value_at(const Trajectory& traj, int node, double t) {
    if (node < 1 || node > traj.node_count())
        throw domain_error("value_at: node " + std::to_string(node) + " out of range");
    if (t < traj.start_time() - 1e-9 * traj.dt || t > traj.end_time() + 1e-9 * traj.dt)
        throw domain_error("value_at: t = " + std::to_string(t) + " outside [" +
                           std::to_string(traj.start_time()) + ", " +
                           std::to_string(traj.end_time()) + "] for node " + std::to_string(node));
    return detail::TrajectoryReader{traj, traj.last_index() - 1}.value(node, t);
}

/// Interpolated time derivative at t.
inline double derivative_at(const Trajectory& traj, int node, double t) {
    if (node < 1 || node > traj.node_count())
        throw domain_error("derivative_at: node " + std::to_string(node) + " out of range");
    if (t < traj.start_time() - 1e-9 * traj.dt || t > traj.end_time() + 1e-9 * traj.dt)
        throw domain_error("derivative_at: t = " + std::to_string(t) + " outside the stored range");
    return detail::TrajectoryReader{traj, traj.last_index() - 1}.derivative(node, t);
}

/**
 * Method-of-steps integration of the network DDE with classical RK4.
 * Delayed arguments are read from the dense Hermite history; instantaneous
 * couplings (tau = 0) use the current stage value of the source node, so the
 * zero-delay limit is a standard coupled-ODE RK4.
 */
inline Trajectory simulate(const NetworkTopology& topology, const DelayDistribution& tau,
                           const SystemDefinition& system, const HistorySegment& history,
                           double t_end, double dt) {
    if (!(dt > 0.0)) throw domain_error("simulate: dt must be > 0, got " + std::to_string(dt));
    if (t_end < 0.0) throw domain_error("simulate: t_end must be >= 0, got " + std::to_string(t_end));
    if (!tau.matches(topology))
        throw domain_error("simulate: distribution has " + std::to_string(tau.size()) +
                           " entries for " + std::to_string(topology.edge_count()) + " edges");
    if (int bad = tau.first_negative_edge(); bad != 0)
        throw domain_error("simulate: negative delay on edge " + std::to_string(bad));
    if (system.node_count() != topology.node_count())
        throw domain_error("simulate: system defined for " + std::to_string(system.node_count()) +
                           " nodes, topology has " + std::to_string(topology.node_count()));
    if (history.node_count() != topology.node_count())
        throw domain_error("simulate: history has " + std::to_string(history.node_count()) +
                           " nodes, topology has " + std::to_string(topology.node_count()));
    const double r_max = max_required_lag(tau);
    if (history.span() + 1e-9 * dt < r_max)
        throw domain_error("simulate: history spans " + std::to_string(history.span()) +
                           " but the delays require " + std::to_string(r_max));
    if (std::abs(history.dt - dt) > 1e-12 * std::max(1.0, dt))
        throw domain_error("simulate: history grid step " + std::to_string(history.dt) +
                           " does not match dt = " + std::to_string(dt));
    double min_pos = std::numeric_limits<double>::infinity();
    for (double d : tau.values())
        if (d > 0.0) min_pos = std::min(min_pos, d);
    if (std::isfinite(min_pos) && dt > min_pos)
        log::info("simulate: dt = %g exceeds the smallest positive delay %g; "
                  "delayed values in the current step are extrapolated",
                  dt, min_pos);

    const int n = topology.node_count();
    const int hist_len = history.len;
    const int steps = static_cast<int>(std::ceil(t_end / dt - 1e-9));
    const int total = hist_len + steps; // last sample index

    Trajectory traj;
    traj.dt = dt;
    traj.hist_len = hist_len;
    traj.tau = tau;
    traj.system = system;
    traj.values.assign(static_cast<std::size_t>(n),
                       std::vector<double>(static_cast<std::size_t>(total) + 1, 0.0));
    traj.slopes = traj.values;
    traj.start_left_slope.assign(static_cast<std::size_t>(n), 0.0);
    for (int j = 0; j < n; ++j) {
        std::copy(history.values[static_cast<std::size_t>(j)].begin(),
                  history.values[static_cast<std::size_t>(j)].end(),
                  traj.values[static_cast<std::size_t>(j)].begin());
        std::copy(history.slopes[static_cast<std::size_t>(j)].begin(),
                  history.slopes[static_cast<std::size_t>(j)].end(),
                  traj.slopes[static_cast<std::size_t>(j)].begin());
        traj.start_left_slope[static_cast<std::size_t>(j)] =
            history.slopes[static_cast<std::size_t>(j)][static_cast<std::size_t>(hist_len)];
    }

    const auto& edges = topology.edges();
    std::vector<double> delayed(edges.size(), 0.0);
    std::vector<double> k1(static_cast<std::size_t>(n)), k2(k1), k3(k1), k4(k1);
    std::vector<double> stage(static_cast<std::size_t>(n));

    // fills the per-edge delayed-value cache for stage time ts (tau > 0 only)
    auto read_delayed = [&](double ts, const detail::TrajectoryReader& reader) {
        for (const auto& e : edges) {
            double d = tau(e.id);
            if (d > 0.0) delayed[static_cast<std::size_t>(e.id) - 1] = reader.value(e.source, ts - d);
        }
    };
    auto rhs = [&](const std::vector<double>& x, std::vector<double>& out) {
        for (int j = 1; j <= n; ++j)
            out[static_cast<std::size_t>(j) - 1] = system.intrinsic(j, x[static_cast<std::size_t>(j) - 1]);
        for (const auto& e : edges) {
            double u = tau(e.id) > 0.0 ? delayed[static_cast<std::size_t>(e.id) - 1]
                                       : x[static_cast<std::size_t>(e.source) - 1];
            out[static_cast<std::size_t>(e.target) - 1] += system.coupling(e.id, u);
        }
    };

    std::vector<double> x(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) x[static_cast<std::size_t>(j)] = traj.values[static_cast<std::size_t>(j)][static_cast<std::size_t>(hist_len)];

    for (int i = hist_len; i < total; ++i) {
        const double t = traj.time_at(i);
        detail::TrajectoryReader before{traj, i - 2}; // slope at i not yet final
        read_delayed(t, before);
        rhs(x, k1);
        for (int j = 0; j < n; ++j) traj.slopes[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = k1[static_cast<std::size_t>(j)];
        // slope at i is now final, segment [i-1, i] fully usable
        detail::TrajectoryReader current{traj, i - 1};

        read_delayed(t + dt / 2.0, current);
        for (int j = 0; j < n; ++j) stage[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] + dt / 2.0 * k1[static_cast<std::size_t>(j)];
        rhs(stage, k2);
        for (int j = 0; j < n; ++j) stage[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] + dt / 2.0 * k2[static_cast<std::size_t>(j)];
        rhs(stage, k3);

        read_delayed(t + dt, current);
        for (int j = 0; j < n; ++j) stage[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] + dt * k3[static_cast<std::size_t>(j)];
        rhs(stage, k4);

        for (int j = 0; j < n; ++j) {
            x[static_cast<std::size_t>(j)] +=
                dt / 6.0 * (k1[static_cast<std::size_t>(j)] + 2.0 * k2[static_cast<std::size_t>(j)] +
                            2.0 * k3[static_cast<std::size_t>(j)] + k4[static_cast<std::size_t>(j)]);
            if (!std::isfinite(x[static_cast<std::size_t>(j)]) || std::abs(x[static_cast<std::size_t>(j)]) > 1e12)
                throw numeric_error("simulate: divergence at node " + std::to_string(j + 1) +
                                    ", t = " + std::to_string(t + dt));
            traj.values[static_cast<std::size_t>(j)][static_cast<std::size_t>(i) + 1] = x[static_cast<std::size_t>(j)];
        }
    }
    // final slope from the RHS so the last segment interpolates cleanly
    {
        detail::TrajectoryReader before{traj, total - 2};
        read_delayed(traj.time_at(total), before);
        rhs(x, k1);
        for (int j = 0; j < n; ++j) traj.slopes[static_cast<std::size_t>(j)][static_cast<std::size_t>(total)] = k1[static_cast<std::size_t>(j)];
    }
    return traj;
}

/**
 * Tail of a trajectory as a fresh history segment (for grid-aligned
 * restarts).  The window must not reach back across the trajectory's own
 * start, where the derivative kink lives.
 */
inline HistorySegment extract_history(const Trajectory& traj, double at_time) {
    int end = traj.grid_index(at_time, "extract_history: time");
    int len = traj.hist_len;
    if (end - len < traj.hist_len)
        throw domain_error("extract_history: window at t = " + std::to_string(at_time) +
                           " reaches before the initial time; extract at t >= " +
                           std::to_string(traj.hist_len * traj.dt));
    HistorySegment h;
    h.dt = traj.dt;
    h.len = len;
    h.values.assign(static_cast<std::size_t>(traj.node_count()), {});
    h.slopes = h.values;
    for (int j = 0; j < traj.node_count(); ++j) {
        const auto& v = traj.values[static_cast<std::size_t>(j)];
        const auto& s = traj.slopes[static_cast<std::size_t>(j)];
        h.values[static_cast<std::size_t>(j)].assign(v.begin() + (end - len), v.begin() + end + 1);
        h.slopes[static_cast<std::size_t>(j)].assign(s.begin() + (end - len), s.begin() + end + 1);
    }
    return h;
}

/**
 * Damped Newton iteration on the delay-free equilibrium system
 * f_j((x_s(l))_{l in I_j}) = 0.  Equilibria do not depend on the delays.
 */
inline std::vector<double> find_equilibrium(const NetworkTopology& topology,
                                            const SystemDefinition& system,
                                            std::vector<double> guess, double tol = 1e-12) {
    const int n = topology.node_count();
    if (static_cast<int>(guess.size()) != n)
        throw domain_error("find_equilibrium: guess has " + std::to_string(guess.size()) +
                           " entries for " + std::to_string(n) + " nodes");
    Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(guess.data(), n);

    auto residual = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd f(n);
        for (int j = 1; j <= n; ++j) f(j - 1) = system.intrinsic(j, p(j - 1));
        for (const auto& e : topology.edges())
            f(e.target - 1) += system.coupling(e.id, p(e.source - 1));
        return f;
    };
    auto jacobian = [&](const Eigen::VectorXd& p) {
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
        for (int j = 1; j <= n; ++j) jac(j - 1, j - 1) = system.intrinsic_derivative(j);
        for (const auto& e : topology.edges())
            jac(e.target - 1, e.source - 1) += system.coupling_derivative(e.id, p(e.source - 1));
        return jac;
    };

    Eigen::VectorXd f = residual(x);
    for (int iter = 0; iter < 100; ++iter) {
        if (f.lpNorm<Eigen::Infinity>() <= tol)
            return std::vector<double>(x.data(), x.data() + n);
        Eigen::VectorXd step = jacobian(x).colPivHouseholderQr().solve(-f);
        double alpha = 1.0;
        for (int damp = 0; damp < 40; ++damp) {
            Eigen::VectorXd trial = x + alpha * step;
            Eigen::VectorXd ft = residual(trial);
            if (ft.lpNorm<Eigen::Infinity>() < f.lpNorm<Eigen::Infinity>()) {
                x = trial;
                f = ft;
                break;
            }
            alpha *= 0.5;
            if (damp == 39)
                throw numeric_error("find_equilibrium: line search stalled at residual " +
                                    std::to_string(f.lpNorm<Eigen::Infinity>()));
        }
    }
    if (f.lpNorm<Eigen::Infinity>() <= tol)
        return std::vector<double>(x.data(), x.data() + n);
    throw numeric_error("find_equilibrium: no convergence within 100 iterations (residual " +
                        std::to_string(f.lpNorm<Eigen::Infinity>()) + ")");
}

} // namespace delaynet

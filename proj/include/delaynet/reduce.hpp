#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "delaynet/errors.hpp"
#include "delaynet/graph.hpp"

namespace delaynet {

/**
 * Componentwise timeshift acting on a delay distribution:
 *   tau~(l) = tau(l) - eta_t(l) + eta_s(l).
 * The result may carry negative entries; callers that need a delay
 * distribution proper check nonnegative() afterwards.
 */
inline DelayDistribution apply_timeshift(const DelayDistribution& tau,
                                         const TimeshiftVector& eta,
                                         const NetworkTopology& topology) {
    if (!tau.matches(topology))
        throw domain_error("apply_timeshift: distribution has " + std::to_string(tau.size()) +
                           " entries for " + std::to_string(topology.edge_count()) + " edges");
    if (eta.size() != topology.node_count())
        throw domain_error("apply_timeshift: timeshift vector has " + std::to_string(eta.size()) +
                           " entries for " + std::to_string(topology.node_count()) + " nodes");
    std::vector<double> out(tau.values());
    for (const auto& e : topology.edges())
        out[static_cast<std::size_t>(e.id) - 1] = tau(e.id) - eta(e.target) + eta(e.source);
    return DelayDistribution(std::move(out));
}

struct RelatableResult {
    bool relatable = false;
    TimeshiftVector eta; // canonical witness, valid only when relatable
};

/**
 * Decides whether two distributions are connected by a componentwise
 * timeshift.  Equivalent to agreement of the delay sums on the fundamental
 * cycles of one fixed spanning tree (chosen by edge id, independent of the
 * delays); agreement there extends to all semicycles by linearity over the
 * cycle space.
 *
 * The witness is built from tree potentials: solve xi_t - xi_s = tau1(l) and
 * chi_t - chi_s = tau2(l) along tree edges with the root pinned to zero,
 * then eta = xi - chi, canonicalized to min eta = 0.
 */
inline RelatableResult ct_relatable(const DelayDistribution& tau1, const DelayDistribution& tau2,
                                    const NetworkTopology& topology, double tol = 1e-9) {
    topology.require_connected("ct_relatable");
    if (!tau1.matches(topology) || !tau2.matches(topology))
        throw domain_error("ct_relatable: distributions must live on the given topology (" +
                           std::to_string(topology.edge_count()) + " edges)");

    SpanningTree tree = greedy_spanning_tree(topology);
    for (const Semicycle& c : fundamental_cycles(topology, tree)) {
        double s1 = delay_sum(c, tau1);
        double s2 = delay_sum(c, tau2);
        if (std::abs(s1 - s2) > tol * std::max({1.0, std::abs(s1), std::abs(s2)}))
            return {false, TimeshiftVector()};
    }

    auto potentials = [&](const DelayDistribution& tau) {
        std::vector<double> pot(static_cast<std::size_t>(topology.node_count()) + 1, 0.0);
        std::vector<char> seen(static_cast<std::size_t>(topology.node_count()) + 1, 0);
        seen[1] = 1;
        std::vector<int> frontier{1};
        while (!frontier.empty()) {
            int v = frontier.back();
            frontier.pop_back();
            for (int id : tree.edge_ids) {
                const auto& e = topology.edge(id);
                if (e.source == v && !seen[static_cast<std::size_t>(e.target)]) {
                    pot[static_cast<std::size_t>(e.target)] =
                        pot[static_cast<std::size_t>(v)] + tau(id);
                    seen[static_cast<std::size_t>(e.target)] = 1;
                    frontier.push_back(e.target);
                } else if (e.target == v && !seen[static_cast<std::size_t>(e.source)]) {
                    pot[static_cast<std::size_t>(e.source)] =
                        pot[static_cast<std::size_t>(v)] - tau(id);
                    seen[static_cast<std::size_t>(e.source)] = 1;
                    frontier.push_back(e.source);
                }
            }
        }
        return pot;
    };

    std::vector<double> xi = potentials(tau1);
    std::vector<double> chi = potentials(tau2);
    std::vector<double> eta(static_cast<std::size_t>(topology.node_count()));
    for (int j = 1; j <= topology.node_count(); ++j)
        eta[static_cast<std::size_t>(j) - 1] =
            xi[static_cast<std::size_t>(j)] - chi[static_cast<std::size_t>(j)];
    return {true, TimeshiftVector(std::move(eta)).canonicalized()};
}

/// Record of one stage of the reduction, kept for observability.
struct ReductionStage {
    int pivot_edge = 0;          // tree edge made instantaneous this stage
    double shift = 0.0;          // delay removed from it
    std::vector<int> shifted_nodes; // the W side of the fundamental section
    DelayDistribution delays_after;
};

struct ReductionResult {
    SpanningTree tree;
    TimeshiftVector timeshifts;            // canonical
    DelayDistribution reduced;             // tau~, zero on the tree
    std::vector<double> distinct_nonzero_delays; // among cotree delays, sorted
    std::vector<ReductionStage> stages;
};

namespace detail {

/// Positive values clustered under |a-b| <= tol*max(1,|a|,|b|); values within
/// tol of zero are dropped.  Returns the smallest member of each class.
inline std::vector<double> distinct_positive_values(const std::vector<double>& values,
                                                    double tol) {
    std::vector<double> pos;
    for (double v : values)
        if (v > tol) pos.push_back(v);
    std::sort(pos.begin(), pos.end());
    std::vector<double> reps;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        if (reps.empty() ||
            pos[i] - pos[i - 1] > tol * std::max({1.0, pos[i - 1], pos[i]}))
            reps.push_back(pos[i]);
    }
    return reps;
}

} // namespace detail

/// Number of distinct strictly positive delay values under the relative
/// tolerance tol (zeros excluded).
inline int count_distinct_delays(const DelayDistribution& tau, double tol) {
    if (tol < 0.0) throw domain_error("count_distinct_delays: tol must be >= 0");
    return static_cast<int>(detail::distinct_positive_values(tau.values(), tol).size());
}

/**
 * Staged spanning-tree reduction.  Produces timeshifts and a spanning tree
 * on which every transformed delay vanishes; each cotree delay ends up equal
 * to the roundtrip of its fundamental cycle.
 *
 * Stages: build a greedy minimum-delay spanning tree; while the tree carries
 * a positive delay, take the smallest such tree edge, split the nodes along
 * its fundamental section, and add that delay to the timeshift of every node
 * on the target side.  Delays are updated incrementally (the pivot edge is
 * zeroed by an exact subtraction of equal values), and all intermediate
 * distributions stay nonnegative.
 */
inline ReductionResult reduce_to_spanning_tree(const DelayDistribution& tau,
                                               const NetworkTopology& topology) {
    topology.require_connected("reduce_to_spanning_tree");
    if (!tau.matches(topology))
        throw domain_error("reduce_to_spanning_tree: distribution has " +
                           std::to_string(tau.size()) + " entries for " +
                           std::to_string(topology.edge_count()) + " edges");
    if (int bad = tau.first_negative_edge(); bad != 0)
        throw domain_error("reduce_to_spanning_tree: negative delay on edge " +
                           std::to_string(bad));

    const int n = topology.node_count();
    DelayDistribution current = tau;
    TimeshiftVector eta = TimeshiftVector::zero(n);
    SpanningTree tree = greedy_spanning_tree(topology, &current);
    std::vector<ReductionStage> stages;

    for (int stage = 0; stage < n; ++stage) {
        // smallest positive delay on a tree edge (ties by edge id, since
        // tree.edge_ids is sorted)
        int pivot = 0;
        for (int id : tree.edge_ids) {
            if (current(id) <= 0.0) continue;
            if (pivot == 0 || current(id) < current(pivot)) pivot = id;
        }
        if (pivot == 0) break; // tree fully instantaneous

        // fundamental section: the node bipartition left by removing the
        // pivot from the tree
        detail::DisjointSets sets(n);
        for (int id : tree.edge_ids) {
            if (id == pivot) continue;
            const auto& e = topology.edge(id);
            sets.unite(e.source, e.target);
        }
        const int target_root = sets.find(topology.target(pivot));
        const double shift = current(pivot);

        ReductionStage record;
        record.pivot_edge = pivot;
        record.shift = shift;
        for (int v = 1; v <= n; ++v) {
            if (sets.find(v) != target_root) continue;
            eta.at(v) += shift;
            record.shifted_nodes.push_back(v);
        }
        // incremental delay update across the section; the subtraction on
        // the pivot edge cancels exactly
        for (const auto& e : topology.edges()) {
            bool s_in = sets.find(e.source) == target_root;
            bool t_in = sets.find(e.target) == target_root;
            if (t_in && !s_in) current.at(e.id) -= shift;
            else if (s_in && !t_in) current.at(e.id) += shift;
        }
        if (int bad = current.first_negative_edge(); bad != 0)
            throw numeric_error("reduce_to_spanning_tree: delay on edge " + std::to_string(bad) +
                                " became negative during stage " + std::to_string(stage + 1));
        record.delays_after = current;
        stages.push_back(std::move(record));

        tree = greedy_spanning_tree(topology, &current);
    }

    std::vector<double> cotree;
    for (const auto& e : topology.edges())
        if (!tree.contains(e.id)) cotree.push_back(current(e.id));

    ReductionResult result;
    result.tree = std::move(tree);
    result.timeshifts = eta.canonicalized();
    result.reduced = std::move(current);
    result.distinct_nonzero_delays = detail::distinct_positive_values(cotree, 1e-9);
    result.stages = std::move(stages);
    return result;
}

struct ReducibilityCertificate {
    std::vector<int> assignment;  // per edge, 0..m (0 = instantaneous)
    std::vector<double> theta;    // values of the used labels, theta[q-1]
    std::vector<double> eta;      // per node, eta[0] pinned to 0
    double residual = 0.0;        // max over edges of |eta_t - eta_s + theta_q - tau|
};

struct ReducibilitySearchResult {
    std::optional<ReducibilityCertificate> certificate;
    double min_residual = std::numeric_limits<double>::infinity();
    std::uint64_t assignments_tried = 0;
};

namespace detail {

struct ReducibilityEnumerator {
    const NetworkTopology& topology;
    const DelayDistribution& tau;
    int m;
    double tol;
    ReducibilitySearchResult result;
    std::vector<int> assignment;

    ReducibilityEnumerator(const NetworkTopology& top, const DelayDistribution& t, int m_,
                           double tol_)
        : topology(top), tau(t), m(m_), tol(tol_),
          assignment(static_cast<std::size_t>(top.edge_count()), 0) {}

    // Least squares in (eta_2..eta_N, theta_1..theta_k) for the current
    // assignment; eta_1 is pinned to zero to remove the common-shift
    // direction.
    void evaluate(int labels_used) {
        const int n = topology.node_count();
        const int l = topology.edge_count();
        const int cols = (n - 1) + labels_used;
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(l, std::max(cols, 1));
        Eigen::VectorXd rhs(l);
        for (const auto& e : topology.edges()) {
            int row = e.id - 1;
            if (e.target != 1) g(row, e.target - 2) += 1.0;
            if (e.source != 1) g(row, e.source - 2) -= 1.0;
            int q = assignment[static_cast<std::size_t>(row)];
            if (q > 0) g(row, n - 1 + q - 1) += 1.0;
            rhs(row) = tau(e.id);
        }
        Eigen::VectorXd v = cols > 0
                                ? Eigen::VectorXd(g.colPivHouseholderQr().solve(rhs))
                                : Eigen::VectorXd::Zero(1);
        Eigen::VectorXd res = cols > 0 ? Eigen::VectorXd(g * v - rhs) : -rhs;
        double max_res = res.lpNorm<Eigen::Infinity>();

        ++result.assignments_tried;
        result.min_residual = std::min(result.min_residual, max_res);
        if (max_res > tol) return;

        // used theta values must be positive and pairwise distinct
        std::vector<double> theta(static_cast<std::size_t>(labels_used));
        for (int q = 1; q <= labels_used; ++q) theta[static_cast<std::size_t>(q) - 1] = v(n - 1 + q - 1);
        for (double th : theta)
            if (!(th > 1e-9)) return;
        for (std::size_t a = 0; a < theta.size(); ++a)
            for (std::size_t b = a + 1; b < theta.size(); ++b)
                if (std::abs(theta[a] - theta[b]) <= 1e-9) return;

        ReducibilityCertificate cert;
        cert.assignment = assignment;
        cert.theta = std::move(theta);
        cert.eta.assign(static_cast<std::size_t>(n), 0.0);
        for (int j = 2; j <= n; ++j) cert.eta[static_cast<std::size_t>(j) - 1] = v(j - 2);
        cert.residual = max_res;
        result.certificate = std::move(cert);
    }

    // Depth-first enumeration in lexicographic order over canonical
    // assignments: a new label may only be opened as (largest so far) + 1,
    // which quotients out permutations of the theta labels.
    bool recurse(std::size_t edge_index, int labels_used) {
        if (edge_index == assignment.size()) {
            evaluate(labels_used);
            return result.certificate.has_value();
        }
        int cap = std::min(m, labels_used + 1);
        for (int q = 0; q <= cap; ++q) {
            assignment[edge_index] = q;
            if (recurse(edge_index + 1, std::max(labels_used, q))) return true;
        }
        assignment[edge_index] = 0;
        return false;
    }
};

} // namespace detail

/**
 * Exhaustive search for a timeshift that reduces tau to at most m distinct
 * positive delays.  Enumerates assignments of edges to {0 (instantaneous),
 * theta_1, ..., theta_m} in lexicographic order, canonicalized so labels
 * appear in first-occurrence order, and accepts the first assignment whose
 * least-squares residual is within tol with positive, pairwise distinct
 * theta.  Returns no certificate when none exists; min_residual then
 * reports how far the best assignment was from solvable.
 */
inline ReducibilitySearchResult reducibility_search(const DelayDistribution& tau,
                                                    const NetworkTopology& topology, int m,
                                                    double tol = 1e-9,
                                                    int enumeration_guard = 14) {
    if (!tau.matches(topology))
        throw domain_error("reducibility_search: distribution has " + std::to_string(tau.size()) +
                           " entries for " + std::to_string(topology.edge_count()) + " edges");
    if (m < 0) throw domain_error("reducibility_search: m must be >= 0, got " + std::to_string(m));
    if (!(tol > 0.0)) throw domain_error("reducibility_search: tol must be > 0");
    if (topology.edge_count() > enumeration_guard)
        throw domain_error("reducibility_search: " + std::to_string(topology.edge_count()) +
                           " edges exceeds the enumeration guard of " +
                           std::to_string(enumeration_guard) +
                           "; use reduce_to_spanning_tree for large networks");

    detail::ReducibilityEnumerator search(topology, tau, m, tol);
    search.recurse(0, 0);
    return std::move(search.result);
}

} // namespace delaynet

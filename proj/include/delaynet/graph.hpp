#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "delaynet/errors.hpp"

namespace delaynet {

/**
 * Directed multigraph of a delay-coupled network.
 *
 * Nodes are 1..N.  Edges are kept as an explicit list keyed by a dense
 * 1-based edge id, so parallel edges and self-loops are first-class.
 */
class NetworkTopology {
  public:
    struct Edge {
        int id;
        int source;
        int target;
    };

    NetworkTopology(int node_count, std::vector<Edge> edges)
        : node_count_(node_count), edges_(std::move(edges)) {
        if (node_count_ <= 0)
            throw domain_error("node count must be positive, got " + std::to_string(node_count_));
        std::sort(edges_.begin(), edges_.end(),
                  [](const Edge& a, const Edge& b) { return a.id < b.id; });
        for (std::size_t i = 0; i < edges_.size(); ++i) {
            const Edge& e = edges_[i];
            if (e.id != static_cast<int>(i) + 1)
                throw domain_error("edge ids must be dense 1..L; found id " +
                                   std::to_string(e.id) + " at position " + std::to_string(i + 1));
            if (e.source < 1 || e.source > node_count_)
                throw domain_error("edge " + std::to_string(e.id) + ": source node " +
                                   std::to_string(e.source) + " out of range 1.." +
                                   std::to_string(node_count_));
            if (e.target < 1 || e.target > node_count_)
                throw domain_error("edge " + std::to_string(e.id) + ": target node " +
                                   std::to_string(e.target) + " out of range 1.." +
                                   std::to_string(node_count_));
        }
    }

    int node_count() const { return node_count_; }
    int edge_count() const { return static_cast<int>(edges_.size()); }
    const std::vector<Edge>& edges() const { return edges_; }

    const Edge& edge(int id) const {
        if (id < 1 || id > edge_count())
            throw domain_error("edge id " + std::to_string(id) + " out of range 1.." +
                               std::to_string(edge_count()));
        return edges_[static_cast<std::size_t>(id) - 1];
    }

    int source(int edge_id) const { return edge(edge_id).source; }
    int target(int edge_id) const { return edge(edge_id).target; }

    /// Edges feeding node j (t(l) = j), in edge-id order.
    std::vector<int> input_set(int node) const {
        check_node(node);
        std::vector<int> in;
        for (const Edge& e : edges_)
            if (e.target == node) in.push_back(e.id);
        return in;
    }

    /// Edges leaving node j (s(l) = j), in edge-id order.
    std::vector<int> output_set(int node) const {
        check_node(node);
        std::vector<int> out;
        for (const Edge& e : edges_)
            if (e.source == node) out.push_back(e.id);
        return out;
    }

    /// Connected components of the underlying undirected graph, as sorted
    /// node lists ordered by smallest member.
    std::vector<std::vector<int>> components() const {
        std::vector<int> label(static_cast<std::size_t>(node_count_) + 1, 0);
        int next = 0;
        for (int start = 1; start <= node_count_; ++start) {
            if (label[start] != 0) continue;
            ++next;
            std::queue<int> frontier;
            frontier.push(start);
            label[start] = next;
            while (!frontier.empty()) {
                int v = frontier.front();
                frontier.pop();
                for (const Edge& e : edges_) {
                    int other = -1;
                    if (e.source == v) other = e.target;
                    else if (e.target == v) other = e.source;
                    if (other > 0 && label[other] == 0) {
                        label[other] = next;
                        frontier.push(other);
                    }
                }
            }
        }
        std::vector<std::vector<int>> comps(static_cast<std::size_t>(next));
        for (int v = 1; v <= node_count_; ++v)
            comps[static_cast<std::size_t>(label[v]) - 1].push_back(v);
        return comps;
    }

    bool connected() const { return components().size() == 1; }

    /// Throws with a description of the components when the undirected
    /// graph is not connected.
    void require_connected(const std::string& op) const {
        auto comps = components();
        if (comps.size() <= 1) return;
        std::ostringstream msg;
        msg << op << " requires a connected network; found " << comps.size() << " components:";
        for (std::size_t i = 0; i < comps.size(); ++i) {
            msg << " {";
            for (std::size_t k = 0; k < comps[i].size(); ++k)
                msg << (k ? "," : "") << comps[i][k];
            msg << "}";
        }
        throw domain_error(msg.str());
    }

  private:
    void check_node(int node) const {
        if (node < 1 || node > node_count_)
            throw domain_error("node index " + std::to_string(node) + " out of range 1.." +
                               std::to_string(node_count_));
    }

    int node_count_;
    std::vector<Edge> edges_;
};

/**
 * Map edge id -> transmission delay.  Stored densely by edge id; the
 * distribution is tied to the topology it was built against only by length,
 * so callers pass the topology alongside where structure matters.
 */
class DelayDistribution {
  public:
    DelayDistribution() = default;
    explicit DelayDistribution(std::vector<double> delays) : delays_(std::move(delays)) {}

    static DelayDistribution zero(const NetworkTopology& topology) {
        return DelayDistribution(std::vector<double>(topology.edges().size(), 0.0));
    }

    int size() const { return static_cast<int>(delays_.size()); }
    const std::vector<double>& values() const { return delays_; }

    double operator()(int edge_id) const {
        if (edge_id < 1 || edge_id > size())
            throw domain_error("delay lookup: edge id " + std::to_string(edge_id) +
                               " out of range 1.." + std::to_string(size()));
        return delays_[static_cast<std::size_t>(edge_id) - 1];
    }

    double& at(int edge_id) {
        if (edge_id < 1 || edge_id > size())
            throw domain_error("delay lookup: edge id " + std::to_string(edge_id) +
                               " out of range 1.." + std::to_string(size()));
        return delays_[static_cast<std::size_t>(edge_id) - 1];
    }

    bool nonnegative(double tol = 0.0) const {
        for (double d : delays_)
            if (d < -tol) return false;
        return true;
    }

    /// First edge id with a delay below -tol, or 0 when none.
    int first_negative_edge(double tol = 0.0) const {
        for (int id = 1; id <= size(); ++id)
            if (delays_[static_cast<std::size_t>(id) - 1] < -tol) return id;
        return 0;
    }

    bool matches(const NetworkTopology& topology) const {
        return size() == topology.edge_count();
    }

  private:
    std::vector<double> delays_;
};

/**
 * Per-node timeshifts eta_j.  Canonical form has min eta = 0 and all
 * entries nonnegative; the transformed delays are invariant under adding a
 * common constant, so canonicalization is a gauge choice.
 */
class TimeshiftVector {
  public:
    TimeshiftVector() = default;
    explicit TimeshiftVector(std::vector<double> shifts) : shifts_(std::move(shifts)) {}

    static TimeshiftVector zero(int node_count) {
        return TimeshiftVector(std::vector<double>(static_cast<std::size_t>(node_count), 0.0));
    }

    int size() const { return static_cast<int>(shifts_.size()); }
    const std::vector<double>& values() const { return shifts_; }
    double operator()(int node) const { return shifts_.at(static_cast<std::size_t>(node) - 1); }
    double& at(int node) { return shifts_.at(static_cast<std::size_t>(node) - 1); }

    double max_shift() const {
        return shifts_.empty() ? 0.0 : *std::max_element(shifts_.begin(), shifts_.end());
    }
    double min_shift() const {
        return shifts_.empty() ? 0.0 : *std::min_element(shifts_.begin(), shifts_.end());
    }

    bool canonical(double tol = 0.0) const {
        if (shifts_.empty()) return true;
        return min_shift() >= -tol && min_shift() <= tol;
    }

    /// Subtracts the minimum so that min eta = 0.
    TimeshiftVector canonicalized() const {
        std::vector<double> out = shifts_;
        double lo = min_shift();
        for (double& v : out) v -= lo;
        return TimeshiftVector(std::move(out));
    }

    /// Reverse shifts eta~_j = max_k eta_k - eta_j.
    TimeshiftVector reversed() const {
        std::vector<double> out = shifts_;
        double hi = max_shift();
        for (double& v : out) v = hi - v;
        return TimeshiftVector(std::move(out));
    }

  private:
    std::vector<double> shifts_;
};

/**
 * Closed walk in the underlying undirected graph.  signs[j] = +1 when the
 * walk traverses edge_ids[j] along its orientation, -1 against it; the walk
 * always begins by traversing edge_ids[0] forward (signs[0] = +1).  nodes is
 * the witness node sequence, nodes.front() == nodes.back().
 */
struct Semicycle {
    std::vector<int> edge_ids;
    std::vector<int> signs;
    std::vector<int> nodes;
};

/// Same cycle walked the other way around; every sign flips.
inline Semicycle reverse_traversal(const Semicycle& cycle) {
    Semicycle out;
    std::size_t k = cycle.edge_ids.size();
    out.edge_ids.reserve(k);
    out.signs.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.edge_ids.push_back(cycle.edge_ids[k - 1 - i]);
        out.signs.push_back(-cycle.signs[k - 1 - i]);
    }
    out.nodes.assign(cycle.nodes.rbegin(), cycle.nodes.rend());
    return out;
}

/// Spanning tree as a sorted set of edge ids (size N-1).
struct SpanningTree {
    std::vector<int> edge_ids;

    bool contains(int edge_id) const {
        return std::binary_search(edge_ids.begin(), edge_ids.end(), edge_id);
    }
};

namespace detail {

/// Union-find over nodes 1..N, used by the greedy tree construction.
class DisjointSets {
  public:
    explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n) + 1) {
        std::iota(parent_.begin(), parent_.end(), 0);
    }
    int find(int v) {
        while (parent_[static_cast<std::size_t>(v)] != v) {
            parent_[static_cast<std::size_t>(v)] =
                parent_[static_cast<std::size_t>(parent_[static_cast<std::size_t>(v)])];
            v = parent_[static_cast<std::size_t>(v)];
        }
        return v;
    }
    bool unite(int a, int b) {
        int ra = find(a), rb = find(b);
        if (ra == rb) return false;
        parent_[static_cast<std::size_t>(ra)] = rb;
        return true;
    }

  private:
    std::vector<int> parent_;
};

} // namespace detail

/// Cycle space dimension C = L - N + 1 of a connected multigraph.
inline int essential_delay_count(const NetworkTopology& topology) {
    topology.require_connected("essential_delay_count");
    return topology.edge_count() - topology.node_count() + 1;
}

/**
 * Greedy (Kruskal) spanning tree: edges considered by ascending
 * (weight, edge id); an edge is taken whenever it joins two components.
 * With weights == nullptr the ordering is by edge id alone.
 */
inline SpanningTree greedy_spanning_tree(const NetworkTopology& topology,
                                         const DelayDistribution* weights = nullptr) {
    topology.require_connected("greedy_spanning_tree");
    std::vector<int> order(static_cast<std::size_t>(topology.edge_count()));
    std::iota(order.begin(), order.end(), 1);
    if (weights != nullptr) {
        if (!weights->matches(topology))
            throw domain_error("greedy_spanning_tree: delay distribution has " +
                               std::to_string(weights->size()) + " entries for " +
                               std::to_string(topology.edge_count()) + " edges");
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return (*weights)(a) < (*weights)(b);
        });
    }
    detail::DisjointSets sets(topology.node_count());
    SpanningTree tree;
    for (int id : order) {
        const auto& e = topology.edge(id);
        if (sets.unite(e.source, e.target)) tree.edge_ids.push_back(id);
    }
    std::sort(tree.edge_ids.begin(), tree.edge_ids.end());
    return tree;
}

inline bool is_valid_tree(const NetworkTopology& topology, const SpanningTree& tree) {
    if (static_cast<int>(tree.edge_ids.size()) != topology.node_count() - 1) return false;
    detail::DisjointSets sets(topology.node_count());
    for (int id : tree.edge_ids) {
        if (id < 1 || id > topology.edge_count()) return false;
        const auto& e = topology.edge(id);
        if (!sets.unite(e.source, e.target)) return false; // cycle
    }
    return true;
}

namespace detail {

/// Unique path between two nodes inside a tree, as (edge id, forward?) steps.
inline std::vector<std::pair<int, bool>> tree_path(const NetworkTopology& topology,
                                                   const SpanningTree& tree, int from, int to) {
    // BFS over tree edges; parent[] remembers the edge used to reach a node.
    std::vector<int> parent_edge(static_cast<std::size_t>(topology.node_count()) + 1, 0);
    std::vector<int> parent_node(static_cast<std::size_t>(topology.node_count()) + 1, 0);
    std::vector<char> seen(static_cast<std::size_t>(topology.node_count()) + 1, 0);
    std::queue<int> frontier;
    frontier.push(from);
    seen[static_cast<std::size_t>(from)] = 1;
    while (!frontier.empty() && !seen[static_cast<std::size_t>(to)]) {
        int v = frontier.front();
        frontier.pop();
        for (int id : tree.edge_ids) {
            const auto& e = topology.edge(id);
            int other = -1;
            if (e.source == v) other = e.target;
            else if (e.target == v) other = e.source;
            if (other > 0 && !seen[static_cast<std::size_t>(other)]) {
                seen[static_cast<std::size_t>(other)] = 1;
                parent_edge[static_cast<std::size_t>(other)] = id;
                parent_node[static_cast<std::size_t>(other)] = v;
                frontier.push(other);
            }
        }
    }
    if (!seen[static_cast<std::size_t>(to)])
        throw domain_error("tree_path: nodes " + std::to_string(from) + " and " +
                           std::to_string(to) + " not connected by the tree");
    std::vector<std::pair<int, bool>> path; // collected to -> from, then reversed
    for (int v = to; v != from; v = parent_node[static_cast<std::size_t>(v)]) {
        int id = parent_edge[static_cast<std::size_t>(v)];
        const auto& e = topology.edge(id);
        int prev = parent_node[static_cast<std::size_t>(v)];
        // the step walks prev -> v; forward iff this matches the edge's own orientation
        bool forward = (e.source == prev && e.target == v);
        if (!forward && !(e.target == prev && e.source == v))
            throw domain_error("tree_path: inconsistent tree edge " + std::to_string(id));
        path.emplace_back(id, forward);
    }
    std::reverse(path.begin(), path.end());
    return path;
}

} // namespace detail

/**
 * One semicycle per cotree edge, ordered by cotree edge id.  Each cycle
 * starts by traversing its cotree edge forward (sign +1) and closes through
 * the unique tree path from t(l) back to s(l).
 */
inline std::vector<Semicycle> fundamental_cycles(const NetworkTopology& topology,
                                                 const SpanningTree& tree) {
    if (!is_valid_tree(topology, tree))
        throw domain_error("fundamental_cycles: edge set is not a spanning tree of the topology");
    std::vector<Semicycle> cycles;
    for (const auto& e : topology.edges()) {
        if (tree.contains(e.id)) continue;
        Semicycle c;
        c.edge_ids.push_back(e.id);
        c.signs.push_back(+1);
        c.nodes.push_back(e.source);
        c.nodes.push_back(e.target);
        if (e.source != e.target) {
            for (auto [id, forward] : detail::tree_path(topology, tree, e.target, e.source)) {
                c.edge_ids.push_back(id);
                c.signs.push_back(forward ? +1 : -1);
                const auto& te = topology.edge(id);
                c.nodes.push_back(forward ? te.target : te.source);
            }
        }
        cycles.push_back(std::move(c));
    }
    return cycles;
}

/// Signed delay sum around a semicycle.
inline double delay_sum(const Semicycle& cycle, const DelayDistribution& tau) {
    double sum = 0.0;
    for (std::size_t i = 0; i < cycle.edge_ids.size(); ++i)
        sum += cycle.signs[i] * tau(cycle.edge_ids[i]);
    return sum;
}

/// Roundtrip: |delay sum|, invariant under traversal direction.
inline double roundtrip(const Semicycle& cycle, const DelayDistribution& tau) {
    return std::abs(delay_sum(cycle, tau));
}

} // namespace delaynet

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "delaynet/errors.hpp"
#include "delaynet/graph.hpp"

namespace delaynet {

enum class SystemKind { linear, mackey_glass };

/**
 * Node dynamics of the network:
 *
 *   linear:        x_j' = d_j x_j + sum_{l in I_j} a_l u_l
 *   mackey_glass:  x_j' = -gamma_j x_j + sum_{l in I_j} a_l beta_j u_l / (1 + u_l^{n_j})
 *
 * where u_l = x_{s(l)}(t - tau(l)).  Intrinsic terms are part of f_j, not
 * zero-delay self-loops, so the edge list stays the pure coupling topology.
 * The per-edge response parameters (gain, exponent of the target node) are
 * resolved against the topology at construction.
 */
class SystemDefinition {
  public:
    static SystemDefinition linear(const NetworkTopology& topology,
                                   std::vector<double> self_coefficients,
                                   std::vector<double> edge_weights) {
        SystemDefinition sys;
        sys.kind_ = SystemKind::linear;
        sys.intrinsic_coeff_ = std::move(self_coefficients);
        sys.weights_ = std::move(edge_weights);
        sys.edge_gain_.assign(static_cast<std::size_t>(topology.edge_count()), 1.0);
        sys.edge_exponent_.assign(static_cast<std::size_t>(topology.edge_count()), 1.0);
        sys.validate(topology);
        return sys;
    }

    static SystemDefinition mackey_glass(const NetworkTopology& topology,
                                         std::vector<double> decay, std::vector<double> gain,
                                         std::vector<double> exponent,
                                         std::vector<double> edge_weights) {
        SystemDefinition sys;
        sys.kind_ = SystemKind::mackey_glass;
        if (gain.size() != decay.size() || exponent.size() != decay.size())
            throw domain_error("mackey_glass: gamma/beta/n must all have one entry per node");
        sys.intrinsic_coeff_.resize(decay.size());
        for (std::size_t j = 0; j < decay.size(); ++j) {
            if (!(decay[j] > 0.0))
                throw domain_error("mackey_glass: decay gamma must be > 0 at node " +
                                   std::to_string(j + 1));
            sys.intrinsic_coeff_[j] = -decay[j];
        }
        for (std::size_t j = 0; j < exponent.size(); ++j)
            if (!(exponent[j] >= 1.0))
                throw domain_error("mackey_glass: exponent n must be >= 1 at node " +
                                   std::to_string(j + 1));
        sys.node_gain_ = std::move(gain);
        sys.node_exponent_ = std::move(exponent);
        sys.weights_ = std::move(edge_weights);
        sys.edge_gain_.resize(static_cast<std::size_t>(topology.edge_count()));
        sys.edge_exponent_.resize(static_cast<std::size_t>(topology.edge_count()));
        for (const auto& e : topology.edges()) {
            sys.edge_gain_[static_cast<std::size_t>(e.id) - 1] =
                sys.node_gain_[static_cast<std::size_t>(e.target) - 1];
            sys.edge_exponent_[static_cast<std::size_t>(e.id) - 1] =
                sys.node_exponent_[static_cast<std::size_t>(e.target) - 1];
        }
        sys.validate(topology);
        return sys;
    }

    SystemKind kind() const { return kind_; }
    int node_count() const { return static_cast<int>(intrinsic_coeff_.size()); }
    double edge_weight(int edge_id) const {
        return weights_.at(static_cast<std::size_t>(edge_id) - 1);
    }

    /// Intrinsic term of f_j at state x.
    double intrinsic(int node, double x) const {
        return intrinsic_coeff_[static_cast<std::size_t>(node) - 1] * x;
    }
    double intrinsic_derivative(int node) const {
        return intrinsic_coeff_[static_cast<std::size_t>(node) - 1];
    }

    /// Contribution of edge l given its delayed source value u.
    double coupling(int edge_id, double u) const {
        std::size_t i = static_cast<std::size_t>(edge_id) - 1;
        if (kind_ == SystemKind::linear) return weights_[i] * u;
        double un = std::pow(u, edge_exponent_[i]);
        return weights_[i] * edge_gain_[i] * u / (1.0 + un);
    }

    /// d/du of the edge contribution, used by Newton solvers and the
    /// variational equations.
    double coupling_derivative(int edge_id, double u) const {
        std::size_t i = static_cast<std::size_t>(edge_id) - 1;
        if (kind_ == SystemKind::linear) return weights_[i];
        double n = edge_exponent_[i];
        double un = std::pow(u, n);
        double denom = (1.0 + un) * (1.0 + un);
        return weights_[i] * edge_gain_[i] * (1.0 + (1.0 - n) * un) / denom;
    }

    const std::vector<double>& intrinsic_coefficients() const { return intrinsic_coeff_; }
    const std::vector<double>& edge_weights() const { return weights_; }
    // per-node parameter views for serialization (mackey_glass only)
    const std::vector<double>& node_gains() const { return node_gain_; }
    const std::vector<double>& node_exponents() const { return node_exponent_; }

  private:
    void validate(const NetworkTopology& topology) const {
        if (node_count() != topology.node_count())
            throw domain_error("system: expected " + std::to_string(topology.node_count()) +
                               " per-node parameters, got " + std::to_string(node_count()));
        if (weights_.size() != static_cast<std::size_t>(topology.edge_count()))
            throw domain_error("system: expected " + std::to_string(topology.edge_count()) +
                               " edge weights, got " + std::to_string(weights_.size()));
        for (std::size_t i = 0; i < weights_.size(); ++i)
            if (!std::isfinite(weights_[i]))
                throw domain_error("system: non-finite weight on edge " + std::to_string(i + 1));
        for (std::size_t j = 0; j < intrinsic_coeff_.size(); ++j)
            if (!std::isfinite(intrinsic_coeff_[j]))
                throw domain_error("system: non-finite intrinsic coefficient at node " +
                                   std::to_string(j + 1));
    }

    SystemKind kind_ = SystemKind::linear;
    std::vector<double> intrinsic_coeff_; // d_j, or -gamma_j for mackey_glass
    std::vector<double> weights_;         // a_l
    std::vector<double> node_gain_, node_exponent_;
    std::vector<double> edge_gain_;       // beta of the target node (1 for linear)
    std::vector<double> edge_exponent_;   // n of the target node (1 for linear)
};

} // namespace delaynet

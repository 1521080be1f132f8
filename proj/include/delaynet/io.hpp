#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "delaynet/dde.hpp"
#include "delaynet/equivalence.hpp"
#include "delaynet/errors.hpp"
#include "delaynet/graph.hpp"
#include "delaynet/reduce.hpp"
#include "delaynet/system.hpp"

namespace delaynet::io {

using nlohmann::json;

// ---------------------------------------------------------------------------
// deterministic JSON output: keys sorted (nlohmann objects are ordered maps),
// floats at 17 significant digits

inline std::string format_double(double v) {
    if (!std::isfinite(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    std::string s(buf);
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
        s += ".0";
    return s;
}

inline void dump_value(const json& j, std::string& out, int indent) {
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    const std::string pad_in(static_cast<std::size_t>(indent + 1) * 2, ' ');
    switch (j.type()) {
        case json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += "{\n";
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out += ",\n";
                first = false;
                out += pad_in + json(it.key()).dump() + ": ";
                dump_value(it.value(), out, indent + 1);
            }
            out += "\n" + pad + "}";
            return;
        }
        case json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            out += "[\n";
            bool first = true;
            for (const auto& item : j) {
                if (!first) out += ",\n";
                first = false;
                out += pad_in;
                dump_value(item, out, indent + 1);
            }
            out += "\n" + pad + "]";
            return;
        }
        case json::value_t::number_float:
            out += format_double(j.get<double>());
            return;
        default:
            out += j.dump();
            return;
    }
}

inline std::string dump_json(const json& j) {
    std::string out;
    dump_value(j, out, 0);
    out += "\n";
    return out;
}

// ---------------------------------------------------------------------------
// network schema

struct ParsedNetwork {
    NetworkTopology topology{1, {}};
    DelayDistribution tau;
    std::optional<SystemDefinition> system;
};

namespace schema {

inline void reject_unknown(const json& obj, const std::vector<std::string>& allowed,
                           const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const auto& key : allowed)
            if (it.key() == key) ok = true;
        if (!ok) throw schema_error("unknown field " + path + "." + it.key());
    }
}

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) throw schema_error("missing field " + path + "." + key);
    return *it;
}

inline int require_int(const json& v, const std::string& path) {
    if (!v.is_number_integer() && !v.is_number_unsigned())
        throw schema_error("field " + path + " must be an integer");
    return v.get<int>();
}

inline double require_finite(const json& v, const std::string& path) {
    if (!v.is_number()) throw schema_error("field " + path + " must be a number");
    double d = v.get<double>();
    if (!std::isfinite(d)) throw schema_error("field " + path + " must be finite");
    return d;
}

inline std::vector<double> require_array(const json& v, std::size_t n, const std::string& path) {
    if (!v.is_array() || v.size() != n)
        throw schema_error("field " + path + " must be an array of " + std::to_string(n) +
                           " numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(require_finite(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

} // namespace schema

inline ParsedNetwork parse_network_json(const json& doc) {
    if (!doc.is_object()) throw schema_error("top level must be an object");
    schema::reject_unknown(doc, {"nodes", "edges", "system"}, "$");
    int nodes = schema::require_int(schema::require(doc, "nodes", "$"), "$.nodes");
    if (nodes < 1) throw schema_error("$.nodes must be >= 1");

    const json& edges = schema::require(doc, "edges", "$");
    if (!edges.is_array()) throw schema_error("$.edges must be an array");
    std::vector<NetworkTopology::Edge> edge_list;
    std::vector<double> delays(edges.size(), 0.0);
    std::vector<char> seen_id(edges.size() + 1, 0);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        std::string path = "edges[" + std::to_string(i) + "]";
        const json& e = edges[i];
        if (!e.is_object()) throw schema_error(path + " must be an object");
        schema::reject_unknown(e, {"id", "source", "target", "delay"}, path);
        int id = schema::require_int(schema::require(e, "id", path), path + ".id");
        if (id < 1 || id > static_cast<int>(edges.size()))
            throw schema_error(path + ".id = " + std::to_string(id) + " outside 1.." +
                               std::to_string(edges.size()));
        if (seen_id[static_cast<std::size_t>(id)])
            throw schema_error("duplicate edge id at " + path + ".id");
        seen_id[static_cast<std::size_t>(id)] = 1;
        int source = schema::require_int(schema::require(e, "source", path), path + ".source");
        int target = schema::require_int(schema::require(e, "target", path), path + ".target");
        double delay = schema::require_finite(schema::require(e, "delay", path), path + ".delay");
        if (delay < 0.0)
            throw domain_error("negative delay " + format_double(delay) + " on edge " +
                               std::to_string(id) + " (" + path + ".delay)");
        edge_list.push_back({id, source, target});
        delays[static_cast<std::size_t>(id) - 1] = delay;
    }

    ParsedNetwork net{NetworkTopology(nodes, std::move(edge_list)),
                      DelayDistribution(std::move(delays)), std::nullopt};

    if (auto it = doc.find("system"); it != doc.end()) {
        const json& sys = *it;
        if (!sys.is_object()) throw schema_error("$.system must be an object");
        schema::reject_unknown(sys, {"kind", "params", "edge_weights"}, "$.system");
        std::string kind = schema::require(sys, "kind", "$.system").get<std::string>();
        const json& params = schema::require(sys, "params", "$.system");
        if (!params.is_object()) throw schema_error("$.system.params must be an object");

        std::vector<double> weights(static_cast<std::size_t>(net.topology.edge_count()), 1.0);
        if (auto w = sys.find("edge_weights"); w != sys.end()) {
            if (!w->is_array()) throw schema_error("$.system.edge_weights must be an array");
            std::vector<char> seen(weights.size() + 1, 0);
            for (std::size_t i = 0; i < w->size(); ++i) {
                std::string path = "$.system.edge_weights[" + std::to_string(i) + "]";
                const json& entry = (*w)[i];
                if (!entry.is_object()) throw schema_error(path + " must be an object");
                schema::reject_unknown(entry, {"id", "weight"}, path);
                int id = schema::require_int(schema::require(entry, "id", path), path + ".id");
                if (id < 1 || id > net.topology.edge_count())
                    throw schema_error(path + ".id = " + std::to_string(id) +
                                       " is not an edge id");
                if (seen[static_cast<std::size_t>(id)])
                    throw schema_error("duplicate edge id at " + path + ".id");
                seen[static_cast<std::size_t>(id)] = 1;
                weights[static_cast<std::size_t>(id) - 1] =
                    schema::require_finite(schema::require(entry, "weight", path),
                                           path + ".weight");
            }
        }

        std::size_t n = static_cast<std::size_t>(nodes);
        if (kind == "linear") {
            schema::reject_unknown(params, {"d"}, "$.system.params");
            auto d = schema::require_array(schema::require(params, "d", "$.system.params"), n,
                                           "$.system.params.d");
            net.system = SystemDefinition::linear(net.topology, std::move(d), std::move(weights));
        } else if (kind == "mackey_glass") {
            schema::reject_unknown(params, {"gamma", "beta", "n"}, "$.system.params");
            auto gamma = schema::require_array(
                schema::require(params, "gamma", "$.system.params"), n, "$.system.params.gamma");
            auto beta = schema::require_array(schema::require(params, "beta", "$.system.params"),
                                              n, "$.system.params.beta");
            auto exponent = schema::require_array(
                schema::require(params, "n", "$.system.params"), n, "$.system.params.n");
            net.system = SystemDefinition::mackey_glass(net.topology, std::move(gamma),
                                                        std::move(beta), std::move(exponent),
                                                        std::move(weights));
        } else {
            throw schema_error("$.system.kind must be \"linear\" or \"mackey_glass\"");
        }
    }
    return net;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw schema_error("cannot open " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& err) {
        throw schema_error(path + ": " + err.what());
    }
    return doc;
}

inline ParsedNetwork parse_network(const std::string& path) {
    return parse_network_json(read_json_file(path));
}

inline json network_to_json(const NetworkTopology& topology, const DelayDistribution& tau,
                            const std::optional<SystemDefinition>& system) {
    json doc;
    doc["nodes"] = topology.node_count();
    json edges = json::array();
    for (const auto& e : topology.edges()) {
        json entry;
        entry["id"] = e.id;
        entry["source"] = e.source;
        entry["target"] = e.target;
        entry["delay"] = tau(e.id);
        edges.push_back(entry);
    }
    doc["edges"] = edges;
    if (system) {
        json sys;
        json params;
        if (system->kind() == SystemKind::linear) {
            sys["kind"] = "linear";
            params["d"] = system->intrinsic_coefficients();
        } else {
            sys["kind"] = "mackey_glass";
            std::vector<double> gamma;
            for (double c : system->intrinsic_coefficients()) gamma.push_back(-c);
            params["gamma"] = gamma;
            params["beta"] = system->node_gains();
            params["n"] = system->node_exponents();
        }
        sys["params"] = params;
        json weights = json::array();
        for (int id = 1; id <= topology.edge_count(); ++id) {
            json entry;
            entry["id"] = id;
            entry["weight"] = system->edge_weight(id);
            weights.push_back(entry);
        }
        sys["edge_weights"] = weights;
        doc["system"] = sys;
    }
    return doc;
}

// ---------------------------------------------------------------------------
// result documents

inline json reduction_to_json(const ReductionResult& red, const NetworkTopology& topology) {
    json doc;
    doc["tree_edges"] = red.tree.edge_ids;
    doc["eta"] = red.timeshifts.values();
    json delays = json::array();
    for (int id = 1; id <= red.reduced.size(); ++id) {
        json entry;
        entry["id"] = id;
        entry["delay"] = red.reduced(id);
        delays.push_back(entry);
    }
    doc["reduced_delays"] = delays;
    doc["distinct_delays"] = red.distinct_nonzero_delays;
    doc["essential_count"] = essential_delay_count(topology);
    return doc;
}

inline json cycles_to_json(const NetworkTopology& topology, const DelayDistribution& tau,
                           const SpanningTree& tree) {
    json doc;
    doc["tree_edges"] = tree.edge_ids;
    doc["essential_count"] = essential_delay_count(topology);
    json cycles = json::array();
    for (const Semicycle& c : fundamental_cycles(topology, tree)) {
        json entry;
        entry["cotree_edge"] = c.edge_ids.front();
        entry["edges"] = c.edge_ids;
        entry["signs"] = c.signs;
        entry["nodes"] = c.nodes;
        entry["delay_sum"] = delay_sum(c, tau);
        entry["roundtrip"] = roundtrip(c, tau);
        cycles.push_back(entry);
    }
    doc["cycles"] = cycles;
    return doc;
}

inline json relatable_to_json(const RelatableResult& rel) {
    json doc;
    doc["relatable"] = rel.relatable;
    if (rel.relatable) doc["eta"] = rel.eta.values();
    return doc;
}

inline json reducibility_to_json(const ReducibilitySearchResult& res) {
    json doc;
    doc["feasible"] = res.certificate.has_value();
    doc["assignments_tried"] = res.assignments_tried;
    doc["min_residual"] = res.min_residual;
    if (res.certificate) {
        doc["assignment"] = res.certificate->assignment;
        doc["theta"] = res.certificate->theta;
        doc["eta"] = res.certificate->eta;
        doc["residual"] = res.certificate->residual;
    }
    return doc;
}

inline json spectrum_to_json(const CharacteristicSpectrum& spec) {
    json roots = json::array();
    for (std::size_t i = 0; i < spec.roots.size(); ++i)
        roots.push_back(json::array({spec.roots[i].real(), spec.roots[i].imag()}));
    return roots;
}

inline json mle_to_json(const MleEstimate& est) {
    json doc;
    doc["value"] = est.value;
    doc["half_width"] = est.half_width;
    if (est.lower_bound_only) doc["lower_bound_only"] = true;
    return doc;
}

inline json report_to_json(const EquivalenceReport& report) {
    json doc;
    doc["max_trajectory_deviation"] = report.max_trajectory_deviation;
    doc["spectra_matched"] = report.spectra_matched;
    doc["max_root_pairing_distance"] = report.max_root_pairing_distance;
    doc["roots_original"] = spectrum_to_json(report.roots_original);
    doc["roots_reduced"] = spectrum_to_json(report.roots_reduced);
    doc["mle_original"] = mle_to_json(report.mle_original);
    doc["mle_reduced"] = mle_to_json(report.mle_reduced);
    json tol;
    tol["pairing"] = report.pairing_tolerance;
    tol["residual"] = report.residual_tolerance;
    tol["boundary_margin"] = report.boundary_margin;
    doc["tolerances"] = tol;
    return doc;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string trajectory_to_csv(const Trajectory& traj) {
    std::string out = "t";
    for (int j = 1; j <= traj.node_count(); ++j) out += ",x" + std::to_string(j);
    out += "\n";
    char buf[40];
    for (int i = 0; i <= traj.last_index(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", traj.time_at(i));
        out += buf;
        for (int j = 0; j < traj.node_count(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g",
                          traj.values[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]);
            out += ",";
            out += buf;
        }
        out += "\n";
    }
    return out;
}

/// History from a CSV with header t,x1,...,xN; rows must form a uniform grid
/// ending at t = 0.
inline HistorySegment parse_history_csv(const std::string& path, int nodes) {
    std::ifstream in(path);
    if (!in) throw schema_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw schema_error(path + ": empty file");
    std::vector<double> times;
    std::vector<std::vector<double>> columns(static_cast<std::size_t>(nodes));
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> fields;
        while (std::getline(ss, cell, ',')) {
            try {
                fields.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw schema_error(path + ": row " + std::to_string(row) +
                                   ": cannot parse \"" + cell + "\" as a number");
            }
        }
        if (static_cast<int>(fields.size()) != nodes + 1)
            throw schema_error(path + ": row " + std::to_string(row) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(nodes + 1));
        times.push_back(fields[0]);
        for (int j = 0; j < nodes; ++j)
            columns[static_cast<std::size_t>(j)].push_back(fields[static_cast<std::size_t>(j) + 1]);
    }
    if (times.size() < 2) throw schema_error(path + ": need at least two history rows");
    double dt = times[1] - times[0];
    if (!(dt > 0.0)) throw schema_error(path + ": times must increase");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (std::abs(times[i] - times[i - 1] - dt) > 1e-9 * std::max(1.0, dt))
            throw schema_error(path + ": non-uniform time grid at row " + std::to_string(i + 2));
    if (std::abs(times.back()) > 1e-9)
        throw schema_error(path + ": history must end at t = 0");

    HistorySegment h;
    h.dt = dt;
    h.len = static_cast<int>(times.size()) - 1;
    h.values = std::move(columns);
    h.slopes.assign(static_cast<std::size_t>(nodes), std::vector<double>(times.size(), 0.0));
    for (int j = 0; j < nodes; ++j) {
        const auto& v = h.values[static_cast<std::size_t>(j)];
        auto& s = h.slopes[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i == 0) s[i] = (v[1] - v[0]) / dt;
            else if (i + 1 == v.size()) s[i] = (v[i] - v[i - 1]) / dt;
            else s[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
        }
    }
    return h;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw schema_error("cannot write " + path);
    out << content;
}

} // namespace delaynet::io

// Command-line front end for the delay-network reduction library: reads
// network JSON files, dispatches to the reduction / simulation /
// certification pipelines, and writes JSON or CSV results.

#include <cstdint>
#include <deque>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "delaynet/delaynet.hpp"

namespace {

using namespace delaynet;
using nlohmann::json;

struct CommonOptions {
    double t_end = 50.0;
    double dt = 1e-3;
    double tol = 1e-9;
    int m = 0;
    double re_min = -3.0, re_max = 1.0, im_min = 0.0, im_max = 20.0;
    int grid_density = 40;
    std::string history = "const:1";
    std::uint64_t seed = 1; // documented default; fixes the MLE direction
    double mle_t_end = 200.0;
    double renorm_interval = 1.0;
    std::string eq_guess = "0";
    std::string out;
    std::string emit_network;
};

void emit(const CommonOptions& opt, const std::string& content) {
    if (opt.out.empty())
        std::cout << content;
    else
        io::write_file(opt.out, content);
}

const SystemDefinition& require_system(const io::ParsedNetwork& net, const std::string& path) {
    if (!net.system)
        throw schema_error(path + ": this command needs a \"system\" block in the network file");
    return *net.system;
}

HistorySegment history_from_flag(const std::string& flag, const io::ParsedNetwork& net,
                                 double dt, double min_span) {
    if (flag.rfind("const:", 0) == 0) {
        double v = std::stod(flag.substr(6));
        return HistorySegment::constant(net.topology.node_count(), v, dt, min_span);
    }
    if (flag.rfind("csv:", 0) == 0) {
        HistorySegment h = io::parse_history_csv(flag.substr(4), net.topology.node_count());
        if (std::abs(h.dt - dt) > 1e-12 * std::max(1.0, dt))
            throw schema_error("history CSV grid step " + std::to_string(h.dt) +
                               " does not match --dt " + std::to_string(dt));
        return h;
    }
    throw schema_error("--history must be const:<value> or csv:<path>, got \"" + flag + "\"");
}

std::vector<double> guess_from_flag(const std::string& flag, int nodes) {
    std::vector<double> out;
    std::string rest = flag;
    std::size_t pos;
    while ((pos = rest.find(',')) != std::string::npos) {
        out.push_back(std::stod(rest.substr(0, pos)));
        rest = rest.substr(pos + 1);
    }
    out.push_back(std::stod(rest));
    if (out.size() == 1) out.assign(static_cast<std::size_t>(nodes), out[0]);
    if (out.size() != static_cast<std::size_t>(nodes))
        throw schema_error("--eq-guess needs 1 or " + std::to_string(nodes) + " values");
    return out;
}

SpectralRegion region_from(const CommonOptions& opt) {
    SpectralRegion region{opt.re_min, opt.re_max, opt.im_min, opt.im_max};
    region.validate();
    return region;
}

json demo_document(const std::string& name) {
    auto network = [](int nodes, std::vector<std::vector<double>> edges) {
        json doc;
        doc["nodes"] = nodes;
        json arr = json::array();
        int id = 1;
        for (const auto& e : edges) {
            json entry;
            entry["id"] = id++;
            entry["source"] = static_cast<int>(e[0]);
            entry["target"] = static_cast<int>(e[1]);
            entry["delay"] = e[2];
            arr.push_back(entry);
        }
        doc["edges"] = arr;
        return doc;
    };
    auto weights = [](std::vector<double> w) {
        json arr = json::array();
        for (std::size_t i = 0; i < w.size(); ++i) {
            json entry;
            entry["id"] = static_cast<int>(i) + 1;
            entry["weight"] = w[i];
            arr.push_back(entry);
        }
        return arr;
    };

    if (name == "ring3") {
        json doc = network(3, {{1, 2, 2.0}, {2, 3, 3.0}, {3, 1, 4.0}});
        doc["system"] = {{"kind", "linear"},
                         {"params", {{"d", {-1.0, -1.0, -1.0}}}},
                         {"edge_weights", weights({0.5, 0.5, 0.5})}};
        return doc;
    }
    if (name == "pair") {
        json doc = network(2, {{1, 2, 2.0}, {2, 1, 3.0}});
        doc["system"] = {{"kind", "linear"},
                         {"params", {{"d", {-1.0, -1.0}}}},
                         {"edge_weights", weights({0.5, -0.5})}};
        return doc;
    }
    if (name == "twocycle") {
        return network(2, {{1, 2, 1.0}, {2, 1, 1.0}, {2, 1, 2.0}});
    }
    if (name == "mg2") {
        json doc = network(2, {{1, 2, 2.0}, {2, 1, 3.0}});
        doc["system"] = {{"kind", "mackey_glass"},
                         {"params",
                          {{"gamma", {1.0, 1.0}}, {"beta", {2.0, 2.0}}, {"n", {4.0, 4.0}}}},
                         {"edge_weights", weights({1.0, 1.0})}};
        return doc;
    }
    throw schema_error("unknown demo \"" + name + "\"; available: ring3, pair, twocycle, mg2");
}

int dispatch(const std::string& command, const std::vector<std::string>& inputs,
             const CommonOptions& opt) {
    if (command == "essential") {
        auto net = io::parse_network(inputs[0]);
        std::string body = std::to_string(essential_delay_count(net.topology)) + "\n";
        emit(opt, body);
        return 0;
    }
    if (command == "reduce") {
        auto net = io::parse_network(inputs[0]);
        net.topology.require_connected("reduce");
        ReductionResult red = reduce_to_spanning_tree(net.tau, net.topology);
        emit(opt, io::dump_json(io::reduction_to_json(red, net.topology)));
        if (!opt.emit_network.empty())
            io::write_file(opt.emit_network,
                           io::dump_json(io::network_to_json(net.topology, red.reduced,
                                                             net.system)));
        return 0;
    }
    if (command == "cycles") {
        auto net = io::parse_network(inputs[0]);
        SpanningTree tree = greedy_spanning_tree(net.topology, &net.tau);
        emit(opt, io::dump_json(io::cycles_to_json(net.topology, net.tau, tree)));
        return 0;
    }
    if (command == "relatable") {
        auto a = io::parse_network(inputs[0]);
        auto b = io::parse_network(inputs[1]);
        if (a.topology.node_count() != b.topology.node_count() ||
            a.topology.edge_count() != b.topology.edge_count())
            throw domain_error("relatable: the two files describe different topologies");
        for (const auto& e : a.topology.edges()) {
            const auto& f = b.topology.edge(e.id);
            if (e.source != f.source || e.target != f.target)
                throw domain_error("relatable: edge " + std::to_string(e.id) +
                                   " differs between the files");
        }
        RelatableResult rel = ct_relatable(a.tau, b.tau, a.topology, opt.tol);
        emit(opt, io::dump_json(io::relatable_to_json(rel)));
        return 0;
    }
    if (command == "reducibility") {
        auto net = io::parse_network(inputs[0]);
        ReducibilitySearchResult res = reducibility_search(net.tau, net.topology, opt.m, opt.tol);
        emit(opt, io::dump_json(io::reducibility_to_json(res)));
        return 0;
    }
    if (command == "simulate") {
        auto net = io::parse_network(inputs[0]);
        const SystemDefinition& sys = require_system(net, inputs[0]);
        HistorySegment h = history_from_flag(opt.history, net, opt.dt, max_required_lag(net.tau));
        Trajectory traj = simulate(net.topology, net.tau, sys, h, opt.t_end, opt.dt);
        emit(opt, io::trajectory_to_csv(traj));
        return 0;
    }
    if (command == "spectrum") {
        auto net = io::parse_network(inputs[0]);
        const SystemDefinition& sys = require_system(net, inputs[0]);
        std::vector<double> guess = guess_from_flag(opt.eq_guess, net.topology.node_count());
        std::vector<double> xbar = find_equilibrium(net.topology, sys, guess);
        SpectraComparison cmp = compare_spectra(net.topology, net.tau, sys, xbar,
                                                region_from(opt), opt.grid_density);
        json doc;
        doc["equilibrium"] = xbar;
        doc["roots_original"] = io::spectrum_to_json(cmp.original);
        doc["roots_reduced"] = io::spectrum_to_json(cmp.reduced);
        doc["matched"] = cmp.matched;
        doc["max_pairing_distance"] = cmp.max_pairing_distance;
        emit(opt, io::dump_json(doc));
        return 0;
    }
    if (command == "mle") {
        auto net = io::parse_network(inputs[0]);
        const SystemDefinition& sys = require_system(net, inputs[0]);
        ReductionResult red = reduce_to_spanning_tree(net.tau, net.topology);
        double span = std::max(max_required_lag(net.tau), max_required_lag(red.reduced));
        HistorySegment h = history_from_flag(opt.history, net, opt.dt, span);
        double interval = std::max(opt.renorm_interval, span);
        MleEstimate original = estimate_mle(net.topology, net.tau, sys, h, opt.mle_t_end,
                                            interval, opt.dt, opt.seed);
        HistorySegment y0 = transform_state(h, net.topology, net.tau, red.timeshifts, sys, opt.dt);
        MleEstimate reduced = estimate_mle(net.topology, red.reduced, sys, y0, opt.mle_t_end,
                                           interval, opt.dt, opt.seed);
        json doc;
        doc["mle_original"] = io::mle_to_json(original);
        doc["mle_reduced"] = io::mle_to_json(reduced);
        emit(opt, io::dump_json(doc));
        return 0;
    }
    if (command == "verify") {
        auto net = io::parse_network(inputs[0]);
        const SystemDefinition& sys = require_system(net, inputs[0]);
        ReductionResult red = reduce_to_spanning_tree(net.tau, net.topology);
        double span = std::max(max_required_lag(net.tau), max_required_lag(red.reduced));
        HistorySegment h = history_from_flag(opt.history, net, opt.dt, span);
        EquivalenceOptions eopt;
        eopt.t_end = opt.t_end;
        eopt.dt = opt.dt;
        eopt.region = region_from(opt);
        eopt.grid_density = opt.grid_density;
        eopt.mle_t_end = opt.mle_t_end;
        eopt.renorm_interval = opt.renorm_interval;
        eopt.seed = opt.seed;
        eopt.equilibrium_guess = guess_from_flag(opt.eq_guess, net.topology.node_count());
        EquivalenceReport report = build_equivalence_report(net.topology, net.tau, sys, h, eopt);
        emit(opt, io::dump_json(io::report_to_json(report)));
        return 0;
    }
    throw schema_error("unknown command " + command);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"delaynet: reduce delay distributions of coupled networks by componentwise "
                 "timeshifts and certify the equivalence numerically"};
    app.require_subcommand(0, 1);

    CommonOptions opt;
    std::string demo_name;
    app.add_option("--demo", demo_name, "write a worked-example network file and exit "
                                        "(ring3, pair, twocycle, mg2)");
    app.add_option("--out", opt.out, "output path (default: stdout)");

    struct Sub {
        CLI::App* cmd;
        std::vector<std::string> inputs;
    };
    std::deque<Sub> subs; // option targets need stable addresses
    auto add_inputs = [&](CLI::App* cmd, int n) {
        subs.push_back({cmd, {}});
        auto& slot = subs.back();
        cmd->add_option("input", slot.inputs, "network JSON file(s)")->required()->expected(n);
        cmd->add_option("--out", opt.out, "output path (default: stdout)");
        return &slot;
    };
    auto add_numeric = [&](CLI::App* cmd) {
        cmd->add_option("--t-end", opt.t_end, "integration end time")->check(CLI::NonNegativeNumber);
        cmd->add_option("--dt", opt.dt, "integration step")->check(CLI::PositiveNumber);
        cmd->add_option("--history", opt.history, "initial history: const:<v> or csv:<path>");
        cmd->add_option("--seed", opt.seed, "seed for randomized directions (default 1)");
    };
    auto add_region = [&](CLI::App* cmd) {
        cmd->add_option("--re-min", opt.re_min, "region: smallest real part");
        cmd->add_option("--re-max", opt.re_max, "region: largest real part");
        cmd->add_option("--im-min", opt.im_min, "region: smallest imaginary part");
        cmd->add_option("--im-max", opt.im_max, "region: largest imaginary part");
        cmd->add_option("--grid-density", opt.grid_density, "Newton seeds per region side")
            ->check(CLI::Range(2, 400));
        cmd->add_option("--eq-guess", opt.eq_guess,
                        "equilibrium guess: one value or comma-separated per node");
    };

    auto* reduce_cmd = app.add_subcommand("reduce", "reduce the delays to an instantaneous "
                                                    "spanning tree");
    add_inputs(reduce_cmd, 1);
    reduce_cmd->add_option("--emit-network", opt.emit_network,
                           "also write the reduced system as a network file");

    add_inputs(app.add_subcommand("cycles", "fundamental cycles and roundtrips"), 1);
    add_inputs(app.add_subcommand("essential", "print the essential number of delays C"), 1);

    auto* relatable_cmd =
        app.add_subcommand("relatable", "are two delay distributions timeshift-related?");
    add_inputs(relatable_cmd, 2);
    relatable_cmd->add_option("--tol", opt.tol, "cycle-sum tolerance")->check(CLI::PositiveNumber);

    auto* reducibility_cmd =
        app.add_subcommand("reducibility", "search for a reduction to m distinct delays");
    add_inputs(reducibility_cmd, 1);
    reducibility_cmd->add_option("--m", opt.m, "number of distinct delays")
        ->required()
        ->check(CLI::NonNegativeNumber);
    reducibility_cmd->add_option("--tol", opt.tol, "residual tolerance")
        ->check(CLI::PositiveNumber);

    auto* simulate_cmd = app.add_subcommand("simulate", "integrate the network, write CSV");
    add_inputs(simulate_cmd, 1);
    add_numeric(simulate_cmd);

    auto* spectrum_cmd =
        app.add_subcommand("spectrum", "characteristic roots for original and reduced delays");
    add_inputs(spectrum_cmd, 1);
    add_region(spectrum_cmd);

    auto* mle_cmd = app.add_subcommand("mle", "maximal Lyapunov exponent, original vs reduced");
    add_inputs(mle_cmd, 1);
    add_numeric(mle_cmd);
    mle_cmd->add_option("--mle-t-end", opt.mle_t_end, "averaging horizon")
        ->check(CLI::PositiveNumber);
    mle_cmd->add_option("--renorm-interval", opt.renorm_interval, "renormalization interval")
        ->check(CLI::PositiveNumber);

    auto* verify_cmd = app.add_subcommand("verify", "full CT-equivalence report");
    add_inputs(verify_cmd, 1);
    add_numeric(verify_cmd);
    add_region(verify_cmd);
    verify_cmd->add_option("--mle-t-end", opt.mle_t_end, "MLE averaging horizon")
        ->check(CLI::PositiveNumber);
    verify_cmd->add_option("--renorm-interval", opt.renorm_interval, "renormalization interval")
        ->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (!demo_name.empty()) {
            std::string path = opt.out.empty() ? demo_name + ".json" : opt.out;
            delaynet::io::write_file(path, delaynet::io::dump_json(demo_document(demo_name)));
            std::cout << path << "\n";
            return 0;
        }
        for (const auto& sub : subs)
            if (sub.cmd->parsed()) return dispatch(sub.cmd->get_name(), sub.inputs, opt);
        std::cerr << app.help() << std::endl;
        return 2;
    } catch (const delaynet::domain_error& e) {
        delaynet::log::error("%s", e.what());
        return 1;
    } catch (const delaynet::schema_error& e) {
        delaynet::log::error("%s", e.what());
        return 2;
    } catch (const delaynet::numeric_error& e) {
        delaynet::log::error("%s", e.what());
        return 3;
    } catch (const std::exception& e) {
        delaynet::log::error("%s", e.what());
        return 1;
    }
}

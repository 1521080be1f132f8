#include <catch2/catch_amalgamated.hpp>

#include "delaynet/graph.hpp"
#include "support/testutil.hpp"

using namespace delaynet;

namespace {

NetworkTopology ring3() { return NetworkTopology(3, {{1, 1, 2}, {2, 2, 3}, {3, 3, 1}}); }

} // namespace

TEST_CASE("topology validation") {
    CHECK_THROWS_AS(NetworkTopology(3, {{1, 1, 4}}), domain_error);
    CHECK_THROWS_AS(NetworkTopology(3, {{1, 0, 2}}), domain_error);
    CHECK_THROWS_AS(NetworkTopology(3, {{1, 1, 2}, {3, 2, 3}}), domain_error); // gap in ids
    CHECK_THROWS_AS(NetworkTopology(0, {}), domain_error);
    CHECK_NOTHROW(NetworkTopology(2, {{1, 1, 2}, {2, 1, 2}})); // parallel edges
    CHECK_NOTHROW(NetworkTopology(1, {{1, 1, 1}}));            // self-loop
}

TEST_CASE("input and output sets") {
    NetworkTopology ring = ring3();
    CHECK(ring.input_set(2) == std::vector<int>{1});
    CHECK(ring.output_set(2) == std::vector<int>{2});

    NetworkTopology lonely(2, {{1, 1, 2}});
    CHECK(lonely.input_set(1).empty());

    NetworkTopology looped(2, {{1, 1, 2}, {2, 2, 2}});
    CHECK(looped.input_set(2) == std::vector<int>{1, 2});

    CHECK_THROWS_AS(ring.input_set(0), domain_error);
    CHECK_THROWS_AS(ring.input_set(4), domain_error);
}

TEST_CASE("essential delay count") {
    NetworkTopology pair(2, {{1, 1, 2}, {2, 2, 1}});
    CHECK(essential_delay_count(pair) == 1);

    NetworkTopology tree(5, {{1, 1, 2}, {2, 2, 3}, {3, 3, 4}, {4, 4, 5}});
    CHECK(essential_delay_count(tree) == 0);

    NetworkTopology doubled(2, {{1, 1, 2}, {2, 2, 1}, {3, 2, 1}});
    CHECK(essential_delay_count(doubled) == 2);
}

TEST_CASE("disconnected topologies are rejected with the components named") {
    NetworkTopology split(4, {{1, 1, 2}, {2, 3, 4}});
    try {
        essential_delay_count(split);
        FAIL("expected a domain error");
    } catch (const domain_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("2 components") != std::string::npos);
        CHECK(msg.find("{1,2}") != std::string::npos);
        CHECK(msg.find("{3,4}") != std::string::npos);
    }
}

TEST_CASE("fundamental cycles of the 3-ring") {
    NetworkTopology ring = ring3();
    SpanningTree tree{{1, 2}};
    auto cycles = fundamental_cycles(ring, tree);
    REQUIRE(cycles.size() == 1);
    // closed walk from s(e3) = 3 through e3, then back along the tree
    CHECK(cycles[0].edge_ids == std::vector<int>{3, 1, 2});
    CHECK(cycles[0].signs == std::vector<int>{1, 1, 1});
    CHECK(cycles[0].nodes == std::vector<int>{3, 1, 2, 3});
}

TEST_CASE("fundamental cycles of a tree are empty") {
    NetworkTopology path(3, {{1, 1, 2}, {2, 2, 3}});
    auto cycles = fundamental_cycles(path, SpanningTree{{1, 2}});
    CHECK(cycles.empty());
}

TEST_CASE("parallel edges give an opposed fundamental cycle") {
    NetworkTopology twin(2, {{1, 1, 2}, {2, 1, 2}});
    auto cycles = fundamental_cycles(twin, SpanningTree{{1}});
    REQUIRE(cycles.size() == 1);
    CHECK(cycles[0].edge_ids == std::vector<int>{2, 1});
    CHECK(cycles[0].signs == std::vector<int>{1, -1});
}

TEST_CASE("invalid trees are rejected") {
    NetworkTopology ring = ring3();
    CHECK_THROWS_AS(fundamental_cycles(ring, SpanningTree{{1}}), domain_error);
    CHECK_THROWS_AS(fundamental_cycles(ring, SpanningTree{{1, 2, 3}}), domain_error);
}

TEST_CASE("delay sums and roundtrips") {
    NetworkTopology pair(2, {{1, 1, 2}, {2, 2, 1}});
    Semicycle forward{{1, 2}, {1, 1}, {1, 2, 1}};
    CHECK(delay_sum(forward, DelayDistribution({2.0, 3.0})) == Catch::Approx(5.0));

    NetworkTopology twin(2, {{1, 1, 2}, {2, 1, 2}});
    Semicycle opposed{{1, 2}, {1, -1}, {1, 2, 1}};
    DelayDistribution tau({2.0, 5.0});
    CHECK(delay_sum(opposed, tau) == Catch::Approx(-3.0));
    CHECK(roundtrip(opposed, tau) == Catch::Approx(3.0));
    CHECK(delay_sum(opposed, DelayDistribution({0.0, 0.0})) == 0.0);

    NetworkTopology ring = ring3();
    auto cycles = fundamental_cycles(ring, SpanningTree{{1, 2}});
    CHECK(roundtrip(cycles[0], DelayDistribution({2.0, 3.0, 4.0})) == Catch::Approx(9.0));
}

TEST_CASE("cycle count equals the cycle space dimension on random multigraphs") {
    testutil::Rng rng(42);
    for (int trial = 0; trial < 60; ++trial) {
        int nodes = 2 + rng.below(9);            // up to 10
        int edges = nodes - 1 + rng.below(26 - nodes);
        if (edges < nodes - 1) edges = nodes - 1;
        auto net = testutil::random_connected_network(rng, nodes, edges);
        auto tree = greedy_spanning_tree(net.topology);
        auto cycles = fundamental_cycles(net.topology, tree);
        int expected = net.topology.edge_count() - nodes + 1;
        CHECK(static_cast<int>(cycles.size()) == expected);
        for (const auto& c : cycles) {
            // walk validity: closed, first sign +1, consecutive nodes chained
            CHECK(c.signs.front() == 1);
            CHECK(c.nodes.front() == c.nodes.back());
            REQUIRE(c.nodes.size() == c.edge_ids.size() + 1);
            for (std::size_t i = 0; i < c.edge_ids.size(); ++i) {
                const auto& e = net.topology.edge(c.edge_ids[i]);
                int from = c.nodes[i], to = c.nodes[i + 1];
                if (c.signs[i] > 0)
                    CHECK((e.source == from && e.target == to));
                else
                    CHECK((e.source == to && e.target == from));
            }
        }
    }
}

TEST_CASE("delay sum is linear in the distribution") {
    testutil::Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        int nodes = 2 + rng.below(6);
        auto net = testutil::random_connected_network(rng, nodes, nodes + rng.below(8));
        auto cycle = testutil::random_semicycle(rng, net.topology);
        if (cycle.edge_ids.empty()) continue;
        int l = net.topology.edge_count();
        std::vector<double> a(static_cast<std::size_t>(l)), b(a);
        for (double& v : a) v = rng.uniform(0.0, 10.0);
        for (double& v : b) v = rng.uniform(0.0, 10.0);
        double alpha = rng.uniform(-2.0, 2.0), beta = rng.uniform(-2.0, 2.0);
        std::vector<double> mix(static_cast<std::size_t>(l));
        for (int i = 0; i < l; ++i)
            mix[static_cast<std::size_t>(i)] = alpha * a[static_cast<std::size_t>(i)] +
                                               beta * b[static_cast<std::size_t>(i)];
        double lhs = delay_sum(cycle, DelayDistribution(mix));
        double rhs = alpha * delay_sum(cycle, DelayDistribution(a)) +
                     beta * delay_sum(cycle, DelayDistribution(b));
        CHECK(lhs == Catch::Approx(rhs).margin(1e-12));
    }
}

TEST_CASE("reversing the traversal negates the sum, roundtrip is invariant") {
    testutil::Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        int nodes = 2 + rng.below(6);
        auto net = testutil::random_connected_network(rng, nodes, nodes + rng.below(8));
        auto cycle = testutil::random_semicycle(rng, net.topology);
        if (cycle.edge_ids.empty()) continue;
        auto back = reverse_traversal(cycle);
        CHECK(delay_sum(back, net.tau) == Catch::Approx(-delay_sum(cycle, net.tau)).margin(1e-12));
        CHECK(roundtrip(back, net.tau) == Catch::Approx(roundtrip(cycle, net.tau)).margin(1e-12));
    }
}

TEST_CASE("a self-loop is its own semicycle") {
    NetworkTopology looped(2, {{1, 1, 2}, {2, 2, 2}});
    Semicycle loop{{2}, {1}, {2, 2}};
    testutil::Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        DelayDistribution tau({rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)});
        CHECK(delay_sum(loop, tau) == Catch::Approx(tau(2)));
    }
    // and it appears as a fundamental cycle of any spanning tree
    auto cycles = fundamental_cycles(looped, SpanningTree{{1}});
    REQUIRE(cycles.size() == 1);
    CHECK(cycles[0].edge_ids == std::vector<int>{2});
    CHECK(cycles[0].signs == std::vector<int>{1});
}

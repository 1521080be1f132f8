#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "delaynet/equivalence.hpp"
#include "support/testutil.hpp"

using namespace delaynet;

namespace {

// the 2-node bidirectional linear testbed: intrinsic -1, couplings +-0.5,
// delays (2, 3); reduction gives eta = (0, 2), reduced delays (0, 5)
struct PairBed {
    NetworkTopology topology{2, {{1, 1, 2}, {2, 2, 1}}};
    DelayDistribution tau{{2.0, 3.0}};
    SystemDefinition system = SystemDefinition::linear(topology, {-1.0, -1.0}, {0.5, -0.5});
};

// same couplings with short delays so states can be extracted at small times
struct ShortPairBed {
    NetworkTopology topology{2, {{1, 1, 2}, {2, 2, 1}}};
    DelayDistribution tau{{0.4, 0.6}};
    SystemDefinition system = SystemDefinition::linear(topology, {-1.0, -1.0}, {0.5, -0.5});
};

HistorySegment warmed_state(const NetworkTopology& topology, const DelayDistribution& tau,
                            const SystemDefinition& system, double dt, double t_warm = 10.0) {
    auto h0 = HistorySegment::constant(topology.node_count(), 1.0, dt, max_required_lag(tau));
    auto run = simulate(topology, tau, system, h0, t_warm, dt);
    return extract_history(run, t_warm);
}

double history_gap(const HistorySegment& a, const HistorySegment& b) {
    double d = 0.0;
    for (std::size_t j = 0; j < a.values.size(); ++j)
        for (std::size_t i = 0; i < std::min(a.values[j].size(), b.values[j].size()); ++i)
            d = std::max(d, std::abs(a.values[j][i] - b.values[j][i]));
    return d;
}

/// Gap restricted to each node's own lag window [-r_j, 0]; samples before
/// that are filler in transform_state outputs.
double window_gap(const HistorySegment& a, const HistorySegment& b,
                  const std::vector<double>& lags) {
    double d = 0.0;
    for (std::size_t j = 0; j < a.values.size(); ++j) {
        int needed = static_cast<int>(std::ceil(lags[j] / a.dt - 1e-9));
        for (int i = a.len - needed; i <= a.len; ++i) {
            std::size_t ia = static_cast<std::size_t>(i);
            std::size_t ib = static_cast<std::size_t>(b.len - (a.len - i));
            d = std::max(d, std::abs(a.values[j][ia] - b.values[j][ib]));
        }
    }
    return d;
}

} // namespace

TEST_CASE("transform_state with zero shifts restricts the history") {
    PairBed bed;
    const double dt = 1e-2;
    auto x0 = warmed_state(bed.topology, bed.tau, bed.system, dt);
    auto out = transform_state(x0, bed.topology, bed.tau, TimeshiftVector::zero(2), bed.system, dt);
    REQUIRE(out.len == x0.len); // same max lag either way here
    CHECK(history_gap(out, x0) <= 1e-14);
}

TEST_CASE("transform_state fixes equilibria") {
    PairBed bed;
    const double dt = 1e-2;
    auto x0 = HistorySegment::constant(2, 0.0, dt, 3.0);
    auto red = reduce_to_spanning_tree(bed.tau, bed.topology);
    auto out = transform_state(x0, bed.topology, bed.tau, red.timeshifts, bed.system, dt);
    for (const auto& column : out.values)
        for (double v : column) CHECK(std::abs(v) <= 1e-14);
}

TEST_CASE("transform_state on the single-node hand example") {
    // x' = -x(t-1), history 1, eta = 0.5: the new history is 1 on [-1, -0.5]
    // and 1 - (t + 0.5) on [-0.5, 0]
    NetworkTopology single(1, {{1, 1, 1}});
    DelayDistribution tau({1.0});
    auto sys = SystemDefinition::linear(single, {0.0}, {-1.0});
    const double dt = 1e-2;
    auto x0 = HistorySegment::constant(1, 1.0, dt, 1.0);
    auto out = transform_state(x0, single, tau, TimeshiftVector({0.5}), sys, dt);
    REQUIRE(out.len == 100);
    for (int i = 0; i <= out.len; ++i) {
        double t = (i - out.len) * dt;
        double expected = t <= -0.5 ? 1.0 : 1.0 - (t + 0.5);
        CHECK(out.values[0][static_cast<std::size_t>(i)] ==
              Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("transform_state commutes with the flows") {
    ShortPairBed bed;
    const double dt = 1e-3;
    auto x0 = warmed_state(bed.topology, bed.tau, bed.system, dt);
    auto red = reduce_to_spanning_tree(bed.tau, bed.topology);
    REQUIRE(red.timeshifts.max_shift() > 0.0);

    auto reduced_lags = per_node_lags(bed.topology, red.reduced);
    for (double s : {1.0, 5.0, 10.0}) {
        // left: transform the state reached at time s
        auto xs = extract_history(simulate(bed.topology, bed.tau, bed.system, x0, s, dt), s);
        auto left = transform_state(xs, bed.topology, bed.tau, red.timeshifts, bed.system, dt);
        // right: flow the transformed state for time s under the reduced delays
        auto y0 = transform_state(x0, bed.topology, bed.tau, red.timeshifts, bed.system, dt);
        auto right =
            extract_history(simulate(bed.topology, red.reduced, bed.system, y0, s, dt), s);
        CHECK(window_gap(left, right, reduced_lags) <= 1e-8);
    }
}

TEST_CASE("reverse shifts undo the transformation up to the common flow") {
    ShortPairBed bed;
    const double dt = 1e-3;
    auto x0 = warmed_state(bed.topology, bed.tau, bed.system, dt);
    auto red = reduce_to_spanning_tree(bed.tau, bed.topology);
    const double eta_bar = red.timeshifts.max_shift();
    REQUIRE(eta_bar > 0.0);

    auto y0 = transform_state(x0, bed.topology, bed.tau, red.timeshifts, bed.system, dt);
    auto back = transform_state(y0, bed.topology, red.reduced, red.timeshifts.reversed(),
                                bed.system, dt);

    // compare against Phi_{eta_bar}(x0) read directly off the original run
    auto run = simulate(bed.topology, bed.tau, bed.system, x0, eta_bar, dt);
    for (int j = 1; j <= 2; ++j)
        for (int i = 0; i <= back.len; ++i) {
            double t = eta_bar + (i - back.len) * dt;
            CHECK(back.values[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(i)] ==
                  Catch::Approx(value_at(run, j, t)).margin(1e-8));
        }
}

TEST_CASE("trajectory correspondence") {
    SECTION("already-reduced distributions give identical runs") {
        ShortPairBed bed;
        auto red = reduce_to_spanning_tree(bed.tau, bed.topology);
        auto x0 = warmed_state(bed.topology, red.reduced, bed.system, 1e-2);
        auto report = verify_trajectory_correspondence(bed.topology, red.reduced, bed.system, x0,
                                                       10.0, 1e-2);
        CHECK(report.max_deviation == 0.0);
    }
    SECTION("equilibrium histories stay put in both systems") {
        PairBed bed;
        auto x0 = HistorySegment::constant(2, 0.0, 1e-2, 3.0);
        auto report =
            verify_trajectory_correspondence(bed.topology, bed.tau, bed.system, x0, 10.0, 1e-2);
        CHECK(report.max_deviation <= 1e-12);
    }
    SECTION("generic linear state within 1e-6 over [0, 50]") {
        PairBed bed;
        const double dt = 1e-3;
        auto x0 = warmed_state(bed.topology, bed.tau, bed.system, dt);
        auto report =
            verify_trajectory_correspondence(bed.topology, bed.tau, bed.system, x0, 50.0, dt);
        CHECK(report.max_deviation <= 1e-6);
    }
}

TEST_CASE("characteristic roots of scalar testbeds") {
    NetworkTopology single(1, {{1, 1, 1}});
    auto sys = SystemDefinition::linear(single, {0.0}, {-1.0});

    SECTION("zero delay reduces to the ODE eigenvalue") {
        auto spec = characteristic_roots(single, DelayDistribution({0.0}), sys, {0.0},
                                         {-5.0, 5.0, -1.0, 1.0});
        REQUIRE(spec.roots.size() == 1);
        CHECK(std::abs(spec.roots[0] - std::complex<double>(-1.0, 0.0)) <= 1e-12);
        CHECK(spec.residuals[0] <= 1e-10);
    }
    SECTION("unit delay against the independent Newton oracle") {
        auto oracle = testutil::delayed_feedback_root();
        auto spec = characteristic_roots(single, DelayDistribution({1.0}), sys, {0.0},
                                         {-2.0, 0.0, 0.0, 3.0});
        REQUIRE(spec.roots.size() == 1);
        CHECK(std::abs(spec.roots[0] - oracle) <= 1e-4);
        CHECK(spec.roots[0].real() == Catch::Approx(-0.3181).margin(2e-4));
        CHECK(spec.roots[0].imag() == Catch::Approx(1.3372).margin(2e-4));
    }
    SECTION("decoupled copies dedup to a single entry") {
        NetworkTopology two(2, {{1, 1, 1}, {2, 2, 2}});
        auto two_sys = SystemDefinition::linear(two, {0.0, 0.0}, {-1.0, -1.0});
        auto spec = characteristic_roots(two, DelayDistribution({1.0, 1.0}), two_sys, {0.0, 0.0},
                                         {-2.0, 0.0, 0.0, 3.0});
        REQUIRE(spec.roots.size() == 1);
        CHECK(std::abs(spec.roots[0] - testutil::delayed_feedback_root()) <= 1e-4);
        CHECK(spec.residuals[0] <= 1e-10);
    }
    SECTION("spectra are closed under conjugation inside symmetric regions") {
        auto spec = characteristic_roots(single, DelayDistribution({1.0}), sys, {0.0},
                                         {-2.0, 0.0, -3.0, 3.0});
        REQUIRE(spec.roots.size() == 2);
        CHECK(std::abs(spec.roots[0] - std::conj(spec.roots[1])) <= 1e-9);
    }
}

TEST_CASE("compare_spectra") {
    SECTION("already-reduced input matches itself exactly") {
        PairBed bed;
        auto red = reduce_to_spanning_tree(bed.tau, bed.topology);
        auto cmp = compare_spectra(bed.topology, red.reduced, bed.system, {0.0, 0.0},
                                   {-3.0, 1.0, 0.0, 20.0});
        CHECK(cmp.matched);
        CHECK(cmp.max_pairing_distance <= 1e-12);
    }
    SECTION("reduction preserves the spectrum of the pair testbed") {
        PairBed bed;
        auto cmp = compare_spectra(bed.topology, bed.tau, bed.system, {0.0, 0.0},
                                   {-3.0, 1.0, 0.0, 20.0});
        CHECK(cmp.matched);
        CHECK(cmp.max_pairing_distance <= 1e-8);
        CHECK(cmp.original.roots.size() >= 3); // several root-chain members in the strip
    }
    SECTION("a perturbed reduction is detected") {
        PairBed bed;
        SpectralRegion region{-3.0, 1.0, 0.0, 20.0};
        auto a = characteristic_roots(bed.topology, bed.tau, bed.system, {0.0, 0.0}, region);
        auto b = characteristic_roots(bed.topology, DelayDistribution({0.0, 5.1}), bed.system,
                                      {0.0, 0.0}, region, 40, a.roots);
        // greedy pairing of the two spectra must move some root visibly
        double worst = 0.0;
        for (auto z : a.roots) {
            double best = 1e9;
            for (auto w : b.roots) best = std::min(best, std::abs(z - w));
            worst = std::max(worst, best);
        }
        CHECK(worst > 1e-8);
    }
}

TEST_CASE("mle of contracting testbeds") {
    SECTION("pure exponential decay") {
        NetworkTopology single(1, {});
        auto sys = SystemDefinition::linear(single, {-1.0}, {});
        auto hist = HistorySegment::constant(1, 1.0, 1e-2, 0.0);
        auto est = estimate_mle(single, DelayDistribution(std::vector<double>{}), sys, hist, 60.0,
                                1.0, 1e-2, 7);
        CHECK(est.value == Catch::Approx(-1.0).margin(2e-2));
        CHECK_FALSE(est.lower_bound_only);
    }
    SECTION("delayed feedback decays at the leading root's rate") {
        NetworkTopology single(1, {{1, 1, 1}});
        auto sys = SystemDefinition::linear(single, {0.0}, {-1.0});
        auto hist = HistorySegment::constant(1, 0.01, 1e-2, 1.0);
        auto est = estimate_mle(single, DelayDistribution({1.0}), sys, hist, 240.0, 1.0, 1e-2, 7);
        CHECK(est.value == Catch::Approx(-0.3181).margin(5e-2));
    }
}

TEST_CASE("mle agrees between the original and the reduced system") {
    PairBed bed;
    const double dt = 1e-2;
    auto x0 = warmed_state(bed.topology, bed.tau, bed.system, dt);
    auto red = reduce_to_spanning_tree(bed.tau, bed.topology);
    double interval = std::max(max_required_lag(bed.tau), max_required_lag(red.reduced));

    auto original = estimate_mle(bed.topology, bed.tau, bed.system, x0, 300.0, interval, dt, 3);
    auto y0 = transform_state(x0, bed.topology, bed.tau, red.timeshifts, bed.system, dt);
    auto reduced =
        estimate_mle(bed.topology, red.reduced, bed.system, y0, 300.0, interval, dt, 3);

    INFO("original " << original.value << " +- " << original.half_width << ", reduced "
                     << reduced.value << " +- " << reduced.half_width);
    CHECK(std::abs(original.value - reduced.value) <=
          original.half_width + reduced.half_width + 1e-12);

    // and both sit at the real part of the leading characteristic root
    auto cmp = compare_spectra(bed.topology, bed.tau, bed.system, {0.0, 0.0},
                               {-3.0, 1.0, 0.0, 20.0});
    double leading = -1e9;
    for (auto z : cmp.original.roots) leading = std::max(leading, z.real());
    CHECK(original.value == Catch::Approx(leading).margin(5e-2));
}

TEST_CASE("dominant floquet exponent") {
    SECTION("equilibrium treated as an orbit recovers the leading root") {
        // short self-delay keeps the leading characteristic root real
        NetworkTopology single(1, {{1, 1, 1}});
        DelayDistribution tau({0.3});
        auto sys = SystemDefinition::linear(single, {0.0}, {-1.0});
        const double dt = 1e-3;
        auto flat = HistorySegment::constant(1, 0.0, dt, 0.3);
        auto orbit = simulate(single, tau, sys, flat, 6.0, dt);

        auto result = dominant_floquet_exponent(single, tau, sys, orbit, 2.0, 40, 5);
        auto spec = characteristic_roots(single, tau, sys, {0.0}, {-3.0, 0.5, -0.5, 0.5});
        REQUIRE_FALSE(spec.roots.empty());
        double leading = -1e9;
        for (auto z : spec.roots) leading = std::max(leading, z.real());
        INFO("floquet " << result.exponent << " leading root " << leading);
        CHECK_FALSE(result.collapsed_to_zero);
        CHECK(result.exponent == Catch::Approx(leading).margin(1e-3));
    }
    SECTION("zero variational dynamics collapse to the flagged -inf") {
        NetworkTopology single(1, {{1, 1, 1}});
        DelayDistribution tau({1.0});
        auto sys = SystemDefinition::linear(single, {0.0}, {0.0});
        const double dt = 1e-2;
        auto flat = HistorySegment::constant(1, 0.0, dt, 1.0);
        auto orbit = simulate(single, tau, sys, flat, 8.0, dt);
        // variational state whose value at t = 0 is zero dies instantly
        const double period = 2.0;
        const double vdt = period / std::llround(period / dt);
        auto xi0 = HistorySegment::sampled(1, [](int, double t) { return -t; }, vdt, 1.0);
        auto result = dominant_floquet_exponent(single, tau, sys, orbit, period, 8, 5, &xi0);
        CHECK(result.collapsed_to_zero);
        CHECK(result.exponent == -std::numeric_limits<double>::infinity());
    }
    SECTION("orbits failing the periodicity check are rejected") {
        NetworkTopology single(1, {{1, 1, 1}});
        DelayDistribution tau({0.3});
        auto sys = SystemDefinition::linear(single, {0.0}, {-1.0});
        auto hist = HistorySegment::constant(1, 1.0, 1e-2, 0.3); // decaying, not periodic
        auto run = simulate(single, tau, sys, hist, 6.0, 1e-2);
        CHECK_THROWS_AS(dominant_floquet_exponent(single, tau, sys, run, 2.0, 8, 5),
                        domain_error);
    }
}

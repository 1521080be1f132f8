#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

// End-to-end checks of the command-line tool; the binary path is injected by
// the build.

namespace {

using nlohmann::json;

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    std::string out_file = "cli_stdout_tmp.txt";
    std::string cmd = std::string(DELAYNET_CLI_PATH) + " " + args + " > " + out_file + " 2>/dev/null";
    int status = std::system(cmd.c_str());
    std::ifstream in(out_file);
    std::stringstream buffer;
    buffer << in.rdbuf();
    std::remove(out_file.c_str());
    int code = -1;
#ifdef WEXITSTATUS
    if (status != -1) code = WEXITSTATUS(status);
#else
    code = status;
#endif
    return {code, buffer.str()};
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

struct DemoFiles {
    DemoFiles() {
        REQUIRE(run_cli("--demo ring3 --out cli_ring3.json").exit_code == 0);
        REQUIRE(run_cli("--demo pair --out cli_pair.json").exit_code == 0);
        REQUIRE(run_cli("--demo twocycle --out cli_twocycle.json").exit_code == 0);
    }
    ~DemoFiles() {
        std::remove("cli_ring3.json");
        std::remove("cli_pair.json");
        std::remove("cli_twocycle.json");
    }
};

} // namespace

TEST_CASE("reduce on the 3-ring reports one essential delay of 9") {
    DemoFiles files;
    auto res = run_cli("reduce cli_ring3.json");
    REQUIRE(res.exit_code == 0);
    json doc = json::parse(res.output);
    CHECK(doc["essential_count"] == 1);
    REQUIRE(doc["distinct_delays"].size() == 1);
    CHECK(doc["distinct_delays"][0].get<double>() == 9.0);
    CHECK(doc["eta"] == json::array({0.0, 2.0, 5.0}));
}

TEST_CASE("essential prints the cycle space dimension") {
    DemoFiles files;
    auto res = run_cli("essential cli_pair.json");
    CHECK(res.exit_code == 0);
    CHECK(res.output == "1\n");
}

TEST_CASE("reducibility reports infeasibility politely") {
    DemoFiles files;
    auto res = run_cli("reducibility cli_twocycle.json --m 1");
    REQUIRE(res.exit_code == 0);
    json doc = json::parse(res.output);
    CHECK(doc["feasible"] == false);
    CHECK(doc["min_residual"].get<double>() > 1e-6);

    auto res2 = run_cli("reducibility cli_twocycle.json --m 2");
    REQUIRE(res2.exit_code == 0);
    json doc2 = json::parse(res2.output);
    CHECK(doc2["feasible"] == true);
    CHECK(doc2["theta"][0].get<double>() == Catch::Approx(2.0).margin(1e-9));
    CHECK(doc2["theta"][1].get<double>() == Catch::Approx(3.0).margin(1e-9));
}

TEST_CASE("reduce --emit-network round-trips through relatable") {
    DemoFiles files;
    auto res = run_cli("reduce cli_ring3.json --emit-network cli_ring3_reduced.json");
    REQUIRE(res.exit_code == 0);
    auto rel = run_cli("relatable cli_ring3.json cli_ring3_reduced.json");
    REQUIRE(rel.exit_code == 0);
    json doc = json::parse(rel.output);
    CHECK(doc["relatable"] == true);
    CHECK(doc["eta"] == json::array({0.0, 2.0, 5.0}));
    std::remove("cli_ring3_reduced.json");
}

TEST_CASE("identical invocations produce byte-identical output") {
    DemoFiles files;
    auto a = run_cli("reduce cli_ring3.json");
    auto b = run_cli("reduce cli_ring3.json");
    CHECK(a.output == b.output);
    auto s1 = run_cli("spectrum cli_pair.json --im-max 5");
    auto s2 = run_cli("spectrum cli_pair.json --im-max 5");
    REQUIRE(s1.exit_code == 0);
    CHECK(s1.output == s2.output);
}

TEST_CASE("simulate writes the trajectory CSV") {
    DemoFiles files;
    auto res = run_cli("simulate cli_pair.json --t-end 1 --dt 0.01 --history const:1");
    REQUIRE(res.exit_code == 0);
    CHECK(res.output.rfind("t,x1,x2\n", 0) == 0);
    // history rows reach back to -r = -3
    CHECK(res.output.find("\n-3,1,1\n") != std::string::npos);
}

TEST_CASE("exit codes distinguish error classes") {
    DemoFiles files;
    SECTION("missing input file -> 2") {
        CHECK(run_cli("reduce no_such_file.json").exit_code == 2);
    }
    SECTION("schema violation -> 2") {
        write_file("cli_bad_schema.json", R"({"nodes": 2, "edges": [], "bogus": 1})");
        CHECK(run_cli("reduce cli_bad_schema.json").exit_code == 2);
        std::remove("cli_bad_schema.json");
    }
    SECTION("negative delay -> 1") {
        write_file("cli_bad_delay.json",
                   R"({"nodes": 2, "edges": [{"id": 1, "source": 1, "target": 2, "delay": -1.0}]})");
        CHECK(run_cli("reduce cli_bad_delay.json").exit_code == 1);
        std::remove("cli_bad_delay.json");
    }
    SECTION("disconnected network -> 1") {
        write_file("cli_disconnected.json",
                   R"({"nodes": 4, "edges": [{"id": 1, "source": 1, "target": 2, "delay": 1.0},
                                             {"id": 2, "source": 3, "target": 4, "delay": 1.0}]})");
        CHECK(run_cli("reduce cli_disconnected.json").exit_code == 1);
        std::remove("cli_disconnected.json");
    }
    SECTION("bad flags -> 2") {
        CHECK(run_cli("reduce").exit_code == 2);
        CHECK(run_cli("simulate cli_pair.json --dt -1").exit_code == 2);
        CHECK(run_cli("reducibility cli_twocycle.json").exit_code == 2); // --m required
    }
    SECTION("numerical divergence -> 3") {
        write_file("cli_unstable.json",
                   R"({"nodes": 1, "edges": [{"id": 1, "source": 1, "target": 1, "delay": 1.0}],
                       "system": {"kind": "linear", "params": {"d": [5.0]},
                                  "edge_weights": [{"id": 1, "weight": 0.0}]}})");
        CHECK(run_cli("simulate cli_unstable.json --t-end 20 --dt 0.01").exit_code == 3);
        std::remove("cli_unstable.json");
    }
}

TEST_CASE("mle subcommand emits both estimates") {
    DemoFiles files;
    auto res = run_cli("mle cli_pair.json --history const:0.5 --mle-t-end 40 --dt 0.01 --seed 2");
    REQUIRE(res.exit_code == 0);
    json doc = json::parse(res.output);
    CHECK(doc.contains("mle_original"));
    CHECK(doc.contains("mle_reduced"));
    CHECK(doc["mle_original"]["value"].get<double>() < 0.0); // the testbed is stable
}

#include <doctest.h>

#include "pimac/expcli.hpp"

#include <cmath>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace pimac;
namespace fs = std::filesystem;

namespace {

int line_of(const std::string& text) {
    std::istringstream in(text);
    try {
        parse_channel(in);
    } catch (const ChannelParseError& e) {
        return e.line();
    }
    return 0;
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(PIMAC_CLI) + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path scratch_dir() {
    auto d = fs::temp_directory_path() / "pimac_expcli_test";
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("builtin channels") {
    auto h1 = load_channel("H1");
    CHECK(h1.J() == 3);
    CHECK(h1.gains(1, 2) == std::polar(2.85, 2.41));
    CHECK(h1.gains(0, 0) == std::polar(2.03, -0.68));
    CHECK(h1.noise_variance == 1.0);
    CHECK(h1.power_caps == Vec::Ones(3));
    CHECK(load_channel("H2").gains(1, 2) == std::polar(3.4, 2.23));
    auto h7 = load_channel("H1+Hprime(7)");
    CHECK(h7.J() == 7);
    CHECK(h7.gains(0, 3) == std::polar(0.40, 1.3972));
    CHECK(h7.gains(1, 6) == std::polar(0.67, -1.6414));
    CHECK(h7.gains(0, 2) == h1.gains(0, 2));
    CHECK(load_channel("H1+Hprime(3)").gains == h1.gains);
    CHECK_THROWS_AS(load_channel("H1+Hprime(8)"), ConfigError);
    CHECK_THROWS_AS(load_channel("/nonexistent/channel.txt"), ConfigError);
}

TEST_CASE("channel file") {
    std::istringstream in(
        "# two MAC users and a pair\n"
        "J=3 sigma2=0.5 caps=1,2,3\n"
        "1 1 2.03 -0.68\n1 2 2.1 2.64\n1 3 3.2 1.48\n"
        "2 1 4.7 1.97\n2 2 4.5 -0.66   # trailing comment\n2 3 2.85 2.41\n");
    auto ch = parse_channel(in);
    CHECK(ch.noise_variance == 0.5);
    CHECK(ch.power_caps(2) == 3.0);
    CHECK(ch.gains == load_channel("H1").gains);

    std::istringstream one("J=3 sigma2=1 caps=2\n1 1 1 0\n1 2 1 0\n1 3 1 0\n2 1 1 0\n2 2 1 0\n2 3 1 0\n");
    CHECK(parse_channel(one).power_caps == Vec::Constant(3, 2.0));
}

TEST_CASE("channel file errors carry line and column") {
    const std::string ok_rows = "1 1 1 0\n1 2 1 0\n1 3 1 0\n2 1 1 0\n2 2 1 0\n";
    CHECK(line_of("") == 1);
    CHECK(line_of("J=3 sigma2=1\n") == 1);
    CHECK(line_of("J=3 sigma2=1 caps=1\n1 1 x 0\n") == 2);
    CHECK(line_of("J=3 sigma2=1 caps=1\n\n3 1 1 0\n") == 3);
    CHECK(line_of("J=3 sigma2=1 caps=1\n1 4 1 0\n") == 2);
    CHECK(line_of("J=3 sigma2=1 caps=1\n1 1 1\n") == 2);
    CHECK(line_of("J=3 sigma2=1 caps=1\n1 1 1 0\n1 1 1 0\n") == 3);
    CHECK(line_of("J=3 sigma2=1 caps=1\n" + ok_rows) == 7);
    CHECK(line_of("J=3 sigma2=1 caps=1,2\n") == 1);
    try {
        std::istringstream in("J=3 sigma2=1 caps=1\n1 1 1.5q 0\n");
        parse_channel(in);
        FAIL("no error");
    } catch (const ChannelParseError& e) {
        CHECK(e.line() == 2);
        CHECK(e.column() == 8);
        CHECK(std::string(e.what()).find("line 2, column 8") != std::string::npos);
    }
}

TEST_CASE("grids and profiles") {
    auto g = parse_grid("0:1:0.25");
    REQUIRE(g.size() == 5);
    CHECK(g[4] == doctest::Approx(1.0));
    CHECK(parse_grid("0.2") == std::vector<double>{0.2});
    CHECK(parse_grid("0.1:0.7:0.2").size() == 4);
    CHECK(parse_grid("1:0:0.1").empty());
    CHECK(parse_grid("").empty());
    CHECK_THROWS_AS(parse_grid("0:1:0"), ConfigError);
    CHECK_THROWS_AS(parse_grid("0:1"), ConfigError);
    CHECK_THROWS_AS(parse_grid("a:1:0.1"), ConfigError);
    auto a = parse_alpha("0.6,0.2,0.2");
    CHECK(a.alpha[0] == doctest::Approx(0.6));
    CHECK_THROWS_AS(parse_alpha("0.5,0.5"), ConfigError);
    CHECK_THROWS_AS(parse_alpha("0.5,0.5,0.5"), ConfigError);
}

TEST_CASE("config validation") {
    auto c = default_config("p2p-vs-mac");
    CHECK_NOTHROW(c.validate());
    c.grid.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(run_experiment(c), ConfigError);
    CHECK_THROWS_AS(default_config("nope").validate(), ConfigError);
    auto t = default_config("table1");
    t.alphas.clear();
    CHECK_THROWS_AS(t.validate(), ConfigError);
    auto m = default_config("multiuser");
    m.users = {9};
    CHECK_THROWS_AS(m.validate(), ConfigError);
    auto o = default_config("power-rate");
    o.order = 3;
    CHECK_THROWS_AS(o.validate(), ConfigError);

    auto j = apply_json(default_config("power-sinr"),
                        nlohmann::json{{"grid", "0.1:0.3:0.1"}, {"decoding", "parallel"}, {"seed", 7},
                                       {"solver", {{"k_rand", 50}}}});
    CHECK(j.grid.size() == 3);
    CHECK(j.decoding == Decoding::Parallel);
    CHECK(j.solver.seed == 7);
    CHECK(j.solver.k_rand == 50);
    CHECK_THROWS_AS(apply_json(j, nlohmann::json{{"decoding", "sideways"}}), ConfigError);
    CHECK_THROWS_AS(apply_json(j, nlohmann::json{{"order", "two"}}), ConfigError);
}

TEST_CASE("seed from the environment") {
    setenv("PIMAC_SEED", "42", 1);
    CHECK(default_config("rate-region").solver.seed == 42);
    setenv("PIMAC_SEED", "x", 1);
    CHECK_THROWS_AS(default_config("rate-region"), ConfigError);
    unsetenv("PIMAC_SEED");
    CHECK(default_config("rate-region").solver.seed == 1);
}

TEST_CASE("p2p row at zero MAC demand") {
    auto c = default_config("p2p-vs-mac");
    c.grid = {0.0};
    c.mode = "improper";
    auto r = run_experiment(c);
    REQUIRE(r.rows.size() == 1);
    REQUIRE(r.rows[0].rates);
    CHECK((*r.rows[0].rates)[2] == doctest::Approx(std::log2(1 + 2.85 * 2.85)).epsilon(2e-3));
    CHECK(*r.rows[0].audit_slack >= -1e-6);
    REQUIRE(r.checks.size() == 1);
    CHECK(r.checks[0].pass());
}

TEST_CASE("power-rate proper row equals the library call") {
    auto c = default_config("power-rate");
    c.channel = "H2";
    c.mode = "proper";
    c.grid = {0.2};
    auto r = run_experiment(c);
    REQUIRE(r.rows.size() == 1);
    auto direct = proper_min_power_rates(load_channel("H2").with_caps(1e6), Vec::Constant(3, 0.2), named_order(3, 1));
    CHECK(*r.rows[0].p_total == direct.total);
    CHECK(r.rows[0].mode == "proper-order1");
    CHECK(r.rows[0].p_per_user.size() == 3);
}

TEST_CASE("rows are deterministic and serial equals parallel") {
    auto c = default_config("rate-region");
    c.alphas = simplex_grid(2);
    auto a = to_csv(run_experiment(c).rows);
    auto b = to_csv(run_experiment(c).rows);
    c.exec = Exec::Serial;
    auto s = to_csv(run_experiment(c).rows);
    CHECK(a == b);
    CHECK(a == s);
    CHECK(a.rfind(kCsvHeader, 0) == 0);
    CHECK(std::count(a.begin(), a.end(), '\n') == 1 + 2 * 6);
}

TEST_CASE("multiuser ratio is zero where the proper problem fails") {
    auto c = default_config("multiuser");
    c.users = {7};
    c.grid = {0.1, 0.3};
    auto r = run_experiment(c);
    REQUIRE(r.rows.size() == 4);
    CHECK(r.rows[0].mode == "proper");
    CHECK(r.rows[0].status == "converged");
    CHECK(*r.rows[1].ratio == doctest::Approx(*r.rows[1].p_total / *r.rows[0].p_total));
    CHECK(r.rows[2].status == "infeasible");
    CHECK_FALSE(r.rows[2].p_total);
    REQUIRE(r.rows[3].ratio);
    CHECK(*r.rows[3].ratio == 0.0);
    for (const auto& row : r.rows)
        if (row.audit_slack) CHECK(*row.audit_slack >= -1e-6);
}

TEST_CASE("outputs") {
    auto d = scratch_dir();
    auto c = default_config("power-sinr");
    c.grid = {0.1};
    c.mode = "proper";
    c.decoding = Decoding::Parallel;
    c.out = (d / "sinr.csv").string();
    auto r = run_experiment(c);
    write_outputs(c, r);
    std::ifstream csv(d / "sinr.csv");
    std::stringstream ss;
    ss << csv.rdbuf();
    CHECK(ss.str() == to_csv(r.rows));
    std::ifstream js(d / "sinr.json");
    auto j = nlohmann::json::parse(js);
    CHECK(j["rows"].size() == 1);
    CHECK(j["rows"][0]["P_total"].get<double>() == *r.rows[0].p_total);
    CHECK(summary(r).find("rows") != std::string::npos);
    c.out = "/nonexistent/dir/x.csv";
    CHECK_THROWS_AS(write_outputs(c, r), ConfigError);
}

TEST_CASE("cli exit codes") {
    auto out = (scratch_dir() / "cli.csv").string();
    CHECK(run_cli("--experiment p2p-vs-mac --grid 0 --mode improper --out " + out) == 0);
    CHECK(fs::exists(out));
    CHECK(run_cli("--experiment p2p-vs-mac --grid 1:0:0.1") != 0);
    CHECK(run_cli("--experiment bogus") != 0);
    CHECK(run_cli("--grid 0") != 0);
    CHECK(run_cli("--experiment rate-region --channel /nonexistent") != 0);
    auto bad = scratch_dir() / "bad.txt";
    std::ofstream(bad) << "J=3 sigma2=1 caps=1\n1 1 oops 0\n";
    CHECK(run_cli("--experiment rate-region --channel " + bad.string()) == 3);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "arbcost/arbcost.hpp"
#include "cli.hpp"
#include "synthetic.hpp"

using namespace arbcost;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
    int status;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "arbcost");
    std::ostringstream out, err;
    const int status = cli::run(args, out, err);
    return {status, out.str(), err.str()};
}

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() / ("arbcost_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }

    std::string write(const std::string& name, const std::string& content) const {
        std::ofstream(path_ / name, std::ios::binary) << content;
        return (path_ / name).string();
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

std::string read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string full(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string chain_csv(const OptionChain& chain) {
    std::string s = "expiry,strike,bid,ask,last,type\n";
    for (const auto& q : chain.quotes) {
        s += format_date(q.expiry) + "," + full(q.strike) + "," + full(q.bid) + "," + full(q.ask) + "," + full(q.last) +
             "," + (q.kind == OptionKind::call ? "C" : "P") + "\n";
    }
    return s;
}

std::string prices_csv(const PriceSeries& s) {
    std::string out = "date,adj_close\n";
    for (const auto& p : s.points) out += format_date(p.date) + "," + full(p.adj_close) + "\n";
    return out;
}

PriceSeries walk(std::uint64_t seed, std::size_t n, double drift, double vol) {
    const NormalStream ns(seed);
    PriceSeries s{"X", {}};
    double p = 100.0;
    for (std::size_t i = 0; i < n; ++i) {
        s.points.push_back({testing::add_days(testing::ymd(2018, 1, 1), static_cast<int>(i)), p});
        p *= 1.0 + drift + vol * ns.normal(i);
    }
    return s;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

double field(const std::string& key_value_csv, const std::string& key) {
    for (const auto& row : csv_rows(key_value_csv))
        if (row.size() == 2 && row[0] == key) return std::stod(row[1]);
    FAIL("missing field " << key);
    return 0.0;
}

}  // namespace

TEST_CASE("price: constant payoff of 1 prints 1") {
    TempDir dir;
    const auto cfg = dir.write("c.json", R"({"params":{"mu":0.05,"sigma":0.2,"m":0.03,"v":0.1,"c":1.3},
        "lattice":{"dt":0.01,"steps":10},"payoff":{"type":"constant","value":1}})");
    const auto r = run({"price", "--config", cfg});
    REQUIRE(r.status == 0);
    CHECK(field(r.out, "price") == 1.0);
    CHECK_THAT(r.out, ContainsSubstring("price,1\n"));
}

TEST_CASE("price: c = 0 call converges to Black-Scholes") {
    TempDir dir;
    const auto cfg = dir.write("c.json", R"({"params":{"mu":0.05,"sigma":0.2,"m":0.03,"v":0.1,"c":0},
        "lattice":{"horizon":1,"steps":500},"payoff":{"type":"call","strike":100},"discount":"simple"})");
    const auto r = run({"price", "--config", cfg, "--format", "json"});
    REQUIRE(r.status == 0);
    const auto j = json::parse(r.out);
    const double bs = bs_price(100.0, {100.0, 1.0, OptionKind::call}, 0.01, 0.2);
    CHECK(std::abs(j["price"].get<double>() - bs) / bs <= 5e-4);
    CHECK(j["r_star"].get<double>() == 0.01);
}

TEST_CASE("price: degenerate spread exits with the error name") {
    TempDir dir;
    const auto cfg = dir.write("c.json", R"({"params":{"mu":0.05,"sigma":0.2,"m":0.03,"v":0.2,"c":0},
        "lattice":{"horizon":1,"steps":50},"payoff":{"type":"call","strike":100}})");
    const auto r = run({"price", "--config", cfg});
    CHECK(r.status != 0);
    CHECK_THAT(r.err, ContainsSubstring("error: DegenerateSpread"));
    CHECK(r.out.empty());
}

TEST_CASE("price: flags override the config") {
    TempDir dir;
    const auto cfg = dir.write("c.json", R"({"params":{"mu":0.05,"sigma":0.2,"m":0.03,"v":0.1,"c":0},
        "lattice":{"horizon":1,"steps":50},"payoff":{"type":"call","strike":100}})");
    const auto base = run({"price", "--config", cfg});
    const auto over = run({"price", "--config", cfg, "--strike", "90", "--steps", "20"});
    REQUIRE(base.status == 0);
    REQUIRE(over.status == 0);
    CHECK(field(over.out, "steps") == 20.0);
    CHECK(field(over.out, "price") > field(base.out, "price"));
}

TEST_CASE("price: node grid and Monte Carlo output") {
    TempDir dir;
    const auto cfg = dir.write("c.json", R"({"params":{"mu":0.05,"sigma":0.2,"m":0.03,"v":0.1,"c":0.5},
        "lattice":{"horizon":1,"steps":4},"payoff":{"type":"put","strike":100,"underlying":"V"},
        "monte_carlo":{"draws":20000}})");
    const auto grid = dir.file("nodes.csv");
    const auto one = run({"price", "--config", cfg, "--seed", "11", "--threads", "1"});
    const auto four = run({"price", "--config", cfg, "--seed", "11", "--threads", "4"});
    REQUIRE(one.status == 0);
    CHECK(one.out == four.out);
    const auto a = adjusted_params({0.05, 0.2, 0.03, 0.1, 0.5});
    CHECK(std::abs(field(one.out, "mc_mean_s") - 100.0 * std::exp(a.r_star)) <= 3.0 * field(one.out, "mc_stderr_s"));

    REQUIRE(run({"price", "--config", cfg, "--out", dir.file("p.csv")}).status == 0);
    std::ofstream(dir.file("g.json")) << R"({"params":{"mu":0.05,"sigma":0.2,"m":0.03,"v":0.1,"c":0.5},
        "lattice":{"horizon":1,"steps":4},"payoff":{"type":"put","strike":100},"node_grid":")" + grid + "\"}";
    REQUIRE(run({"price", "--config", dir.file("g.json")}).status == 0);
    const auto rows = csv_rows(read(grid));
    REQUIRE(rows.size() == 1 + 15);
    CHECK(rows[0] == std::vector<std::string>{"step", "node", "s", "v", "value"});
    CHECK(read(dir.file("p.csv")).rfind("field,value\n", 0) == 0);
}

TEST_CASE("price: lattice takes exactly two of steps, dt, horizon") {
    TempDir dir;
    const auto cfg = dir.write("c.json", R"({"params":{"mu":0.05,"sigma":0.2,"m":0.03,"v":0.1,"c":0},
        "lattice":{"horizon":1,"steps":50,"dt":0.02},"payoff":{"type":"call","strike":100}})");
    const auto r = run({"price", "--config", cfg});
    CHECK(r.status == 2);
    CHECK_THAT(r.err, ContainsSubstring("ConfigError"));
    const auto ok = dir.write("d.json", R"({"params":{"mu":0.05,"sigma":0.2,"m":0.03,"v":0.1,"c":0},
        "lattice":{"horizon":1,"dt":0.02},"payoff":{"type":"call","strike":100}})");
    const auto r2 = run({"price", "--config", ok});
    REQUIRE(r2.status == 0);
    CHECK(field(r2.out, "steps") == 50.0);
}

TEST_CASE("invalid config writes nothing") {
    TempDir dir;
    const auto cfg = dir.write("c.json", R"({"params":{"mu":0.05,"sigma":0.2,"m":0.03,"v":0.1,"c":0},
        "lattice":{"horizon":1,"steps":50},"payoff":{"type":"call","strike":100},"node_grid":"nodes.csv","colour":1})");
    const auto out = dir.file("out.csv");
    const auto r = run({"price", "--config", cfg, "--out", out});
    CHECK(r.status == 2);
    CHECK_THAT(r.err, ContainsSubstring("error: ConfigError: unknown key colour"));
    CHECK_FALSE(fs::exists(out));
    CHECK(run({"price", "--config", dir.file("missing.json")}).status == 2);
    CHECK(run({"price"}).status == 2);
    CHECK(run({"nonsense"}).status == 2);
}

TEST_CASE("calibrate: direct scalar mode on the SPY inputs") {
    const auto r = run({"calibrate", "--sigma-star", "0.1385", "--sigma", "0.0091", "--mu", "0.0004321"});
    REQUIRE(r.status == 0);
    const auto j = json::parse(r.out);
    CHECK_THAT(j["c"].get<double>(), WithinAbs(299.44, 0.5));
    CHECK(j["mode"] == "direct");
    CHECK(run({"calibrate", "--sigma-star", "0.1", "--sigma", "0.1", "--mu", "0"}).status == 1);
    CHECK(run({"calibrate", "--sigma-star", "0.1385", "--sigma", "0.0091", "--mu", "0.0004", "--format", "csv"}).status == 2);
}

TEST_CASE("calibrate: noiseless chain recovers rate, vol and c") {
    TempDir dir;
    const auto series = walk(42, 253, 0.0005, 0.01);
    const Moments sample = sample_moments(series);
    const double c0 = 120.0, r0 = 0.02;
    const double sigma_star = sample.stdev + c0 * sample.mean;
    const auto chain = testing::make_chain(
        250.0, {30, 60, 90, 180, 365},
        [&](double tau) {
            std::vector<double> ks;
            for (int i = 0; i <= 10; ++i) ks.push_back(250.0 * std::exp((-1.5 + 0.3 * i) * sigma_star * std::sqrt(tau)));
            return ks;
        },
        [&](double k, double tau) {
            const double p = bs_price(250.0, {k, tau, OptionKind::call}, r0, sigma_star);
            return testing::BidAsk{p, p};
        });
    std::string csv = chain_csv(chain);
    csv += "2019-11-22,250,3,2,2.5,C\n";  // bid > ask, rejected by the loader
    dir.write("chain.csv", csv);
    dir.write("prices.csv", prices_csv(series));
    const auto cfg = dir.write("cal.json", R"({"chain":{"file":"chain.csv","instrument":"SYN",
        "quote_date":"2019-10-22","spot":250,"prices":"prices.csv"}})");
    const auto r = run({"calibrate", "--config", cfg});
    REQUIRE(r.status == 0);
    const auto j = json::parse(r.out);
    CHECK_THAT(j["r_star"].get<double>(), WithinAbs(r0, 1e-6));
    CHECK_THAT(j["sigma_star"].get<double>(), WithinAbs(sigma_star, 1e-6));
    CHECK_THAT(j["c"].get<double>(), WithinAbs(c0, 1e-6 / sample.mean));
    CHECK_THAT(j["c_per_quote"]["mean"].get<double>(), WithinAbs(c0, 1e-6 / sample.mean));
    CHECK(j["quotes"]["rows"] == 56);
    CHECK(j["quotes"]["accepted"] == 55);
    CHECK(j["quotes"]["rejected"] == 1);
    REQUIRE(j["skip_log"].size() == 1);
    CHECK(j["skip_log"][0] == "ROW 56: bid > ask");
    CHECK_THAT(j["sample"]["mu"].get<double>(), WithinRel(sample.mean, 1e-11));

    const auto annual = run({"calibrate", "--config", cfg, "--annualization", "252"});
    REQUIRE(annual.status == 0);
    CHECK(json::parse(annual.out)["c"] == j["c"]);
    std::ofstream(dir.file("cal2.json")) << R"({"moment_units":"annualized","chain":{"file":"chain.csv",
        "quote_date":"2019-10-22","spot":250,"prices":"prices.csv"}})";
    const auto a2 = run({"calibrate", "--config", dir.file("cal2.json"), "--annualization", "252"});
    REQUIRE(a2.status == 0);
    const Moments yearly = annualize(sample, 252);
    CHECK_THAT(json::parse(a2.out)["c"].get<double>(),
               WithinRel((j["sigma_star"].get<double>() - yearly.stdev) / yearly.mean, 1e-9));
}

TEST_CASE("calibrate: empty chain file") {
    TempDir dir;
    dir.write("chain.csv", "expiry,strike,bid,ask,last,type\n");
    dir.write("prices.csv", prices_csv(walk(1, 30, 0.001, 0.01)));
    const auto cfg = dir.write("cal.json", R"({"chain":{"file":"chain.csv","quote_date":"2019-10-22",
        "spot":250,"prices":"prices.csv"}})");
    const auto r = run({"calibrate", "--config", cfg});
    CHECK(r.status == 1);
    CHECK_THAT(r.err, ContainsSubstring("error: EmptyChain"));
}

TEST_CASE("surfaces: flat chain gives a single-valued CSV") {
    TempDir dir;
    dir.write("flat.csv", chain_csv(testing::flat_vol_chain(100.0, 0.02, 0.25, {30, 90, 365})));
    const auto cfg = dir.write("s.json", R"({"r_star":0.02,"surfaces":["iv"],"metadata":false,
        "chains":[{"file":"flat.csv","instrument":"FLAT","quote_date":"2019-10-22","spot":100}]})");
    const auto out = dir.file("out");
    const auto r = run({"surfaces", "--config", cfg, "--out", out});
    REQUIRE(r.status == 0);
    const auto rows = csv_rows(read(out + "/FLAT_iv.csv"));
    REQUIRE(rows.size() > 2);
    CHECK(rows[0] == std::vector<std::string>{"moneyness", "maturity", "value"});
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][2] == "0.25");
    CHECK_FALSE(fs::exists(out + "/surfaces.json"));

    const auto m = run({"surfaces", "--config", cfg, "--out", dir.file("matrix"), "--format", "csv"});
    REQUIRE(m.status == 0);
    std::ofstream(dir.file("m.json")) << R"({"r_star":0.02,"surfaces":["iv"],"layout":"matrix",
        "chains":[{"file":"flat.csv","instrument":"FLAT","quote_date":"2019-10-22","spot":100}]})";
    REQUIRE(run({"surfaces", "--config", dir.file("m.json"), "--out", dir.file("matrix")}).status == 0);
    const auto mat = csv_rows(read(dir.file("matrix") + "/FLAT_iv.csv"));
    CHECK(mat[0][0] == "moneyness");
    CHECK(mat.size() == 22);
}

TEST_CASE("surfaces: combined fit pooling identities") {
    TempDir dir;
    const SampleParams a{0.0004321, 0.0091}, b{0.0004, 0.0095};
    const double c0 = 299.4773;
    const std::vector<int> mats{30, 60, 90, 180, 365};
    dir.write("a.csv", chain_csv(testing::flat_vol_chain(299.03, 0.0134, a.sigma + c0 * a.mu, mats)));
    dir.write("b.csv", chain_csv(testing::flat_vol_chain(300.61, 0.0134, b.sigma + c0 * b.mu, mats)));
    const std::string sa = R"("sample":{"mu":0.0004321,"sigma":0.0091})";
    const std::string sb = R"("sample":{"mu":0.0004,"sigma":0.0095})";

    const auto two = dir.write("two.json", R"({"r_star":0.0134,"surfaces":["combined","acs"],"chains":[
        {"file":"a.csv","instrument":"A","quote_date":"2019-10-22","spot":299.03,)" + sa + R"(},
        {"file":"b.csv","instrument":"B","quote_date":"2019-10-22","spot":300.61,)" + sb + "}]}");
    REQUIRE(run({"surfaces", "--config", two, "--out", dir.file("two")}).status == 0);
    const auto meta = json::parse(read(dir.file("two") + "/surfaces.json"));
    CHECK_THAT(meta["combined"]["c"].get<double>(), WithinAbs(c0, 1e-4));
    CHECK(fs::exists(dir.file("two") + "/A_acs.csv"));
    CHECK(fs::exists(dir.file("two") + "/B_acs.csv"));
    CHECK(fs::exists(dir.file("two") + "/combined_acs.csv"));

    // a chain pooled with itself fits the same c as on its own
    dir.write("n.csv", chain_csv(testing::make_chain(
                           100.0, mats,
                           [](double tau) {
                               std::vector<double> ks;
                               for (int i = -5; i <= 5; ++i) ks.push_back(100.0 * std::exp(0.03 * i * std::sqrt(tau / 0.1)));
                               return ks;
                           },
                           [](double k, double tau) {
                               const double vol = 0.15 + 0.3 * std::log(k / 100.0) * std::log(k / 100.0);
                               return testing::BidAsk{bs_price(100.0, {k, tau, OptionKind::call}, 0.01, vol - 0.004),
                                                      bs_price(100.0, {k, tau, OptionKind::call}, 0.01, vol + 0.004)};
                           })));
    const std::string sample = R"("sample":{"mu":0.0005,"sigma":0.01})";
    const auto self = dir.write("self.json", R"({"r_star":0.01,"surfaces":["combined"],"chains":[
        {"file":"n.csv","instrument":"N","quote_date":"2019-10-22","spot":100,)" + sample + R"(},
        {"file":"n.csv","instrument":"N2","quote_date":"2019-10-22","spot":100,)" + sample + "}]}");
    const auto single = dir.write("single.json", R"({"r_star":0.01,"surfaces":["combined"],"chains":[
        {"file":"n.csv","instrument":"N","quote_date":"2019-10-22","spot":100,)" + sample + "}]}");
    REQUIRE(run({"surfaces", "--config", self, "--out", dir.file("self")}).status == 0);
    REQUIRE(run({"surfaces", "--config", single, "--out", dir.file("single")}).status == 0);
    const double c_self = json::parse(read(dir.file("self") + "/surfaces.json"))["combined"]["c"].get<double>();
    const double c_single = json::parse(read(dir.file("single") + "/surfaces.json"))["combined"]["c"].get<double>();
    CHECK_THAT(c_self, WithinAbs(c_single, 1e-6));
}

TEST_CASE("surfaces: errors") {
    TempDir dir;
    // every quote off the grid
    dir.write("far.csv", "expiry,strike,bid,ask,last,type\n2019-11-22,1000,0.01,0.02,0.01,C\n");
    const auto cfg = dir.write("s.json", R"({"r_star":0.02,"surfaces":["iv"],
        "chains":[{"file":"far.csv","quote_date":"2019-10-22","spot":100}]})");
    const auto r = run({"surfaces", "--config", cfg, "--out", dir.file("out")});
    CHECK(r.status == 1);
    CHECK_THAT(r.err, ContainsSubstring("error: EmptySurface"));
    CHECK_FALSE(fs::exists(dir.file("out")));

    const auto no_sample = dir.write("n.json", R"({"r_star":0.02,"surfaces":["acs"],
        "chains":[{"file":"far.csv","quote_date":"2019-10-22","spot":100}]})");
    CHECK(run({"surfaces", "--config", no_sample, "--out", dir.file("out")}).status == 2);
    CHECK(run({"surfaces", "--config", cfg}).status == 2);
}

TEST_CASE("rfr-series: shapes and the Black reduction") {
    TempDir dir;
    const auto s = walk(5, 61, 0.0006, 0.012);
    const auto v = walk(6, 61, 0.0003, 0.006);
    dir.write("s.csv", prices_csv(s));
    dir.write("v.csv", prices_csv(v));
    const auto cfg = dir.write("r.json", R"({"prices_s":"s.csv","prices_v":"v.csv","c":0,"window":20})");

    const auto r = run({"rfr-series", "--config", cfg});
    REQUIRE(r.status == 0);
    const auto rows = csv_rows(r.out);
    REQUIRE(rows.size() == 1 + 60 - 20 + 1);
    CHECK(rows[0] == std::vector<std::string>{"date", "r_star", "degenerate_flag"});
    const auto rs = returns_of(s), rv = returns_of(v);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i][0] == format_date(s.points[i + 19].date));
        if (i > 1) CHECK(rows[i][0] > rows[i - 1][0]);
        const auto a = return_moments(std::span(rs).subspan(i - 1, 20));
        const auto b = return_moments(std::span(rv).subspan(i - 1, 20));
        CHECK_THAT(std::stod(rows[i][1]), WithinRel(black_rate(a.mean, a.stdev, b.mean, b.stdev), 1e-11));
        CHECK(rows[i][2] == "0");
    }

    const auto one = run({"rfr-series", "--config", cfg, "--window", "60"});
    REQUIRE(one.status == 0);
    CHECK(csv_rows(one.out).size() == 2);

    const auto same = dir.write("same.json", R"({"prices_s":"s.csv","prices_v":"s.csv","c":3,"window":20})");
    const auto deg = run({"rfr-series", "--config", same, "--format", "json"});
    REQUIRE(deg.status == 0);
    const auto j = json::parse(deg.out);
    REQUIRE(j["points"].size() == 41);
    for (const auto& p : j["points"]) {
        CHECK(p["degenerate"] == true);
        CHECK(p["r_star"].is_null());
    }

    const auto short_run = run({"rfr-series", "--config", cfg, "--window", "61"});
    CHECK(short_run.status == 1);
    CHECK_THAT(short_run.err, ContainsSubstring("error: InsufficientData"));
    CHECK(run({"rfr-series", "--config", cfg, "--window", "2.5"}).status == 2);
}

TEST_CASE("rfr-series: constant inputs give a constant series") {
    TempDir dir;
    // every window sees the same two return values, so (mu, sigma, m, v) are
    // constant and r* must be too
    PriceSeries s{"S", {}}, v{"V", {}};
    double ps = 100.0, pv = 50.0;
    for (int i = 0; i < 80; ++i) {
        const auto d = testing::add_days(testing::ymd(2020, 1, 1), i);
        s.points.push_back({d, ps});
        v.points.push_back({d, pv});
        ps *= i % 2 ? 1.02 : 0.99;
        pv *= i % 2 ? 1.01 : 0.997;
    }
    dir.write("s.csv", prices_csv(s));
    dir.write("v.csv", prices_csv(v));
    const auto cfg = dir.write("r.json", R"({"prices_s":"s.csv","prices_v":"v.csv","c":0,"window":20,
        "smoothing":{"moving_average":5}})");
    const auto r = run({"rfr-series", "--config", cfg});
    REQUIRE(r.status == 0);
    const auto rows = csv_rows(r.out);
    const auto a = return_moments(std::vector<double>{0.02, -0.01, 0.02, -0.01});
    const auto b = return_moments(std::vector<double>{0.01, -0.003, 0.01, -0.003});
    const double expected = black_rate(a.mean, a.stdev, b.mean, b.stdev);
    for (std::size_t i = 1; i < rows.size(); ++i)
        CHECK_THAT(std::stod(rows[i][1]), WithinAbs(expected, 1e-9));
}

TEST_CASE("outputs are byte-identical across runs and thread counts") {
    TempDir dir;
    dir.write("s.csv", prices_csv(walk(5, 200, 0.0006, 0.012)));
    dir.write("v.csv", prices_csv(walk(6, 200, 0.0003, 0.006)));
    const auto cfg = dir.write("r.json", R"({"prices_s":"s.csv","prices_v":"v.csv","c":10,"window":50})");
    const auto a = run({"rfr-series", "--config", cfg, "--threads", "1"});
    const auto b = run({"rfr-series", "--config", cfg, "--threads", "3"});
    const auto c = run({"rfr-series", "--config", cfg, "--threads", "0"});
    REQUIRE(a.status == 0);
    CHECK(a.out == b.out);
    CHECK(a.out == c.out);
}

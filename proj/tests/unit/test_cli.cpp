#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "shadow_att/errors.hpp"
#include "shadow_att/rng.hpp"

namespace fs = std::filesystem;
using namespace shadow_att;

namespace {

struct CliRun {
    int code = -1;
    std::string out;
    std::string err;
};

CliRun run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "shadow-att");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliRun r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("shadow_att_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, '\t')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

std::map<std::string, std::string> read_kv(const fs::path& p) {
    std::map<std::string, std::string> kv;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return kv;
}

/// Writes a simulated draw as CSV with an extra constant column.
fs::path write_sim_csv(const fs::path& dir, std::size_t n, std::uint64_t seed) {
    const auto ds = testing::simulate(n, seed);
    std::ostringstream csv;
    csv << "t,y,x1,x2,site\n";
    for (const auto& o : ds.rows()) csv << o.t << "," << o.y << "," << o.u[0] << "," << o.z[0] << ",1\n";
    const fs::path p = dir / "sim.csv";
    std::ofstream(p) << csv.str();
    return p;
}

}  // namespace

TEST_CASE("simulate smoke: exit 0 and two output files") {
    const auto dir = scratch("smoke");
    const auto r = run_cli({"simulate", "--reps", "10", "--seed", "1", "--threads", "1", "--out", dir.string()});
    CHECK(r.code == cli::kSuccess);
    CHECK(fs::exists(dir / "summary.tsv"));
    CHECK(fs::exists(dir / "summary.kv"));
    const auto kv = read_kv(dir / "summary.kv");
    CHECK(kv.at("seed") == "1");
    CHECK(kv.at("rng") == kRngAlgorithm);
    CHECK(kv.at("config_digest").size() == 16);
    const auto tsv = read_tsv(dir / "summary.tsv");
    REQUIRE(tsv.size() >= 2);
    CHECK(tsv[0][0] == "estimator");
}

TEST_CASE("simulate with reps = 0 is a config error") {
    const auto r = run_cli({"simulate", "--reps", "0", "--seed", "1"});
    CHECK(r.code == cli::kConfigOrData);
    CHECK(r.err.find("reps") != std::string::npos);
    cli::RunConfig cfg;
    cfg.command = "simulate";
    cfg.seed = 1;
    cfg.reps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config errors") {
    CHECK(run_cli({"simulate", "--reps", "3"}).code == cli::kConfigOrData);           // no seed
    CHECK(run_cli({"estimate", "--seed", "1"}).code == cli::kConfigOrData);           // no data
    CHECK(run_cli({"bogus", "--seed", "1"}).code == cli::kConfigOrData);
    CHECK(run_cli({"simulate", "--seed", "1", "--theta-mode", "x"}).code == cli::kConfigOrData);
    CHECK(run_cli({"simulate", "--seed", "1", "--theta0", "1,2"}).code == cli::kConfigOrData);
    CHECK(run_cli({"simulate", "--seed", "1", "--no-such-flag"}).code == cli::kConfigOrData);
    CHECK(run_cli({"estimate", "--data", "/nonexistent.csv", "--u-cols", "a", "--z-cols", "b"}).code ==
          cli::kConfigOrData);
}

TEST_CASE("identical simulate configs give byte-identical machine-readable outputs") {
    const auto a = scratch("det_a");
    const auto b = scratch("det_b");
    const std::vector<std::string> common{"simulate", "--reps", "6", "--n", "300", "--seed", "9"};
    auto args_a = common, args_b = common;
    args_a.insert(args_a.end(), {"--out", a.string(), "--threads", "1"});
    args_b.insert(args_b.end(), {"--out", b.string(), "--threads", "3"});
    REQUIRE(run_cli(args_a).code == cli::kSuccess);
    REQUIRE(run_cli(args_b).code == cli::kSuccess);
    CHECK(slurp(a / "summary.kv") == slurp(b / "summary.kv"));
    CHECK(slurp(a / "summary.tsv") == slurp(b / "summary.tsv"));
}

TEST_CASE("config file values apply and flags override them") {
    const auto dir = scratch("config");
    std::ofstream(dir / "run.cfg") << "# study\nreps = 0\nseed = 5\nn = 200\ntheta0 = 0.3,-0.3,-0.25\n";
    CHECK(run_cli({"simulate", "--config", (dir / "run.cfg").string()}).code == cli::kConfigOrData);
    const auto r = run_cli({"simulate", "--config", (dir / "run.cfg").string(), "--reps", "2", "--threads", "1",
                            "--out", dir.string()});
    CHECK(r.code == cli::kSuccess);
    const auto kv = read_kv(dir / "summary.kv");
    CHECK(kv.at("seed") == "5");
    CHECK(kv.at("n") == "200");
    CHECK(kv.at("reps") == "2");
}

TEST_CASE("digest ignores output location and threads but not results-relevant settings") {
    cli::RunConfig a;
    a.command = "simulate";
    a.seed = 3;
    cli::RunConfig b = a;
    b.out = "/elsewhere";
    b.threads = 7;
    CHECK(a.digest() == b.digest());
    b.reps = 501;
    CHECK(a.digest() != b.digest());
}

TEST_CASE("estimate on a simulated CSV lands within 2 SE of the known truth") {
    const auto dir = scratch("estimate");
    const auto csv = write_sim_csv(dir, 2000, 77);
    const auto r = run_cli({"estimate", "--data", csv.string(), "--u-cols", "x1", "--z-cols", "x2", "--out",
                            dir.string()});
    REQUIRE(r.code == cli::kSuccess);
    DgpSpec spec;
    const double truth = true_att_quadrature(spec);
    const auto rows = read_tsv(dir / "estimate.tsv");
    REQUIRE(rows.size() == 8);  // header, 3 theta, 4 delta
    CHECK(rows[0] == std::vector<std::string>{"stratum", "estimator", "Est", "se", "sd_p", "ci_lo", "ci_hi",
                                              "p-value"});
    bool seen = false;
    for (const auto& row : rows) {
        if (row[1] != "delta_eff") continue;
        seen = true;
        const double est = std::stod(row[2]);
        const double se = std::stod(row[3]);
        CHECK(se > 0.0);
        CHECK(std::abs(est - truth) < 2.0 * se);
        CHECK(row[4] == "NA");
    }
    CHECK(seen);
    const auto kv = read_kv(dir / "estimate.kv");
    CHECK(kv.at("status") == "ok");
    CHECK(kv.at("seed") == "NA");
}

TEST_CASE("stratifying on a constant column reproduces the unstratified run") {
    const auto a = scratch("strat_a");
    const auto b = scratch("strat_b");
    const auto csv = write_sim_csv(a, 600, 5);
    const std::vector<std::string> common{"estimate", "--data", csv.string(), "--u-cols", "x1", "--z-cols", "x2"};
    auto plain = common, strat = common;
    plain.insert(plain.end(), {"--out", a.string()});
    strat.insert(strat.end(), {"--out", b.string(), "--stratify-by", "site"});
    REQUIRE(run_cli(plain).code == cli::kSuccess);
    REQUIRE(run_cli(strat).code == cli::kSuccess);
    CHECK(slurp(a / "estimate.tsv") == slurp(b / "estimate.tsv"));
}

TEST_CASE("two strata give one block of rows each") {
    const auto dir = scratch("strat_two");
    const auto ds = testing::simulate(1200, 8);
    std::ostringstream csv;
    csv << "t,y,x1,x2,g\n";
    for (std::size_t i = 0; i < ds.n(); ++i)
        csv << ds[i].t << "," << ds[i].y << "," << ds[i].u[0] << "," << ds[i].z[0] << "," << (i % 2) << "\n";
    std::ofstream(dir / "two.csv") << csv.str();
    const auto r = run_cli({"estimate", "--data", (dir / "two.csv").string(), "--u-cols", "x1", "--z-cols", "x2",
                            "--stratify-by", "g", "--out", dir.string()});
    REQUIRE(r.code == cli::kSuccess);
    const auto rows = read_tsv(dir / "estimate.tsv");
    REQUIRE(rows.size() == 15);
    CHECK(rows[1][0] == "g=0");
    CHECK(rows[8][0] == "g=1");
}

TEST_CASE("a single treated row triggers warnings and the solver-failure exit") {
    const auto dir = scratch("single");
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::ostringstream csv;
    csv << "t,y,x1,x2\n";
    for (int i = 0; i < 60; ++i) csv << (i == 0 ? 1 : 0) << "," << (i % 3 == 0) << "," << nd(rng) << "," << nd(rng) << "\n";
    std::ofstream(dir / "one.csv") << csv.str();
    const auto r = run_cli({"estimate", "--data", (dir / "one.csv").string(), "--u-cols", "x1", "--z-cols", "x2",
                            "--nuisance", "knn", "--out", dir.string()});
    CHECK(r.out.find("warning") != std::string::npos);
    CHECK(r.out.find("treated arm has only 1 rows") != std::string::npos);
    CHECK(r.code == cli::kSolverFailure);
    CHECK(r.err.find("solver failure") != std::string::npos);
    REQUIRE(fs::exists(dir / "diagnostics.kv"));
    const auto kv = read_kv(dir / "diagnostics.kv");
    CHECK(kv.at("status") == "solver_failure");
    CHECK(kv.count("warning.0") == 1);

    // A logistic treated-arm fit cannot even start on one row.
    const auto lg = run_cli({"estimate", "--data", (dir / "one.csv").string(), "--u-cols", "x1", "--z-cols", "x2",
                             "--out", dir.string()});
    CHECK(lg.code == cli::kConfigOrData);
}

TEST_CASE("perturb with B = 2 gives a trace of length 2 with a defined sd") {
    const auto dir = scratch("b2");
    const auto csv = write_sim_csv(dir, 600, 11);
    const auto r = run_cli({"perturb", "--data", csv.string(), "--u-cols", "x1", "--z-cols", "x2", "--perturb",
                            "2", "--seed", "4", "--out", dir.string()});
    REQUIRE(r.code == cli::kSuccess);
    const auto trace = read_tsv(dir / "trace.tsv");
    REQUIRE(trace.size() == 3);
    CHECK(trace[0][0] == "b");
    CHECK(trace[1][1] == "NA");
    CHECK(std::stod(trace[2][1]) >= 0.0);
    const auto rows = read_tsv(dir / "perturb.tsv");
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][2] != "NA");
}

TEST_CASE("perturb: same seed gives an identical trace") {
    const auto a = scratch("pdet_a");
    const auto b = scratch("pdet_b");
    const auto csv = write_sim_csv(a, 400, 12);
    const std::vector<std::string> common{"perturb", "--data", csv.string(), "--u-cols", "x1", "--z-cols", "x2",
                                          "--perturb", "20", "--seed", "6"};
    auto x = common, y = common;
    x.insert(x.end(), {"--out", a.string(), "--threads", "1"});
    y.insert(y.end(), {"--out", b.string(), "--threads", "2"});
    REQUIRE(run_cli(x).code == cli::kSuccess);
    REQUIRE(run_cli(y).code == cli::kSuccess);
    CHECK(slurp(a / "trace.tsv") == slurp(b / "trace.tsv"));
    CHECK(slurp(a / "perturb.kv") == slurp(b / "perturb.kv"));
}

TEST_CASE("perturb trace stabilizes by B = 500") {
    const auto dir = scratch("b500");
    const auto csv = write_sim_csv(dir, 600, 13);
    const auto r = run_cli({"perturb", "--data", csv.string(), "--u-cols", "x1", "--z-cols", "x2", "--perturb",
                            "500", "--seed", "21", "--out", dir.string()});
    REQUIRE(r.code == cli::kSuccess);
    const auto trace = read_tsv(dir / "trace.tsv");
    REQUIRE(trace.size() == 501);
    std::size_t col = 0;
    for (std::size_t j = 0; j < trace[0].size(); ++j)
        if (trace[0][j] == "delta_eff") col = j;
    REQUIRE(col > 0);
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t b = 401; b <= 500; ++b) {
        const double v = std::stod(trace[b][col]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double final_sd = std::stod(trace[500][col]);
    CHECK(hi - lo < 0.10 * final_sd);
}

TEST_CASE("estimate with perturbation fills sd_p and uses it for the interval") {
    const auto dir = scratch("est_perturb");
    const auto csv = write_sim_csv(dir, 600, 14);
    const auto r = run_cli({"estimate", "--data", csv.string(), "--u-cols", "x1", "--z-cols", "x2", "--perturb",
                            "30", "--crossfit", "2", "--seed", "2", "--out", dir.string()});
    REQUIRE(r.code == cli::kSuccess);
    const auto rows = read_tsv(dir / "estimate.tsv");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double est = std::stod(rows[i][2]);
        const double sdp = std::stod(rows[i][4]);
        CHECK(std::stod(rows[i][5]) == doctest::Approx(est - 1.96 * sdp));
    }
}

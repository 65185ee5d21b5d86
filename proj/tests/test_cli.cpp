// test_cli.cpp -- CSV loading with column roles, pairs-bootstrap standard
// errors, per-group disparity contrasts, the estimator name registry, and
// end-to-end command runs of the tailreg executable entry point.
#include "tailreg/cli.hpp"

#include "tailreg/competitors.hpp"
#include "tailreg/dgp.hpp"
#include "tailreg/rng.hpp"
#include "tailreg/tail.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

using namespace tailreg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    const fs::path dir =
        fs::temp_directory_path() /
        ("tailreg_cli_test_" + std::to_string(::getpid()) + "_" +
         std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

std::string write_file(const fs::path& dir, const std::string& name,
                       const std::string& content) {
    const fs::path p = dir / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    out.close();
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int call_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"tailreg"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

// Noiseless linear dataset: y = 2 + 3 x, x on a grid.
Dataset linear_fixture(Eigen::Index n) {
    Dataset ds;
    ds.X.resize(n, 2);
    ds.X.col(0).setOnes();
    for (Eigen::Index i = 0; i < n; ++i)
        ds.X(i, 1) = static_cast<double>(i) / static_cast<double>(n - 1);
    ds.y = 2.0 + 3.0 * ds.X.col(1).array();
    ds.kinds = {ColumnKind::continuous};
    ds.names = {"x"};
    return ds;
}

} // namespace

TEST_CASE("csv loading: roles, encoding, and drop policy") {
    const fs::path dir = temp_dir();

    SECTION("numeric covariate produces intercept plus one column") {
        const std::string path = write_file(dir, "plain.csv",
                                            "y,x\n1.5,2\n2.5,3\n3.5,4\n");
        CsvRoles roles;
        roles.response = "y";
        roles.covariates = {{"x", false, ""}};
        const CsvLoad load = load_csv(path, roles);
        REQUIRE(load.data.n() == 3);
        REQUIRE(load.data.X.cols() == 2);
        REQUIRE(load.rows_read == 3);
        REQUIRE(load.rows_dropped == 0);
        REQUIRE(load.data.X.col(0).isOnes());
        REQUIRE(load.data.X(1, 1) == 3.0);
        REQUIRE(load.data.y(2) == 3.5);
        REQUIRE(load.data.kinds[0] == ColumnKind::continuous);
    }

    SECTION("categorical column one-hot encodes against the declared baseline") {
        const std::string path = write_file(
            dir, "cat.csv", "y,g\n1,a\n2,b\n3,c\n4,b\n5,a\n");
        CsvRoles roles;
        roles.response = "y";
        roles.covariates = {{"g", true, "a"}};
        const CsvLoad load = load_csv(path, roles);
        REQUIRE(load.data.X.cols() == 3); // intercept + indicators for b, c
        REQUIRE(load.data.names == std::vector<std::string>{"g=b", "g=c"});
        REQUIRE(load.data.kinds ==
                std::vector<ColumnKind>{ColumnKind::discrete, ColumnKind::discrete});
        // Row 0 (level a, the baseline): both indicators zero.
        REQUIRE(load.data.X(0, 1) == 0.0);
        REQUIRE(load.data.X(0, 2) == 0.0);
        // Row 1 (level b) and row 2 (level c).
        REQUIRE(load.data.X(1, 1) == 1.0);
        REQUIRE(load.data.X(1, 2) == 0.0);
        REQUIRE(load.data.X(2, 1) == 0.0);
        REQUIRE(load.data.X(2, 2) == 1.0);

        roles.covariates[0].baseline = "zebra";
        REQUIRE_THROWS_WITH(load_csv(path, roles),
                            Catch::Matchers::ContainsSubstring("zebra"));
    }

    SECTION("malformed rows are dropped and counted, or rejected under fail-fast") {
        const std::string path = write_file(
            dir, "bad.csv", "y,x\n1,2\nnot_a_number,3\n3,4\n");
        CsvRoles roles;
        roles.response = "y";
        roles.covariates = {{"x", false, ""}};
        const CsvLoad load = load_csv(path, roles);
        REQUIRE(load.rows_read == 3);
        REQUIRE(load.rows_dropped == 1);
        REQUIRE(load.data.n() == 2);

        roles.fail_fast = true;
        REQUIRE_THROWS_WITH(load_csv(path, roles),
                            Catch::Matchers::ContainsSubstring("row 2") &&
                                Catch::Matchers::ContainsSubstring("'y'"));
    }

    SECTION("quoted fields, embedded commas, and CRLF survive parsing") {
        const std::string path = write_file(
            dir, "quoted.csv",
            "y,\"label\",x\r\n1,\"a,with comma\",2\r\n2,\"say \"\"hi\"\"\",3\r\n");
        CsvRoles roles;
        roles.response = "y";
        roles.covariates = {{"x", false, ""}};
        roles.group = "label";
        const CsvLoad load = load_csv(path, roles);
        REQUIRE(load.data.n() == 2);
        REQUIRE(load.group_labels[0] == "a,with comma");
        REQUIRE(load.group_labels[1] == "say \"hi\"");
    }

    SECTION("missing columns are reported by name") {
        const std::string path = write_file(dir, "missing.csv", "y,x\n1,2\n");
        CsvRoles roles;
        roles.response = "response";
        roles.covariates = {{"x", false, ""}};
        REQUIRE_THROWS_WITH(load_csv(path, roles),
                            Catch::Matchers::ContainsSubstring("response"));
        REQUIRE_THROWS_AS(load_csv((dir / "nope.csv").string(), roles),
                          std::runtime_error);
    }
}

TEST_CASE("pairs bootstrap: determinism, degeneracy, and self-consistency") {
    const auto ts_fit = [](const Dataset& ds) {
        return fit_two_step(ds, 0.8).beta;
    };

    SECTION("identical rows give zero standard errors") {
        Dataset flat;
        flat.X = MatrixXd::Ones(40, 1); // intercept-only design
        flat.y = VectorXd::Constant(40, 7.0);
        // Fit the response mean: every resample sees the same rows.
        const auto mean_fit = [](const Dataset& ds) {
            VectorXd out(1);
            out(0) = ds.y.mean();
            return out;
        };
        const BootstrapResult bs = bootstrap_se(flat, mean_fit, 50, 1);
        REQUIRE(bs.effective_B == 50);
        REQUIRE(bs.se(0) == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("seeded determinism across thread counts") {
        const Dataset ds = sample_dgp(DgpSpec::het_uniform(), 400, 88);
        const BootstrapResult a = bootstrap_se(ds, ts_fit, 60, 909, 1);
        const BootstrapResult b = bootstrap_se(ds, ts_fit, 60, 909, 4);
        REQUIRE(a.effective_B == b.effective_B);
        REQUIRE((a.se.array() == b.se.array()).all());
        const BootstrapResult c = bootstrap_se(ds, ts_fit, 60, 910, 2);
        REQUIRE((a.se.array() != c.se.array()).any());
    }

    SECTION("two half-size runs agree within bootstrap jitter") {
        const Dataset ds = sample_dgp(DgpSpec::het_uniform(), 800, 14);
        const BootstrapResult a = bootstrap_se(ds, ts_fit, 500, 1, 0);
        const BootstrapResult b = bootstrap_se(ds, ts_fit, 500, 2, 0);
        for (Eigen::Index j = 0; j < a.se.size(); ++j)
            REQUIRE(a.se(j) == Catch::Approx(b.se(j)).epsilon(0.15));
    }

    SECTION("failed resamples are excluded and reported") {
        const Dataset ds = sample_dgp(DgpSpec::het_uniform(), 120, 5);
        int calls = 0;
        const auto flaky = [&](const Dataset& d) {
            if (++calls % 3 == 0) throw std::runtime_error("synthetic");
            return VectorXd::Constant(d.X.cols(), d.y.mean()).eval();
        };
        const BootstrapResult bs = bootstrap_se(ds, flaky, 30, 3, 1);
        REQUIRE(bs.failures == 10);
        REQUIRE(bs.effective_B == 20);
        REQUIRE(bs.se.allFinite());
    }

    SECTION("error contract") {
        const Dataset ds = sample_dgp(DgpSpec::het_uniform(), 50, 5);
        REQUIRE_THROWS_AS(bootstrap_se(ds, ts_fit, 19, 1), std::invalid_argument);
        const auto always_fail = [](const Dataset&) -> VectorXd {
            throw std::runtime_error("nope");
        };
        REQUIRE_THROWS_AS(bootstrap_se(ds, always_fail, 20, 1), std::runtime_error);
    }
}

TEST_CASE("group disparity: contrasts, lower tail, and error contract") {
    const auto ts = [](const Dataset& ds, double tau) {
        return fit_two_step(ds, tau).beta;
    };

    SECTION("two identical groups contrast to exactly zero") {
        const Dataset base = sample_dgp(DgpSpec::het_uniform(), 300, 21);
        Dataset doubled;
        doubled.kinds = base.kinds;
        doubled.names = base.names;
        doubled.X.resize(600, base.X.cols());
        doubled.y.resize(600);
        doubled.X << base.X, base.X;
        doubled.y << base.y, base.y;
        std::vector<std::string> labels(600);
        for (int i = 0; i < 300; ++i) labels[static_cast<std::size_t>(i)] = "left";
        for (int i = 300; i < 600; ++i) labels[static_cast<std::size_t>(i)] = "right";
        const DisparityResult res =
            fit_disparity(doubled, labels, 0.8, ts, "left", 0, 1);
        REQUIRE(res.groups.size() == 1);
        REQUIRE(res.contrast.row(0).cwiseAbs().maxCoeff() == 0.0);
    }

    SECTION("known per-group coefficient difference is recovered") {
        // Group A: y = 1 + 2 x + eps-tail; group B shifts both coefficients.
        Rng rng(777);
        const Eigen::Index half = 4000;
        Dataset ds;
        ds.X.resize(2 * half, 2);
        ds.X.col(0).setOnes();
        ds.y.resize(2 * half);
        ds.kinds = {ColumnKind::continuous};
        std::vector<std::string> labels(static_cast<std::size_t>(2 * half));
        for (Eigen::Index i = 0; i < 2 * half; ++i) {
            const bool second = i >= half;
            const double x = 2.0 * rng.uniform01();
            const double noise = rng.exponential(); // tail mean q + 1
            ds.X(i, 1) = x;
            ds.y(i) = (second ? 3.0 : 1.0) + (second ? 5.0 : 2.0) * x + noise;
            labels[static_cast<std::size_t>(i)] = second ? "B" : "A";
        }
        const double tau = 0.8;
        const DisparityResult res = fit_disparity(ds, labels, tau, ts, "A", 40, 99);
        REQUIRE(res.groups.size() == 1);
        REQUIRE(res.groups[0].group == "B");
        // Additive noise cancels in the contrast: expect (2, 3).
        REQUIRE(res.contrast(0, 0) == Catch::Approx(2.0).margin(0.35));
        REQUIRE(res.contrast(0, 1) == Catch::Approx(3.0).margin(0.35));
        REQUIRE(res.contrast_se.row(0).minCoeff() > 0.0);
        REQUIRE(res.baseline.effective_B == 40);
    }

    SECTION("lower-tail fits equal the negated upper-tail fits of -Y") {
        const Dataset ds = sample_dgp(DgpSpec::het_uniform(), 500, 33);
        std::vector<std::string> labels(500);
        for (int i = 0; i < 500; ++i)
            labels[static_cast<std::size_t>(i)] = i % 2 ? "odd" : "even";
        const DisparityResult lower =
            fit_disparity(ds, labels, 0.1, ts, "even", 0, 5, /*lower_tail=*/true);
        Dataset neg = ds;
        neg.y = -ds.y;
        const DisparityResult upper =
            fit_disparity(neg, labels, 0.9, ts, "even", 0, 5, /*lower_tail=*/false);
        REQUIRE((lower.baseline.beta + upper.baseline.beta).cwiseAbs().maxCoeff() <=
                1e-12);
        REQUIRE((lower.groups[0].beta + upper.groups[0].beta).cwiseAbs().maxCoeff() <=
                1e-12);

        // One-sample identity: the lower-tau tail mean of Y is the negated
        // upper-(1-tau) tail mean of -Y. The upper tail includes its threshold
        // order statistic, so the mirrored set is the n - k + 1 smallest values
        // (k the type-1 quantile rank of -Y; values are continuous, no ties).
        std::vector<double> v(ds.y.data(), ds.y.data() + ds.y.size());
        std::vector<double> nv(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) nv[i] = -v[i];
        const double lower_es = -empirical_es(nv, 0.9);
        std::sort(v.begin(), v.end());
        const std::size_t k = static_cast<std::size_t>(
            std::ceil(0.9 * static_cast<double>(v.size()) - 1e-9));
        const std::size_t count = v.size() - k + 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < count; ++i) acc += v[i];
        REQUIRE(lower_es ==
                Catch::Approx(acc / static_cast<double>(count)).margin(1e-10));
    }

    SECTION("small groups and bad baselines are rejected by name") {
        const Dataset ds = sample_dgp(DgpSpec::het_uniform(), 100, 3);
        std::vector<std::string> labels(100, "big");
        labels[0] = "tiny";
        labels[1] = "tiny";
        REQUIRE_THROWS_WITH(fit_disparity(ds, labels, 0.8, ts, "big", 0, 1),
                            Catch::Matchers::ContainsSubstring("tiny"));
        REQUIRE_THROWS_WITH(fit_disparity(ds, labels, 0.8, ts, "nope", 0, 1),
                            Catch::Matchers::ContainsSubstring("nope"));
        const std::vector<std::string> one(100, "big");
        REQUIRE_THROWS_AS(fit_disparity(ds, one, 0.8, ts, "big", 0, 1),
                          std::invalid_argument);
        REQUIRE_THROWS_AS(fit_disparity(ds, labels, 0.8, ts, "big", 5, 1),
                          std::invalid_argument); // 0 < B < 20
    }
}

TEST_CASE("estimator registry resolves names and dispatches on design type") {
    EsqrConfig base;
    base.delta = 0.5;

    for (const std::string& name : known_estimators())
        REQUIRE(make_estimator(name, base).fit != nullptr);
    REQUIRE_THROWS_WITH(make_estimator("mystery", base),
                        Catch::Matchers::ContainsSubstring("mystery") &&
                            Catch::Matchers::ContainsSubstring("esqr"));

    // Discrete design: the automatic name must match the discrete variant.
    const Dataset disc = sample_dgp(DgpSpec::discrete_het(), 2000, 11);
    EsqrConfig disc_cfg = base;
    disc_cfg.tau = 0.9;
    const VectorXd via_auto = make_estimator("esqr", base).fit(disc, 0.9).beta;
    const VectorXd direct = fit_esqr_discrete(disc, disc_cfg).beta;
    REQUIRE((via_auto.array() == direct.array()).all());

    // Continuous design: the automatic name must match the binned variant.
    const Dataset cont = sample_dgp(DgpSpec::counterexample(), 1500, 12);
    EsqrConfig cont_cfg = base;
    cont_cfg.tau = 0.5;
    const VectorXd via_auto2 = make_estimator("esqr", base).fit(cont, 0.5).beta;
    const VectorXd direct2 = fit_esqr_binned(cont, cont_cfg).beta;
    REQUIRE((via_auto2.array() == direct2.array()).all());
}

TEST_CASE("command runs: fit, simulate, counterexample, avar") {
    const fs::path dir = temp_dir();
    const std::string prefix = (dir / "run").string();

    SECTION("fit on a noiseless linear file recovers the plane exactly") {
        const Dataset fx = linear_fixture(60);
        std::string csv = "y,x\n";
        for (Eigen::Index i = 0; i < fx.n(); ++i) {
            char buf[80];
            std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", fx.y(i), fx.X(i, 1));
            csv += buf;
        }
        const std::string path = write_file(dir, "noiseless.csv", csv);
        REQUIRE(call_cli({"fit", "--input", path, "--response", "y", "--covariates",
                          "x", "--tau", "0.8", "--estimators", "ts,esqr",
                          "--output", prefix}) == 0);
        const std::string tsv = slurp(prefix + ".fit.tsv");
        // Both estimators, two coefficients each.
        REQUIRE(std::count(tsv.begin(), tsv.end(), '\n') == 5);
        std::istringstream lines(tsv);
        std::string line;
        std::getline(lines, line); // header
        int checked = 0;
        while (std::getline(lines, line)) {
            std::istringstream cells(line);
            std::string method, coef, estimate;
            std::getline(cells, method, '\t');
            std::getline(cells, coef, '\t');
            std::getline(cells, estimate, '\t');
            const double value = std::stod(estimate);
            if (coef == "intercept")
                REQUIRE(value == Catch::Approx(2.0).margin(1e-6));
            else
                REQUIRE(value == Catch::Approx(3.0).margin(1e-6));
            ++checked;
        }
        REQUIRE(checked == 4);
        // Manifest carries the schema version and the parameters to rerun.
        const std::string manifest = slurp(prefix + ".manifest.json");
        REQUIRE(manifest.find("\"schema_version\": 1") != std::string::npos);
        REQUIRE(manifest.find("\"command\": \"fit\"") != std::string::npos);
        REQUIRE(manifest.find("noiseless.csv") != std::string::npos);
    }

    SECTION("fit exit code reflects estimator failures") {
        // esqr-discrete rejects a continuous design; ts succeeds -> exit 1.
        const Dataset fx = linear_fixture(50);
        std::string csv = "y,x\n";
        for (Eigen::Index i = 0; i < fx.n(); ++i) {
            char buf[80];
            std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", fx.y(i), fx.X(i, 1));
            csv += buf;
        }
        const std::string path = write_file(dir, "mixed.csv", csv);
        REQUIRE(call_cli({"fit", "--input", path, "--response", "y", "--covariates",
                          "x", "--tau", "0.8", "--estimators", "esqr-discrete,ts",
                          "--output", prefix}) == 1);
        const std::string tsv = slurp(prefix + ".fit.tsv");
        REQUIRE(tsv.find("ts\t") != std::string::npos);
        REQUIRE(tsv.find("esqr-discrete") == std::string::npos);
    }

    SECTION("simulate is deterministic and writes the ratio table") {
        const std::vector<std::string> args = {
            "simulate", "--dgp", "discrete-het", "--n", "600", "--reps", "10",
            "--tau", "0.9", "--estimators", "ts,esqr", "--seed", "2468",
            "--output", prefix};
        REQUIRE(call_cli(args) == 0);
        const std::string first = slurp(prefix + ".mc.tsv");
        REQUIRE(call_cli(args) == 0);
        REQUIRE(first == slurp(prefix + ".mc.tsv"));
        REQUIRE(first.find("estimator\tcoefficient") != std::string::npos);
        REQUIRE(first.find("esqr") != std::string::npos);
        REQUIRE(call_cli({"simulate", "--dgp", "no-such-model", "--output", prefix}) ==
                2);
    }

    SECTION("counterexample reports the superquantile/tail-slope split") {
        REQUIRE(call_cli({"counterexample", "--reps", "5", "--sample-n", "300",
                          "--fit-n", "4000", "--seed", "7", "--output", prefix}) == 0);
        const std::string tsv = slurp(prefix + ".counterexample.tsv");
        REQUIRE(tsv.find("population_superquantile_slope\t0.7041") !=
                std::string::npos);
        REQUIRE(tsv.find("true_tail_slope\t0.5") != std::string::npos);
    }

    SECTION("avar writes sandwich and efficiency tables") {
        REQUIRE(call_cli({"avar", "--dgp", "discrete-het", "--tau", "0.9",
                          "--output", prefix}) == 0);
        const std::string avar_tsv = slurp(prefix + ".avar.tsv");
        const std::string are_tsv = slurp(prefix + ".are.tsv");
        REQUIRE(avar_tsv.find("optimal") != std::string::npos);
        REQUIRE(are_tsv.find("frobenius") != std::string::npos);
        REQUIRE(are_tsv.find("determinant") != std::string::npos);
        // Self-efficiency is exactly 1.
        REQUIRE(are_tsv.find("esqr\tesqr\tfrobenius\t1\n") != std::string::npos);
    }

    SECTION("usage errors exit nonzero") {
        REQUIRE(call_cli({"explode"}) != 0);
        REQUIRE(call_cli({}) != 0);
    }
}

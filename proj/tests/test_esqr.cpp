// test_esqr.cpp -- the stacked expected-shortfall quantile-regression
// estimators: exact linear-monotone recovery, the discrete and binned
// variants, plug-in optimal weights, and equivariance properties.
#include "tailreg/esqr.hpp"
#include "tailreg/mathutil.hpp"
#include "tailreg/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace tailreg;

namespace {

Dataset make_dataset(const MatrixXd& covariates, const VectorXd& y,
                     const std::vector<ColumnKind>& kinds) {
    Dataset d;
    d.X.resize(covariates.rows(), covariates.cols() + 1);
    d.X.col(0).setOnes();
    if (covariates.cols() > 0) d.X.rightCols(covariates.cols()) = covariates;
    d.y = y;
    d.kinds = kinds;
    return d;
}

// Heteroscedastic two-covariate model: y = (1 + 2 x1 + 3 x2)(1 + u),
// x1 ~ U(0,4) continuous, x2 ~ Bernoulli(1/2), u ~ U(0,1).
// True ES coefficients at level t: (1 + (1+t)/2) * (1, 2, 3).
Dataset sample_het_model(Eigen::Index n, uint64_t seed) {
    Rng rng(seed);
    MatrixXd C(n, 2);
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        C(i, 0) = 4.0 * rng.uniform01();
        C(i, 1) = static_cast<double>(rng.uniform_below(2));
        y(i) = (1.0 + 2.0 * C(i, 0) + 3.0 * C(i, 1)) * (1.0 + rng.uniform01());
    }
    return make_dataset(C, y, {ColumnKind::continuous, ColumnKind::discrete});
}

// Discrete-design model with exponential tail heterogeneity:
// y = 1 + e + (2 + 2u) x1 + (3 + 30 e) x2, x1, x2 ~ Binomial(2, 1/2).
// True ES coefficients at t: (1+(q+1), 2+(1+t), 3+30(q+1)), q = -log(1-t).
Dataset sample_discrete_model(Eigen::Index n, uint64_t seed) {
    Rng rng(seed);
    MatrixXd C(n, 2);
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        C(i, 0) = static_cast<double>(rng.uniform_below(2) + rng.uniform_below(2));
        C(i, 1) = static_cast<double>(rng.uniform_below(2) + rng.uniform_below(2));
        const double u = rng.uniform01();
        const double e = -std::log(1.0 - u); // comonotone exponential driver
        y(i) = 1.0 + e + (2.0 + 2.0 * u) * C(i, 0) + (3.0 + 30.0 * e) * C(i, 1);
    }
    return make_dataset(C, y, {ColumnKind::discrete, ColumnKind::discrete});
}

} // namespace

TEST_CASE("solve_stacked recovers the coefficients of a linear monotone table") {
    // Table values v(m, j) = x_m' xi + (s_j - s_{j*}) with j* the 1-based
    // ceil(tau (J+1)) level: every bin has the same ordered residual pattern,
    // whose tau-quantile sits exactly at the zero residual, so xi is the
    // unique stacked minimizer for ANY positive bin weights.
    const double tau = 0.9;
    const auto grid = make_quantile_grid(tau, 2000, 0.5, Eigen::Index{40});
    const Eigen::Index L = grid.size(); // 41; tau*(J+1) = 36.9, not integral
    const Eigen::Index jstar =
        static_cast<Eigen::Index>(std::ceil(tau * static_cast<double>(L))) - 1;

    Rng rng(2024);
    const Eigen::Index M = 7;
    MatrixXd reps(M, 3);
    for (Eigen::Index m = 0; m < M; ++m) {
        reps(m, 0) = 1.0;
        reps(m, 1) = rng.normal();
        reps(m, 2) = rng.uniform01() * 3.0;
    }
    VectorXd xi(3);
    xi << 0.7, -1.3, 2.1;
    MatrixXd values(M, L);
    for (Eigen::Index m = 0; m < M; ++m)
        for (Eigen::Index j = 0; j < L; ++j)
            values(m, j) = reps.row(m).dot(xi) + (grid.level(j) - grid.level(jstar));

    SECTION("uniform weights") {
        const auto sol = solve_stacked(values, reps, VectorXd::Ones(M), tau);
        REQUIRE((sol.beta - xi).lpNorm<Eigen::Infinity>() < 1e-6);
    }
    SECTION("arbitrary positive weights") {
        VectorXd w(M);
        for (Eigen::Index m = 0; m < M; ++m) w(m) = 0.1 + 3.0 * rng.uniform01();
        const auto sol = solve_stacked(values, reps, w, tau);
        REQUIRE((sol.beta - xi).lpNorm<Eigen::Infinity>() < 1e-6);
    }
    SECTION("weight validation") {
        REQUIRE_THROWS_AS(solve_stacked(values, reps, VectorXd::Zero(M), tau),
                          std::invalid_argument);
        VectorXd w = VectorXd::Ones(M);
        w(2) = -1.0;
        REQUIRE_THROWS_AS(solve_stacked(values, reps, w, tau), std::invalid_argument);
        REQUIRE_THROWS_AS(solve_stacked(values, reps, VectorXd::Ones(M + 1), tau),
                          std::invalid_argument);
    }
}

TEST_CASE("solve_stacked with one bin returns the row's tau-quantile") {
    const double tau = 0.9;
    const auto grid = make_quantile_grid(tau, 2000, 0.5, Eigen::Index{40});
    Rng rng(5);
    MatrixXd values(1, grid.size());
    std::vector<double> vals;
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
        values(0, j) = rng.normal();
        vals.push_back(values(0, j));
    }
    MatrixXd reps = MatrixXd::Ones(1, 1);
    const auto sol = solve_stacked(values, reps, VectorXd::Ones(1), tau);
    REQUIRE(sol.beta(0) == Catch::Approx(empirical_quantile(vals, tau)).margin(1e-7));
}

TEST_CASE("fit_esqr_discrete: degenerate and exact cases") {
    SECTION("intercept-only constant responses") {
        MatrixXd C(40, 0);
        const VectorXd y = VectorXd::Constant(40, -3.75);
        const auto data = make_dataset(C, y, {});
        const auto fit = fit_esqr_discrete(data, EsqrConfig{});
        REQUIRE(fit.beta.size() == 1);
        REQUIRE(fit.beta(0) == Catch::Approx(-3.75).margin(1e-9));
        REQUIRE(fit.bins_used == 1);
    }
    SECTION("noiseless linear discrete design recovers beta to 1e-8") {
        Rng rng(11);
        const Eigen::Index n = 120;
        MatrixXd C(n, 2);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = static_cast<double>(rng.uniform_below(3));
            C(i, 1) = static_cast<double>(rng.uniform_below(2));
            y(i) = 1.0 + 2.0 * C(i, 0) - C(i, 1);
        }
        const auto data =
            make_dataset(C, y, {ColumnKind::discrete, ColumnKind::discrete});
        const auto fit = fit_esqr_discrete(data, EsqrConfig{});
        VectorXd truth(3);
        truth << 1.0, 2.0, -1.0;
        REQUIRE((fit.beta - truth).lpNorm<Eigen::Infinity>() < 1e-8);
        REQUIRE(fit.bins_used == 6);
    }
    SECTION("singleton covariate value is rejected") {
        MatrixXd C(5, 1);
        C << 0, 0, 1, 1, 2; // value 2 appears once
        VectorXd y(5);
        y << 1, 2, 3, 4, 5;
        const auto data = make_dataset(C, y, {ColumnKind::discrete});
        REQUIRE_THROWS_WITH(fit_esqr_discrete(data, EsqrConfig{}),
                            Catch::Matchers::ContainsSubstring("appears only once"));
    }
    SECTION("rank-deficient distinct-value design is rejected") {
        MatrixXd C(6, 2);
        C << 0, 0, 0, 0, 1, 2, 1, 2, 2, 4, 2, 4; // second column = 2 * first
        VectorXd y(6);
        y << 1, 2, 3, 4, 5, 6;
        const auto data =
            make_dataset(C, y, {ColumnKind::discrete, ColumnKind::discrete});
        REQUIRE_THROWS_WITH(fit_esqr_discrete(data, EsqrConfig{}),
                            Catch::Matchers::ContainsSubstring("rank deficient"));
    }
}

TEST_CASE("fit_esqr_discrete on the exponential-tail discrete model") {
    const auto data = sample_discrete_model(4000, 909);
    EsqrConfig cfg;
    cfg.tau = 0.9;
    const auto fit = fit_esqr_discrete(data, cfg);
    const double q = -std::log(0.1);
    VectorXd truth(3);
    truth << 1.0 + (q + 1.0), 2.0 + 1.9, 3.0 + 30.0 * (q + 1.0);
    // Stochastic sanity band, ~4 Monte Carlo standard errors wide
    // (sd(beta2) is about 3.2 at this sample size).
    REQUIRE(fit.beta(0) == Catch::Approx(truth(0)).margin(2.0));
    REQUIRE(fit.beta(1) == Catch::Approx(truth(1)).margin(1.5));
    REQUIRE(fit.beta(2) == Catch::Approx(truth(2)).margin(13.0));

    // The level-normalized convention also runs and gives a finite answer.
    EsqrConfig cfg2 = cfg;
    cfg2.es_convention = EsConvention::level_normalized;
    const auto fit2 = fit_esqr_discrete(data, cfg2);
    REQUIRE(fit2.beta.allFinite());
    REQUIRE(fit2.beta(2) == Catch::Approx(truth(2)).margin(15.0));
}

TEST_CASE("fit_esqr_discrete equivariance") {
    const auto data = sample_discrete_model(600, 77);
    EsqrConfig cfg;
    cfg.tau = 0.85;
    const auto base = fit_esqr_discrete(data, cfg);

    Dataset scaled = data;
    scaled.y *= 2.5;
    const auto s = fit_esqr_discrete(scaled, cfg);
    REQUIRE((s.beta - 2.5 * base.beta).lpNorm<Eigen::Infinity>() < 1e-5);

    VectorXd a(3);
    a << -1.0, 0.5, 2.0;
    Dataset shifted = data;
    shifted.y += shifted.X * a;
    const auto sh = fit_esqr_discrete(shifted, cfg);
    REQUIRE((sh.beta - (base.beta + a)).lpNorm<Eigen::Infinity>() < 1e-5);
}

TEST_CASE("fit_esqr_binned: noiseless exactness and weight handling") {
    Rng rng(321);
    const Eigen::Index n = 500;
    MatrixXd C(n, 2);
    VectorXd y(n);
    VectorXd beta(3);
    beta << 2.0, -1.5, 4.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        C(i, 0) = 3.0 * rng.uniform01();
        C(i, 1) = static_cast<double>(rng.uniform_below(2));
        y(i) = beta(0) + beta(1) * C(i, 0) + beta(2) * C(i, 1);
    }
    const auto data =
        make_dataset(C, y, {ColumnKind::continuous, ColumnKind::discrete});
    EsqrConfig cfg;
    cfg.tau = 0.9;
    cfg.grid_J = 60;

    const auto fit = fit_esqr_binned(data, cfg);
    REQUIRE((fit.beta - beta).lpNorm<Eigen::Infinity>() < 1e-8);

    SECTION("omega identically 1 is bitwise equal to the unweighted fit") {
        EsqrConfig cfg1 = cfg;
        cfg1.extra_weights = VectorXd::Ones(fit.bins_used);
        const auto fit1 = fit_esqr_binned(data, cfg1);
        REQUIRE(fit1.beta == fit.beta); // exact bitwise equality
        REQUIRE(fit1.objective == fit.objective);
    }
    SECTION("common weight rescaling leaves the fit unchanged") {
        EsqrConfig cfgc = cfg;
        cfgc.extra_weights = VectorXd::Constant(fit.bins_used, 37.5);
        const auto fitc = fit_esqr_binned(data, cfgc);
        REQUIRE((fitc.beta - fit.beta).lpNorm<Eigen::Infinity>() < 1e-8);
    }
    SECTION("all-zero weights raise a descriptive error") {
        EsqrConfig cfg0 = cfg;
        cfg0.extra_weights = VectorXd::Zero(fit.bins_used);
        REQUIRE_THROWS_WITH(fit_esqr_binned(data, cfg0),
                            Catch::Matchers::ContainsSubstring("every bin weight"));
    }
    SECTION("weight-count mismatch raises") {
        EsqrConfig cfgm = cfg;
        cfgm.extra_weights = VectorXd::Ones(3);
        REQUIRE_THROWS_AS(fit_esqr_binned(data, cfgm), std::invalid_argument);
    }
    SECTION("config validation") {
        EsqrConfig bad = cfg;
        bad.delta = 0.0;
        REQUIRE_THROWS_AS(fit_esqr_binned(data, bad), std::invalid_argument);
        bad.delta = 1.5;
        REQUIRE_THROWS_AS(fit_esqr_binned(data, bad), std::invalid_argument);
        bad = cfg;
        bad.tau = 1.0;
        REQUIRE_THROWS_AS(fit_esqr_binned(data, bad), std::invalid_argument);
    }
}

TEST_CASE("fit_esqr_binned on the heteroscedastic model") {
    const auto data = sample_het_model(5000, 4242);
    EsqrConfig cfg;
    cfg.tau = 0.8;
    const auto fit = fit_esqr_binned(data, cfg);
    // True coefficients 1.9 * (1, 2, 3).
    REQUIRE(fit.beta(0) == Catch::Approx(1.9).margin(0.45));
    REQUIRE(fit.beta(1) == Catch::Approx(3.8).margin(0.25));
    REQUIRE(fit.beta(2) == Catch::Approx(5.7).margin(0.5));
    REQUIRE(fit.grid_points == make_quantile_grid(0.8, 5000).size());
}

TEST_CASE("fit_esqr_binned equivariance under response scaling and shifts") {
    const auto data = sample_het_model(1200, 31);
    EsqrConfig cfg;
    cfg.tau = 0.8;
    cfg.grid_J = 120;
    const auto base = fit_esqr_binned(data, cfg);

    Dataset scaled = data;
    scaled.y *= 4.0;
    const auto s = fit_esqr_binned(scaled, cfg);
    REQUIRE((s.beta - 4.0 * base.beta).lpNorm<Eigen::Infinity>() < 2e-5);

    VectorXd a(3);
    a << 2.0, -1.0, 0.5;
    Dataset shifted = data;
    shifted.y += shifted.X * a;
    const auto sh = fit_esqr_binned(shifted, cfg);
    REQUIRE((sh.beta - (base.beta + a)).lpNorm<Eigen::Infinity>() < 2e-5);
}

TEST_CASE("fit_esqr_binned drops single-member bins with a warning") {
    Rng rng(7);
    const Eigen::Index n = 45;
    MatrixXd C(n, 1);
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        C(i, 0) = rng.normal();
        y(i) = 1.0 + C(i, 0) + 0.1 * rng.normal();
    }
    const auto data = make_dataset(C, y, {ColumnKind::continuous});
    EsqrConfig cfg;
    cfg.tau = 0.7;
    cfg.grid_J = 40;
    cfg.slices_override = 30; // more slices than n/2, so some bins hold one point
    const auto art = build_esqr_artifacts(data, cfg);
    Eigen::Index singles = 0;
    for (const auto c : art.partition.counts)
        if (c < 2) ++singles;
    REQUIRE(singles > 0); // the fixture indeed produced sparse bins
    const auto fit = fit_esqr_binned(data, cfg);
    bool warned = false;
    for (const auto& w : fit.warnings)
        if (w.find("dropped") != std::string::npos) warned = true;
    REQUIRE(warned);
    REQUIRE(fit.beta.allFinite());
}

TEST_CASE("counterexample model: the stacked estimator finds the true slope") {
    // y = 1 + x * e with x ~ Gamma(2,1), e ~ U(-1,1): true ES coefficients at
    // tau = 0.5 are (1, 0.5); the naive superquantile objective would give
    // a slope near 0.704 instead (checked in the simulation module).
    Rng rng(20240816);
    const Eigen::Index n = 10000;
    MatrixXd C(n, 1);
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        C(i, 0) = rng.gamma2();
        y(i) = 1.0 + C(i, 0) * (2.0 * rng.uniform01() - 1.0);
    }
    const auto data = make_dataset(C, y, {ColumnKind::continuous});
    EsqrConfig cfg;
    cfg.tau = 0.5;
    cfg.grid_J = 300;
    const auto fit = fit_esqr_binned(data, cfg);
    REQUIRE(fit.beta(1) == Catch::Approx(0.5).margin(0.05));
    REQUIRE(fit.beta(0) == Catch::Approx(1.0).margin(0.1));
}

TEST_CASE("plugin weights: spread over variance, floored when degenerate") {
    SECTION("noiseless data floors every weight and matches the binned fit") {
        Rng rng(88);
        const Eigen::Index n = 300;
        MatrixXd C(n, 1);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = rng.uniform01();
            y(i) = 2.0 + 3.0 * C(i, 0);
        }
        const auto data = make_dataset(C, y, {ColumnKind::continuous});
        EsqrConfig cfg;
        cfg.tau = 0.8;
        cfg.grid_J = 40;
        const auto art = build_esqr_artifacts(data, cfg, true);
        const auto pw = plugin_optimal_weights(data, cfg, art);
        REQUIRE(pw.floored == art.partition.M());
        REQUIRE((pw.omega.array() == pw.omega(0)).all());

        const auto wfit = fit_esqr_weighted(data, cfg, art);
        const auto bfit = fit_esqr_binned(data, cfg, art);
        REQUIRE((wfit.beta - bfit.beta).lpNorm<Eigen::Infinity>() < 1e-12);
        VectorXd truth(2);
        truth << 2.0, 3.0;
        REQUIRE((wfit.beta - truth).lpNorm<Eigen::Infinity>() < 1e-8);
    }
    SECTION("homoscedastic model gives nearly constant weights") {
        Rng rng(99);
        const Eigen::Index n = 8000;
        MatrixXd C(n, 1);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = 2.0 * rng.uniform01();
            y(i) = 1.0 + 2.0 * C(i, 0) + rng.normal();
        }
        const auto data = make_dataset(C, y, {ColumnKind::continuous});
        EsqrConfig cfg;
        cfg.tau = 0.8;
        cfg.grid_J = 150;
        const auto art = build_esqr_artifacts(data, cfg, true);
        const auto pw = plugin_optimal_weights(data, cfg, art);
        REQUIRE(pw.floored == 0);
        REQUIRE(pw.omega.maxCoeff() / pw.omega.minCoeff() < 3.0);
        // Weighted and unweighted fits agree closely under near-uniform
        // weights.
        const auto wfit = fit_esqr_weighted(data, cfg, art);
        const auto bfit = fit_esqr_binned(data, cfg, art);
        REQUIRE((wfit.beta - bfit.beta).lpNorm<Eigen::Infinity>() < 0.25);
    }
    SECTION("weighted variant rejects preset extra weights") {
        MatrixXd C = MatrixXd::Random(50, 1);
        VectorXd y = VectorXd::Random(50);
        auto data = make_dataset(C, y, {ColumnKind::continuous});
        EsqrConfig cfg;
        cfg.extra_weights = VectorXd::Ones(4);
        REQUIRE_THROWS_WITH(
            fit_esqr_weighted(data, cfg),
            Catch::Matchers::ContainsSubstring("computes its own weights"));
    }
}

TEST_CASE("weighted variant tracks the unweighted one on a heteroscedastic model") {
    // Monte Carlo comparison: per-coefficient RMSE of the weighted variant
    // stays within 10% of the unweighted binned variant's RMSE.
    const double tau = 0.9;
    VectorXd truth(3);
    truth << 1.95, 3.9, 5.85;
    const int R = 40;
    const Eigen::Index n = 10000;
    MatrixXd err_b(R, 3), err_w(R, 3);
    for (int r = 0; r < R; ++r) {
        const auto data = sample_het_model(n, 5000 + static_cast<uint64_t>(r));
        EsqrConfig cfg;
        cfg.tau = tau;
        cfg.grid_J = 300;
        const auto art = build_esqr_artifacts(data, cfg, true);
        const auto bfit = fit_esqr_binned(data, cfg, art);
        const auto wfit = fit_esqr_weighted(data, cfg, art);
        err_b.row(r) = (bfit.beta - truth).transpose();
        err_w.row(r) = (wfit.beta - truth).transpose();
    }
    for (int k = 0; k < 3; ++k) {
        const double rmse_b = std::sqrt(err_b.col(k).squaredNorm() / R);
        const double rmse_w = std::sqrt(err_w.col(k).squaredNorm() / R);
        INFO("coefficient " << k << ": rmse weighted " << rmse_w << " unweighted "
                            << rmse_b);
        REQUIRE(rmse_w <= 1.1 * rmse_b);
    }
}

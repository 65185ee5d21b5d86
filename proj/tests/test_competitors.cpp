// test_competitors.cpp -- linearization, two-step, tail least squares,
// quantile averaging, and the weighted two-step, against least-squares
// oracles and exactness/equivariance properties.
#include "tailreg/competitors.hpp"
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

// Normal-equations oracle for (optionally weighted) least squares.
VectorXd ls_oracle(const MatrixXd& X, const VectorXd& z, const VectorXd* w) {
    MatrixXd G = MatrixXd::Zero(X.cols(), X.cols());
    VectorXd h = VectorXd::Zero(X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double wi = w ? (*w)(i) : 1.0;
        G += wi * X.row(i).transpose() * X.row(i);
        h += wi * X.row(i).transpose() * z(i);
    }
    return G.ldlt().solve(h);
}

Dataset noiseless(Eigen::Index n, uint64_t seed, VectorXd* beta_out) {
    Rng rng(seed);
    MatrixXd C(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        C(i, 0) = 2.0 * rng.uniform01();
        C(i, 1) = rng.normal();
    }
    VectorXd beta(3);
    beta << 1.0, -2.0, 0.5;
    Dataset d = make_dataset(C, VectorXd::Zero(n),
                             {ColumnKind::continuous, ColumnKind::continuous});
    d.y = d.X * beta;
    *beta_out = beta;
    return d;
}

} // namespace

TEST_CASE("fit_linearization matches the normal-equations oracle") {
    Rng rng(61);
    for (int rep = 0; rep < 50; ++rep) {
        const Eigen::Index M = 4 + static_cast<Eigen::Index>(rng.uniform_below(8));
        MatrixXd reps(M, 3);
        VectorXd es(M);
        for (Eigen::Index m = 0; m < M; ++m) {
            reps(m, 0) = 1.0;
            reps(m, 1) = rng.normal();
            reps(m, 2) = rng.uniform01();
            es(m) = rng.normal();
        }
        const auto fit = fit_linearization(reps, es);
        const VectorXd oracle = ls_oracle(reps, es, nullptr);
        REQUIRE((fit.beta - oracle).lpNorm<Eigen::Infinity>() < 1e-10);
    }
    SECTION("noiseless values recover the plane exactly") {
        MatrixXd reps(4, 2);
        reps << 1, 0, 1, 1, 1, 2, 1, 3;
        VectorXd truth(2);
        truth << 0.5, -2.0;
        const auto fit = fit_linearization(reps, reps * truth);
        REQUIRE((fit.beta - truth).lpNorm<Eigen::Infinity>() < 1e-12);
    }
    SECTION("singular design raises") {
        MatrixXd reps(3, 2);
        reps << 1, 1, 1, 1, 1, 1;
        REQUIRE_THROWS_WITH(fit_linearization(reps, VectorXd::Zero(3)),
                            Catch::Matchers::ContainsSubstring("singular design"));
    }
}

TEST_CASE("fit_linearization_discrete groups rows and fits the ES values") {
    // Two groups, constant responses within each: the ES at any level is the
    // constant, so the fitted line interpolates the two (x, c) pairs.
    MatrixXd C(6, 1);
    C << 0, 0, 0, 1, 1, 1;
    VectorXd y(6);
    y << 2, 2, 2, 5, 5, 5;
    const auto data = make_dataset(C, y, {ColumnKind::discrete});
    const auto fit = fit_linearization_discrete(data, 0.8);
    REQUIRE(fit.beta(0) == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(fit.beta(1) == Catch::Approx(3.0).margin(1e-12));

    MatrixXd C2(3, 1);
    C2 << 0, 0, 1;
    REQUIRE_THROWS_WITH(
        fit_linearization_discrete(make_dataset(C2, y.head(3), {ColumnKind::discrete}),
                                   0.8),
        Catch::Matchers::ContainsSubstring("appears only once"));
}

TEST_CASE("fit_two_step: noiseless exactness, oracle, and equivariance") {
    VectorXd beta;
    const auto clean = noiseless(200, 17, &beta);
    const auto fit = fit_two_step(clean, 0.9);
    REQUIRE((fit.beta - beta).lpNorm<Eigen::Infinity>() < 1e-8);

    SECTION("second step matches the least-squares oracle given eta") {
        Rng rng(23);
        const Eigen::Index n = 150;
        MatrixXd C(n, 1);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = rng.normal();
            y(i) = 1.0 + C(i, 0) + rng.exponential();
        }
        const auto data = make_dataset(C, y, {ColumnKind::continuous});
        VectorXd eta(2);
        eta << 2.0, 1.0;
        const auto ts = fit_two_step(data, 0.8, eta);
        VectorXd z(n);
        for (Eigen::Index i = 0; i < n; ++i)
            z(i) = pseudo_response(y(i), eta(0) + eta(1) * C(i, 0), 0.8);
        const VectorXd oracle = ls_oracle(data.X, z, nullptr);
        REQUIRE((ts.beta - oracle).lpNorm<Eigen::Infinity>() < 1e-10);
    }
    SECTION("scale equivariance") {
        Rng rng(29);
        const Eigen::Index n = 400;
        MatrixXd C(n, 1);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = rng.uniform01();
            y(i) = 1.0 + 2.0 * C(i, 0) * rng.exponential();
        }
        const auto data = make_dataset(C, y, {ColumnKind::continuous});
        const auto base = fit_two_step(data, 0.85);
        Dataset scaled = data;
        scaled.y *= 3.0;
        const auto s = fit_two_step(scaled, 0.85);
        REQUIRE((s.beta - 3.0 * base.beta).lpNorm<Eigen::Infinity>() < 1e-6);
    }
}

TEST_CASE("fit_two_step Monte Carlo bias on the heteroscedastic model") {
    // y = (1 + 2 x1 + 3 x2)(1 + u): true ES coefficients at tau = 0.8 are
    // 1.9 * (1, 2, 3); the relative bias |mean - true| / sd stays below 0.5.
    const double tau = 0.8;
    VectorXd truth(3);
    truth << 1.9, 3.8, 5.7;
    const int R = 200;
    const Eigen::Index n = 5000;
    MatrixXd betas(R, 3);
    for (int r = 0; r < R; ++r) {
        Rng rng(11000 + static_cast<uint64_t>(r));
        MatrixXd C(n, 2);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = 4.0 * rng.uniform01();
            C(i, 1) = static_cast<double>(rng.uniform_below(2));
            y(i) = (1.0 + 2.0 * C(i, 0) + 3.0 * C(i, 1)) * (1.0 + rng.uniform01());
        }
        const auto data =
            make_dataset(C, y, {ColumnKind::continuous, ColumnKind::discrete});
        betas.row(r) = fit_two_step(data, tau).beta.transpose();
    }
    for (int k = 0; k < 3; ++k) {
        std::vector<double> col(betas.col(k).data(), betas.col(k).data() + R);
        const double mean = pairwise_mean(col);
        const double sd = std::sqrt(sample_variance(col));
        INFO("coefficient " << k << " mean " << mean << " sd " << sd);
        REQUIRE(std::abs(mean - truth(k)) / sd < 0.5);
    }
}

TEST_CASE("fit_tsls: tail selection, oracle, and the intercept-only identity") {
    VectorXd beta;
    const auto clean = noiseless(200, 37, &beta);
    const auto fit = fit_tsls(clean, 0.9);
    REQUIRE((fit.beta - beta).lpNorm<Eigen::Infinity>() < 1e-8);

    SECTION("matches the indicator-weighted least-squares oracle given eta") {
        Rng rng(41);
        const Eigen::Index n = 300;
        MatrixXd C(n, 1);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = rng.normal();
            y(i) = C(i, 0) + rng.normal();
        }
        const auto data = make_dataset(C, y, {ColumnKind::continuous});
        VectorXd eta(2);
        eta << 0.3, 1.0;
        const auto fit2 = fit_tsls(data, 0.8, eta);
        // Oracle: weighted LS with indicator weights 1(y >= x'eta).
        VectorXd w(n);
        for (Eigen::Index i = 0; i < n; ++i)
            w(i) = (y(i) >= eta(0) + eta(1) * C(i, 0)) ? 1.0 : 0.0;
        MatrixXd G = MatrixXd::Zero(2, 2);
        VectorXd h = VectorXd::Zero(2);
        for (Eigen::Index i = 0; i < n; ++i) {
            G += w(i) * data.X.row(i).transpose() * data.X.row(i);
            h += w(i) * data.X.row(i).transpose() * y(i);
        }
        const VectorXd oracle = G.ldlt().solve(h);
        REQUIRE((fit2.beta - oracle).lpNorm<Eigen::Infinity>() < 1e-10);
    }
    SECTION("intercept-only tail mean equals the count-normalized empirical ES") {
        Rng rng(43);
        const Eigen::Index n = 157; // n * tau not an integer
        MatrixXd C(n, 0);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) y(i) = rng.normal() + rng.exponential();
        const auto data = make_dataset(C, y, {});
        const auto fit2 = fit_tsls(data, 0.9);
        std::vector<double> ys(y.data(), y.data() + n);
        REQUIRE(fit2.beta(0) ==
                Catch::Approx(empirical_es(ys, 0.9)).margin(1e-7));
    }
    SECTION("an eta plane above every response leaves no tail") {
        MatrixXd C(20, 1);
        VectorXd y(20);
        for (Eigen::Index i = 0; i < 20; ++i) {
            C(i, 0) = static_cast<double>(i);
            y(i) = 1.0;
        }
        const auto data = make_dataset(C, y, {ColumnKind::continuous});
        VectorXd eta(2);
        eta << 100.0, 0.0;
        REQUIRE_THROWS_WITH(
            fit_tsls(data, 0.9, eta),
            Catch::Matchers::ContainsSubstring("too few tail observations"));
    }
}

TEST_CASE("fit_quantile_average: grid arithmetic and recovery") {
    VectorXd beta;
    const auto clean = noiseless(150, 53, &beta);
    const auto fit = fit_quantile_average(clean, 0.9);
    REQUIRE(fit.grid_points == 50); // levels 0.900, 0.902, ..., 0.998
    REQUIRE((fit.beta - beta).lpNorm<Eigen::Infinity>() < 1e-8);

    SECTION("level-grid validation") {
        REQUIRE_THROWS_AS(fit_quantile_average(clean, 0.998, 0.002),
                          std::invalid_argument);
        REQUIRE_THROWS_AS(fit_quantile_average(clean, 0.9, -0.1),
                          std::invalid_argument);
    }
    SECTION("homoscedastic shift model: slope spread below intercept spread") {
        Rng rng(59);
        const Eigen::Index n = 3000;
        MatrixXd C(n, 1);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = 3.0 * rng.uniform01();
            y(i) = 2.0 + 1.5 * C(i, 0) + rng.normal();
        }
        const auto data = make_dataset(C, y, {ColumnKind::continuous});
        // In a pure location-shift model the slope is the same at every
        // quantile level while the intercept varies; the per-level slopes
        // should hug the common value.
        VectorXd warm;
        std::vector<double> slopes, intercepts;
        QrOptions opts;
        for (double level = 0.9; level < 0.985; level += 0.01) {
            opts.warm_start = warm.size() ? &warm : nullptr;
            const auto sol = fit_quantile_regression(data.X, data.y, level, nullptr, opts);
            warm = sol.beta;
            intercepts.push_back(sol.beta(0));
            slopes.push_back(sol.beta(1));
        }
        REQUIRE(sample_variance(slopes) < sample_variance(intercepts));
        const auto avg = fit_quantile_average(data, 0.9, 0.01);
        REQUIRE(avg.beta(1) == Catch::Approx(1.5).margin(0.2));
    }
}

TEST_CASE("fit_weighted_two_step: floors, reductions, and the oracle") {
    SECTION("intercept-only constant spread reproduces the two-step exactly") {
        Rng rng(67);
        const Eigen::Index n = 211;
        MatrixXd C(n, 0);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) y(i) = rng.exponential();
        const auto data = make_dataset(C, y, {});
        const auto ts = fit_two_step(data, 0.9);
        const auto wts = fit_weighted_two_step(data, 0.9);
        REQUIRE(wts.beta(0) == Catch::Approx(ts.beta(0)).margin(1e-10));
    }
    SECTION("noiseless data: degenerate spreads run through the floor") {
        VectorXd beta;
        const auto clean = noiseless(180, 71, &beta);
        const auto fit = fit_weighted_two_step(clean, 0.9);
        REQUIRE((fit.beta - beta).lpNorm<Eigen::Infinity>() < 1e-8);
    }
    SECTION("all-constant responses (zero scale) stay finite") {
        MatrixXd C(30, 1);
        VectorXd y = VectorXd::Constant(30, 4.0);
        for (Eigen::Index i = 0; i < 30; ++i) C(i, 0) = static_cast<double>(i % 5);
        const auto data = make_dataset(C, y, {ColumnKind::discrete});
        const auto fit = fit_weighted_two_step(data, 0.8);
        REQUIRE(fit.beta.allFinite());
        REQUIRE(fit.beta(0) == Catch::Approx(4.0).margin(1e-8));
        REQUIRE(fit.beta(1) == Catch::Approx(0.0).margin(1e-8));
    }
    SECTION("matches a weighted least-squares oracle") {
        Rng rng(73);
        const Eigen::Index n = 500;
        MatrixXd C(n, 1);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = 1.0 + rng.uniform01();
            y(i) = C(i, 0) * rng.exponential();
        }
        const auto data = make_dataset(C, y, {ColumnKind::continuous});
        const double tau = 0.85;
        const auto fit = fit_weighted_two_step(data, tau);
        // Rebuild the three steps by hand.
        const auto eta = fit_quantile_regression(data.X, data.y, tau);
        const auto ts = fit_two_step(data, tau, eta.beta);
        std::vector<double> yv(y.data(), y.data() + n);
        const double floor = 1e-6 * std::sqrt(sample_variance(yv));
        VectorXd w(n), z(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double qh = data.X.row(i).dot(eta.beta);
            const double d = std::max(data.X.row(i).dot(ts.beta - eta.beta), floor);
            w(i) = 1.0 / (d * d);
            z(i) = pseudo_response(y(i), qh, tau);
        }
        const VectorXd oracle = ls_oracle(data.X, z, &w);
        REQUIRE((fit.beta - oracle).lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("weighted two-step beats plain two-step for the intercept at scale") {
    // Exponential-tail discrete model: wts should match or improve the
    // intercept RMSE relative to unweighted ts.
    const double tau = 0.9;
    const double q = -std::log(0.1);
    VectorXd truth(3);
    truth << 1.0 + q + 1.0, 3.9, 3.0 + 30.0 * (q + 1.0);
    const int R = 100;
    const Eigen::Index n = 10000;
    double sse_ts = 0.0, sse_wts = 0.0;
    for (int r = 0; r < R; ++r) {
        Rng rng(77000 + static_cast<uint64_t>(r));
        MatrixXd C(n, 2);
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            C(i, 0) = static_cast<double>(rng.uniform_below(2) + rng.uniform_below(2));
            C(i, 1) = static_cast<double>(rng.uniform_below(2) + rng.uniform_below(2));
            const double u = rng.uniform01();
            const double e = -std::log(1.0 - u); // comonotone exponential driver
            y(i) = 1.0 + e + (2.0 + 2.0 * u) * C(i, 0) + (3.0 + 30.0 * e) * C(i, 1);
        }
        const auto data =
            make_dataset(C, y, {ColumnKind::discrete, ColumnKind::discrete});
        const auto eta = fit_quantile_regression(data.X, data.y, tau);
        const auto ts = fit_two_step(data, tau, eta.beta);
        const auto wts = fit_weighted_two_step(data, tau);
        sse_ts += (ts.beta(0) - truth(0)) * (ts.beta(0) - truth(0));
        sse_wts += (wts.beta(0) - truth(0)) * (wts.beta(0) - truth(0));
    }
    INFO("intercept rmse: ts " << std::sqrt(sse_ts / R) << " wts "
                               << std::sqrt(sse_wts / R));
    REQUIRE(sse_wts <= sse_ts);
}

TEST_CASE("competitors are permutation-invariant in rows") {
    Rng rng(83);
    const Eigen::Index n = 250;
    MatrixXd C(n, 1);
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        C(i, 0) = rng.normal();
        y(i) = 1.0 + C(i, 0) + rng.exponential();
    }
    const auto data = make_dataset(C, y, {ColumnKind::continuous});
    Dataset rev = data;
    rev.X = data.X.colwise().reverse().eval();
    rev.y = data.y.reverse().eval();

    REQUIRE((fit_two_step(data, 0.8).beta - fit_two_step(rev, 0.8).beta)
                .lpNorm<Eigen::Infinity>() < 1e-9);
    REQUIRE((fit_tsls(data, 0.8).beta - fit_tsls(rev, 0.8).beta)
                .lpNorm<Eigen::Infinity>() < 1e-9);
    REQUIRE((fit_weighted_two_step(data, 0.8).beta -
             fit_weighted_two_step(rev, 0.8).beta)
                .lpNorm<Eigen::Infinity>() < 1e-9);
}

// simulate.hpp -- Monte Carlo replication runner, evaluation metrics, the
// superquantile-regression counterexample, and a standardized-normality check.
//
// The runner draws R independent datasets from a registered generating model
// (one child seed per replication, derived from the master seed by counter),
// fits every requested estimator on each, and reports per-coefficient relative
// bias, RMSE, and RMSE ratios. Replications run in parallel; every estimate is
// written to a replication-indexed slot and all reductions are pairwise sums in
// slot order, so reports are bit-identical for any thread count.
#pragma once

#include "tailreg/dataset.hpp"
#include "tailreg/dgp.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tailreg {

// A named coefficient estimator under study: maps a dataset and a tail level
// to fitted linear ES coefficients (intercept first, matching Dataset::X).
// Throwing marks that replication as failed for this estimator only; failed
// replications are excluded from its statistics and counted in the report.
struct McEstimator {
    std::string name;
    std::function<VectorXd(const Dataset&, double tau)> fit;
};

struct McConfig {
    int reps = 200;               // R, number of Monte Carlo replications (>= 2)
    Eigen::Index n = 1000;        // sample size per replication
    double tau = 0.9;             // tail level
    std::uint64_t seed = 20260816; // master seed; replication r uses child r
    int threads = 0;              // worker threads; 0 = default_thread_count()
};

// Monte Carlo evaluation summary. Estimator-major layout: row e of rel_bias /
// rmse holds estimator e's per-coefficient metrics.
struct McReport {
    std::string dgp;                      // generating-model name
    int reps = 0;                         // requested replications R
    Eigen::Index n = 0;                   // per-replication sample size
    double tau = 0.0;                     // tail level
    std::uint64_t seed = 0;               // master seed
    std::vector<std::string> estimators;  // estimator names, row order
    VectorXd beta_true;                   // target coefficients at tau
    // (mean(estimate) - beta) / SD(estimate), per estimator x coefficient.
    // An exact estimator (zero spread, zero bias) reports 0.
    MatrixXd rel_bias;
    // sqrt(mean((estimate - beta)^2)) per estimator x coefficient.
    MatrixXd rmse;
    std::vector<int> failures;            // failed replications per estimator
    // Raw estimates: draws[e] is reps x p with NaN rows for failed replications.
    std::vector<MatrixXd> draws;

    // RMSE ratio baseline-over-candidate for one coefficient; > 1 means the
    // candidate is more accurate. A zero candidate RMSE against a nonzero
    // baseline yields +infinity; an estimator against itself is exactly 1.
    double ratio(Eigen::Index baseline, Eigen::Index candidate,
                 Eigen::Index coef) const;
    // Full ratio matrix for one coefficient: entry (b, c) = ratio(b, c, coef).
    MatrixXd ratio_matrix(Eigen::Index coef) const;
};

// Run the Monte Carlo study. Deterministic given cfg.seed regardless of
// cfg.threads. Throws std::invalid_argument for reps < 2 or an empty estimator
// list. Individual estimator failures never abort the run.
McReport run_monte_carlo(const DgpSpec& spec,
                         const std::vector<McEstimator>& estimators,
                         const McConfig& cfg);

// Tab-separated summary table, one row per estimator x coefficient with
// relative bias, RMSE, the RMSE ratio of the first estimator over this one,
// and the failure count. Suitable for direct file output.
std::string mc_report_table(const McReport& report);

// ---------------------------------------------------------------------------
// Superquantile-regression counterexample (heteroscedastic scale model
// Y = 1 + X * eps with Gamma(2,1) covariate and uniform noise on [-1, 1]).
// The tau = 0.5 linear ES slope is 0.5, yet the superquantile-regression
// objective -- intercept profiled out, slope minimizing
//   E[X] * t + 2 * integral_{1/2}^{1} v_{[Y - t X]}(a) da
// -- has its population minimum near 0.7041: the two regressions genuinely
// disagree. Both the analytic population version and the sample version used
// in the replication experiment are provided.

// Closed-form derivative of the population objective at slope t in [-1, 1]:
//   -1 - log(1 - t)                    for t <= 0,
//   2 * { -1/2 - Li2(1/2) + Li2((1+t)/2) + (1/2 - log 2) log(1+t) }   for t > 0.
double superquantile_objective_derivative(double theta1);

// Root of the derivative in (0, 1), found by bisection to 1e-10: the
// population superquantile-regression slope (~0.7041). Throws std::runtime_error
// if the derivative does not change sign on (0, 1).
double superquantile_population_slope();

struct SuperquantileFit {
    double intercept = 0.0; // empirical tau-superquantile of the residuals
    double slope = 0.0;     // minimizer of the discretized objective
};

// Sample version of the counterexample experiment: draw n observations from
// the model above (deterministic in seed), minimize the discretized objective
//   mean(X) * t + (1 / grid_points) * sum_t vhat_{[Y - t X]}(alpha_t)
// over t in [-0.99, 0.99] by golden-section search, where alpha_t are the
// grid_points midpoint levels of (tau, 1) and vhat is the empirical
// superquantile q_hat(alpha) + mean((Z - q_hat)^+) / (1 - alpha); then set the
// intercept to the empirical tau-superquantile of the residuals. tau = 0.5.
// Requires n >= 100 and grid_points >= 1.
SuperquantileFit superquantile_sample_fit(Eigen::Index n, std::uint64_t seed,
                                          int grid_points = 100);

// ---------------------------------------------------------------------------
// Standardized-normality diagnostic: given Monte Carlo draws of an estimator
// (rows = replications; NaN rows are skipped), the target coefficients, the
// theoretical asymptotic covariance, and the per-replication sample size,
// standardize sqrt(n) (draw - beta) coordinate-wise by the avar diagonal and
// return each coordinate's Kolmogorov-Smirnov distance from the standard
// normal. Requires >= 50 usable draws, a strictly positive avar diagonal, and
// nonzero spread in every coordinate.
VectorXd standardized_normality_check(const MatrixXd& draws,
                                      const VectorXd& beta,
                                      const MatrixXd& avar, double n);

} // namespace tailreg

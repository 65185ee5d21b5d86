// quantile.hpp -- check loss, empirical quantiles, weighted linear quantile
// regression, and a truncated-power B-spline design expansion.
#pragma once

#include "tailreg/dataset.hpp"

#include <Eigen/Dense>
#include <utility>
#include <vector>

namespace tailreg {

// Asymmetric absolute ("check") loss rho_s(u) = u * (s - 1{u < 0}).
inline double check_loss(double u, double s) {
    return u * (s - (u < 0.0 ? 1.0 : 0.0));
}

// Weighted total check loss, summed pairwise for reproducibility.
double check_loss_sum(const VectorXd& residuals, double s,
                      const VectorXd* weights = nullptr);

// Empirical quantile at level s in (0,1): the ceil(n*s)-th order statistic
// (lowest value whose empirical CDF reaches s). Throws on an empty sample.
double empirical_quantile(const std::vector<double>& values, double s);
double empirical_quantile(const VectorXd& values, double s);

// Interior-point state carried between solves of the SAME design (and same
// weights) at nearby levels. The dual box variable a satisfies
// X'a = (1-s) X'1, so shifting every coordinate by the level difference keeps
// it feasible at the new level; reusing it hands the next solve the previous
// active set and cuts its iteration count several-fold.
struct QrWarmState {
    double s = -1.0; // level the state was captured at; < 0 marks it empty
    VectorXd a;
};

struct QrOptions {
    double tol = 1e-8;        // relative duality-gap tolerance
    int max_iterations = 100; // interior-point iteration cap
    const VectorXd* warm_start = nullptr; // optional starting coefficients
    bool allow_fallback = true;           // smoothed-loss polish if IP stalls
    // Skip the rank-validation QR factorization. Only honored together with a
    // warm start; set it when re-solving a design that an earlier call on the
    // same matrix has already validated (e.g. the per-level loop over a fixed
    // design), where the factorization would repeat pure overhead.
    bool skip_rank_check = false;
    // In/out interior-point state for consecutive-level solves on a fixed
    // design. Read when it matches the problem size; always overwritten with
    // the final state on exit. Meaningless (and ignored on read) if the
    // design or weights changed since it was captured.
    QrWarmState* warm_state = nullptr;
};

struct QrSolution {
    VectorXd beta;
    double objective = 0.0;   // weighted check loss at beta
    int iterations = 0;
    bool converged = false;
    bool used_fallback = false;
};

// Minimize sum_i w_i * rho_s(y_i - x_i' beta) over beta.
//
// Solver: a primal-dual interior-point method on the bounded-variable dual LP
//     max_a  y'a   s.t.  X'a = (1-s) X'1,  0 <= a <= 1,
// with Mehrotra predictor-corrector steps; the Newton step reduces to one
// symmetric positive-definite (p+1)x(p+1) solve per direction. Positive weights
// enter by row scaling (the check loss is positively homogeneous); zero-weight
// rows are dropped. Convergence is declared when the duality gap
//     sum_i rho_s(r_i) - (y'a - (1-s) 1'y)
// falls below tol * (1 + |objective|). When the optimum is not unique the
// iterates approach the analytic center of the solution face, so ties are
// resolved deterministically but not at a vertex; compare objectives, not
// coefficients, in that situation.
//
// Throws std::invalid_argument on empty/mismatched input, s outside (0,1),
// negative/non-finite/all-zero weights, or a singular design (rank-deficient
// X on the positive-weight rows).
QrSolution fit_quantile_regression(const MatrixXd& X, const VectorXd& y, double s,
                                   const VectorXd* weights = nullptr,
                                   const QrOptions& opts = {});

// Truncated-power spline expansion: intercept plus, per covariate column,
// { x, (x - k1)_+, (x - k2)_+ } with interior knots k1 < k2.
struct BsplineDesign {
    MatrixXd B;                                 // n x (1 + 3p)
    std::vector<std::pair<double, double>> knots; // per covariate (k1, k2)
};

// Expand raw covariates (no intercept column) into the spline design. Default
// knots are the empirical 1/3 and 2/3 quantiles of each column; explicit knots
// may be supplied instead. Throws if any pair has k1 >= k2 (e.g. a column
// where both quantiles coincide).
BsplineDesign bspline_design(const MatrixXd& covariates,
                             const std::vector<std::pair<double, double>>* knots = nullptr);

} // namespace tailreg

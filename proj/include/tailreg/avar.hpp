// avar.hpp -- closed-form asymptotic variance-covariance matrices and
// asymptotic relative efficiency (ARE) for the ES regression estimators.
//
// All sandwiches are driven by the conditional tail functionals
//   m1(x) = var(Y | Y >= q(tau,x), x),   m2(x) = v(tau,x) - q(tau,x),
// and by phi(x) = m1(x) + tau m2(x)^2, the conditional variance of the
// pseudo-response. Expectations over the covariate distribution are computed
// from a finite list of evaluation points with masses: exact for finite
// supports, sample averages (mass 1/N) for sampled designs.
//
// With w(x) a per-point weight, the generic weighted-least-squares sandwich is
//   AVar(w) = (1-tau)^{-1} [E w XX']^{-1} E[w^2 phi XX'] [E w XX']^{-1}.
// Methods:
//   esqr : w = 1/m2   (the estimator's implicit heterogeneity-adaptive weight)
//   ts   : w = 1      (two-step; also the linearization estimator "ln")
//   j1   : w = 1/v^2      (joint M-estimation, logarithmic link)
//   j2   : w = v^{-3/2}   (joint M-estimation, square-root link)
//   wls  : caller-supplied w
//   optimal : w = 1/phi, which collapses to (1-tau)^{-1} [E XX'/phi]^{-1},
//             the efficiency bound over this weighted class
//   tsls : not of the WLS form; a two-step sandwich whose quantile first
//          stage contributes tau K E[XX'] K' with K = E[XX'] E[XX'/m2]^{-1}.
//          That K is exact for location-scale tail families, where the
//          conditional density at the quantile is proportional to 1/m2(x);
//          every registered analytic generator is of this type.
#pragma once

#include "tailreg/dgp.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace tailreg {

enum class AvarMethod { esqr, ts, ln, tsls, j1, j2, wls, optimal };

std::string avar_method_name(AvarMethod method);
AvarMethod parse_avar_method(const std::string& name);

// Conditional tail functionals evaluated on a finite list of design points.
struct ModelFunctionals {
    MatrixXd points;  // N x (p+1) design rows, intercept column included
    VectorXd masses;  // N nonnegative weights summing to 1
    VectorXd m1;      // conditional tail variance, >= 0
    VectorXd m2;      // conditional ES minus quantile, > 0
    VectorXd v;       // conditional ES level
    VectorXd q;       // conditional quantile level

    Eigen::Index size() const { return points.rows(); }
    Eigen::Index dim() const { return points.cols(); }
    // Throws std::invalid_argument if sizes disagree, anything is non-finite,
    // masses are negative or do not sum to 1, m1 < 0, or m2 <= 0.
    void validate() const;
};

struct AvarReport {
    std::string method;
    MatrixXd bread;     // the outer matrix D of the sandwich
    MatrixXd meat;      // the central matrix Omega
    MatrixXd sandwich;  // (1-tau)^{-1} D^{-1} Omega D^{-1}, symmetric PSD
};

// Asymptotic variance of sqrt(n)(beta-hat - beta) for the given method.
// `wls_weights` is required exactly when method == wls: one positive weight
// per evaluation point. Throws "degenerate design" if the bread matrix is
// singular.
AvarReport avar(AvarMethod method, const ModelFunctionals& fn, double tau,
                const VectorXd* wls_weights = nullptr);

// Sandwich of the weighted stacked estimator with per-point weights omega
// (on top of the implicit 1/m2): equivalent to the generic form with
// w = omega/m2. With omega proportional to (1-tau) m2/phi this equals the
// `optimal` bound.
AvarReport avar_esqr_weighted(const ModelFunctionals& fn, double tau,
                              const VectorXd& omega);

enum class AreNorm { frobenius, determinant };

// Asymptotic relative efficiency of `a` relative to `b`:
// ||b.sandwich|| / ||a.sandwich|| under the chosen norm, so values above 1
// mean `a` is the more efficient method. Throws on dimension mismatch or a
// zero/non-finite norm.
double are(const AvarReport& a, const AvarReport& b, AreNorm norm);

// Closed-form functionals for a registered analytic generator: exact support
// enumeration for finite designs, a seeded covariate sample of
// `sample_points` rows otherwise. Throws for nonlinear_skewt (nonlinear
// quantile model).
ModelFunctionals functionals_from_dgp(const DgpSpec& spec, double tau,
                                      Eigen::Index sample_points = 1000000,
                                      std::uint64_t seed = 20260816);

// Same, at caller-provided design rows (intercept column included); masses
// default to uniform.
ModelFunctionals functionals_at(const DgpSpec& spec, double tau, const MatrixXd& points,
                                const VectorXd* masses = nullptr);

} // namespace tailreg

// competitors.hpp -- comparison estimators for linear expected-shortfall
// regression: linearization (ln), two-step with orthogonalized
// pseudo-responses (ts), two-step least squares on the fitted tail (tsls),
// quantile-coefficient averaging (qavg), and the weighted three-step recipe
// (wts). All share the FitResult schema with the stacked estimators so a
// Monte Carlo runner can treat every method uniformly.
//
// Joint M-estimators that model the quantile and ES planes simultaneously
// (the j1/j2 weighting schemes) are NOT fitted here: their sample criterion
// is neither smooth nor convex. Only their asymptotic variance formulas are
// implemented, in the avar module.
#pragma once

#include "tailreg/dataset.hpp"
#include "tailreg/esqr.hpp"
#include "tailreg/tail.hpp"

namespace tailreg {

// Linearization: unweighted ordinary least squares of per-bin (or per-group)
// tau-level ES values on the representative covariate rows.
FitResult fit_linearization(const MatrixXd& reps, const VectorXd& es_at_tau);

// Convenience for binned pipelines: reads the tau-level column (nearest grid
// level) off the artifacts' ES process table.
FitResult fit_linearization(const Dataset& data, const EsqrArtifacts& artifacts);

// Convenience for discrete designs: groups rows by exact covariate value
// (each needs >= 2 observations) and uses per-group empirical ES at tau.
FitResult fit_linearization_discrete(
    const Dataset& data, double tau,
    EsConvention convention = EsConvention::count_normalized);

// Two-step: (1) linear quantile regression at tau gives eta-hat; (2) ordinary
// least squares of the orthogonalized pseudo-responses Z_i(eta-hat) on x_i.
FitResult fit_two_step(const Dataset& data, double tau);
FitResult fit_two_step(const Dataset& data, double tau, const VectorXd& eta);

// Two-step least squares: (1) quantile regression eta-hat; (2) least squares
// of y on x over the fitted tail {y_i >= x_i' eta-hat}. Throws "too few tail
// observations" when the tail holds fewer than p+1 rows.
FitResult fit_tsls(const Dataset& data, double tau);
FitResult fit_tsls(const Dataset& data, double tau, const VectorXd& eta);

// Quantile-coefficient averaging: linear quantile fits at tau, tau+step, ...
// (excluding levels >= 0.999), averaged coefficient-wise — the discretized
// integral representation of the ES coefficients.
FitResult fit_quantile_average(const Dataset& data, double tau,
                               double step = 0.002);

// Weighted two-step (three passes): (1) eta-hat; (2) unweighted two-step
// beta-tilde; (3) weighted least squares of Z_i(eta-hat) on x_i with weights
// 1 / max(x_i'(beta-tilde - eta-hat), floor)^2, floor = floor_scale * sd(y).
FitResult fit_weighted_two_step(const Dataset& data, double tau,
                                double floor_scale = 1e-6);

} // namespace tailreg

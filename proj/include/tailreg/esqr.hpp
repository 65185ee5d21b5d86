// esqr.hpp -- expected-shortfall quantile regression (esqr): the flagship
// estimators. Each variant reduces ES regression to a single weighted
// quantile regression at level tau over a stacked ES process:
//
//   minimize over beta:  sum_m sum_j  w_m * rho_tau( vhat_m(s_j) - x_m' beta )
//
// which discretizes the integrated check loss over the truncated level band
// [tau - delta*tau, tau + delta*(1-tau)]. The discrete variant builds
// vhat_m(s_j) from per-group empirical expected shortfalls (groups = distinct
// covariate rows, weight = group size); the binned variant builds it from the
// bin-wise ES process with Schur-complement bin masses; the weighted variant
// adds plug-in efficiency weights omega_m on top.
#pragma once

#include "tailreg/binning.hpp"
#include "tailreg/dataset.hpp"
#include "tailreg/quantile.hpp"
#include "tailreg/tail.hpp"

#include <optional>

namespace tailreg {

struct EsqrConfig {
    double tau = 0.9;                       // target expected-shortfall level
    double delta = 0.5;                     // band half-width parameter in (0,1]
    std::optional<Eigen::Index> grid_J;     // override the default grid size rule
    double bins_constant = 1.6;             // continuous slice-count constant
    std::optional<Eigen::Index> slices_override; // force slices per continuous axis
    BackendKind backend = BackendKind::global_linear;
    EsConvention es_convention = EsConvention::count_normalized; // discrete variant
    // Optional extra per-bin weights applied multiplicatively on top of the
    // bin masses (binned variant only). Size must equal the bin count.
    std::optional<VectorXd> extra_weights;
    // Weighted variant: floor = weight_floor_scale * median(positive omegas).
    double weight_floor_scale = 1e-8;
    int threads = 1;
};

// Everything the binned pipeline computes before the final stacked solve.
struct EsqrArtifacts {
    QuantileGrid grid;
    Partition partition;
    QuantileBackend backend;
    ESProcessTable table;
};

// Run partition -> moments -> grid -> backend -> ES process for `data`.
// With fit_tau_level set, the backend also fits the exact-tau level (global
// backends only); the weighted variant needs it for its plug-in weights.
EsqrArtifacts build_esqr_artifacts(const Dataset& data, const EsqrConfig& config,
                                   bool fit_tau_level = false);

// Solve the stacked weighted quantile regression at level tau: one row per
// (bin m, level j) with response values(m, j), design row reps.row(m), and
// weight weights(m). Weights are normalized to unit mean over the positive
// entries first, so the result is invariant to common positive rescaling;
// zero-weight bins drop out of the problem entirely.
QrSolution solve_stacked(const MatrixXd& values, const MatrixXd& reps,
                         const VectorXd& weights, double tau,
                         const QrOptions& opts = {});

// Discrete-design variant: every distinct covariate row is a group (each must
// have >= 2 observations and the distinct-row design must have full column
// rank). Per group, the empirical ES is evaluated at every grid level; the
// stacked solve weights each group by its size.
FitResult fit_esqr_discrete(const Dataset& data, const EsqrConfig& config);

// Binned variant for general (continuous or mixed) designs: data-driven
// partition, quantile backend across the level grid, bin-wise ES process,
// then the stacked solve weighted by the Schur-complement bin masses (times
// config.extra_weights when supplied). Bins with fewer than 2 members are
// dropped with a warning.
FitResult fit_esqr_binned(const Dataset& data, const EsqrConfig& config);

// Plug-in efficiency weights for the weighted variant, per bin:
//   omega_m = (vhat(tau, X_m) - qhat(tau, X_m)) / sigma2hat_m,
//   sigma2hat_m = [tail variance + tau * (vhat - qhat)^2] / (1 - tau),
// where the tail variance is the sample variance of y_i - qhat(tau, x_i)
// over bin members with y_i >= qhat(tau, x_i). Nonpositive or undefined
// omegas are floored at weight_floor_scale * median(positive omegas).
struct PluginWeights {
    VectorXd omega;      // per-bin weight, floored
    VectorXd v_tau;      // vhat(tau, X_m) read off the ES process table
    VectorXd q_tau;      // qhat(tau, X_m)
    VectorXd sigma2;     // per-bin variance plug-in (NaN where undefined)
    double floor = 0.0;  // the applied floor value
    int floored = 0;     // number of bins clipped to the floor
};
PluginWeights plugin_optimal_weights(const Dataset& data, const EsqrConfig& config,
                                     const EsqrArtifacts& artifacts);

// Optimally weighted variant: computes PluginWeights and reruns the binned
// stacked solve with bin weight gamma_m * omega_m. Rejects a user-supplied
// extra_weights (those belong to fit_esqr_binned).
FitResult fit_esqr_weighted(const Dataset& data, const EsqrConfig& config);

// Artifact-reusing overloads, for callers fitting several variants on the
// same data (one partition/backend/table build instead of one per variant).
// The weighted overload needs artifacts built with fit_tau_level = true.
FitResult fit_esqr_binned(const Dataset& data, const EsqrConfig& config,
                          const EsqrArtifacts& artifacts);
FitResult fit_esqr_weighted(const Dataset& data, const EsqrConfig& config,
                            const EsqrArtifacts& artifacts);

} // namespace tailreg

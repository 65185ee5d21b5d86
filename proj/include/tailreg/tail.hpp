// tail.hpp -- initial expected-shortfall machinery: one-sample empirical ES,
// orthogonalized pseudo-responses, bin-wise local-linear ES, the quantile
// grid, quantile-function backends, and the per-bin ES process table.
#pragma once

#include "tailreg/binning.hpp"
#include "tailreg/dataset.hpp"

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace tailreg {

enum class EsConvention {
    count_normalized, // tail mean: sum y_i 1(y_i >= qhat) / #{y_i >= qhat}
    level_normalized  // sum y_i 1(y_i >= qhat) / ((1-s) n)
};

// One-sample empirical expected shortfall at level s, using the type-1
// empirical quantile as the tail threshold.
double empirical_es(const std::vector<double>& values, double s,
                    EsConvention convention = EsConvention::count_normalized);
double empirical_es(const VectorXd& values, double s,
                    EsConvention convention = EsConvention::count_normalized);

// Orthogonalized pseudo-response (1-s)^-1 (y - qhat) 1(y >= qhat) + qhat:
// its conditional mean is the level-s expected shortfall when qhat is the
// true level-s quantile, and it is first-order insensitive to qhat errors.
inline double pseudo_response(double y, double q_hat, double s) {
    return (y >= q_hat) ? (y - q_hat) / (1.0 - s) + q_hat : q_hat;
}

// Least squares of z on {intercept, (coords - center)} over one bin's
// members; returns the fitted intercept (the fitted value at `center`).
// Singular normal equations are resolved by the Moore-Penrose pseudo-inverse.
// coords is m x p (raw covariates, no intercept), center has length p.
double local_linear_es(const MatrixXd& coords, const VectorXd& z,
                       const VectorXd& center);

struct QuantileGrid {
    double tau = 0.0;
    double delta = 0.5;
    Eigen::Index J = 0;             // number of spacings; J+1 levels
    std::vector<double> levels;     // equally spaced on [tau-d*tau, tau+d*(1-tau)]
    Eigen::Index cutoff_index = 0;  // first level >= tau - 0.5*delta*tau

    double level(Eigen::Index j) const { return levels[static_cast<size_t>(j)]; }
    Eigen::Index size() const { return static_cast<Eigen::Index>(levels.size()); }
    // Index of the grid level closest to `s` (lowest index on ties).
    Eigen::Index nearest_index(double s) const;
};

// Build the truncated grid: J defaults to ceil(sqrt(70 n ln n)); levels span
// [tau - delta*tau, tau + delta*(1-tau)] inclusive. Both endpoints must lie
// strictly inside (0,1).
QuantileGrid make_quantile_grid(double tau, Eigen::Index n, double delta = 0.5,
                                std::optional<Eigen::Index> J_override = {});

enum class BackendKind { global_linear, global_bspline, bin_local_linear };

// Conditional-quantile backend fitted once per grid level (computed levels
// only). global-linear refits the full design per level; global-bspline uses
// the hinge expansion of continuous covariates (discrete covariates enter
// linearly); bin-local-linear fits {intercept, centered continuous coords}
// within each bin separately.
struct QuantileBackend {
    BackendKind kind = BackendKind::global_linear;
    // Shared across kinds: one coefficient vector per computed level.
    // global kinds: coef[j] applies to the backend design matrix;
    // bin-local: bin_coef[m][j] applies to {1, centered continuous coords}.
    std::vector<VectorXd> coef;
    std::vector<std::vector<VectorXd>> bin_coef;
    MatrixXd design;                  // global kinds: n x cols design matrix
    std::vector<Eigen::Index> local_cols; // bin-local: covariate indices used
    int degenerate_bins = 0;          // bin-local fits reduced to a quantile
    double tau_coef_level = -1.0;     // level of tau_coef when computed
    VectorXd tau_coef;                // optional extra fit at exactly tau

    // q-hat for every observation at computed level index j.
    VectorXd predict_level(const Dataset& data, const Partition& partition,
                           Eigen::Index j) const;
};

// Fit the backend for all levels j >= grid.cutoff_index. Levels are fitted
// sequentially with warm starts (previous level's coefficients). Solver
// failures are rethrown with the offending level identified. When
// `also_fit_tau` is set, one extra fit at exactly tau is stored.
QuantileBackend fit_quantile_backend(const Dataset& data, const Partition& partition,
                                     const QuantileGrid& grid, BackendKind kind,
                                     bool also_fit_tau = false);

struct ESProcessTable {
    QuantileGrid grid;
    MatrixXd values;          // M x (J+1): v-hat(s_j, X_(m)), rearranged rows
    VectorXd bin_weights;     // gamma per bin (Schur-complement cell mass)
    MatrixXd representatives; // M x (p+1)
};

// Build the per-bin ES process: for each computed level, pseudo-responses
// from the backend's q-hat feed a bin-wise local-linear fit centered at the
// bin representative; levels below the winsorization cutoff are filled with
// the first computed level's value; each row is then sorted ascending
// (monotone rearrangement).
ESProcessTable build_es_process(const Dataset& data, const Partition& partition,
                                const QuantileGrid& grid,
                                const QuantileBackend& backend,
                                int threads = 1);

} // namespace tailreg

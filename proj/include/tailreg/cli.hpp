// cli.hpp -- command-line front end building blocks: CSV loading with column
// roles, pairs-bootstrap standard errors, per-group tail-disparity contrasts,
// a name-to-estimator registry, and the command dispatcher used by the
// `tailreg` executable. Everything here is a plain library function so the
// whole surface is unit-testable without spawning processes.
#pragma once

#include "tailreg/dataset.hpp"
#include "tailreg/esqr.hpp"
#include "tailreg/simulate.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tailreg {

inline constexpr const char* kTailregVersion = "1.0.0";
inline constexpr int kManifestSchemaVersion = 1;

// ---------------------------------------------------------------------------
// CSV loading

struct ColumnRole {
    std::string name;          // header name in the file
    bool categorical = false;  // one-hot encode against `baseline`
    std::string baseline;      // required when categorical
};

struct CsvRoles {
    std::string response;               // exactly one response column
    std::vector<ColumnRole> covariates; // design columns, in order
    std::string group;                  // optional categorical group column
    bool fail_fast = false;             // error on a malformed cell instead of
                                        // dropping the row (drop is default)
};

struct CsvLoad {
    Dataset data;                          // intercept prepended, roles encoded
    std::vector<std::string> group_labels; // per kept row; empty if no group
    Eigen::Index rows_read = 0;            // data records in the file
    Eigen::Index rows_dropped = 0;         // records dropped as malformed
};

// Parse an RFC-4180-style CSV (header row required; quoted fields, embedded
// commas/newlines, and CRLF line ends supported). Numeric covariates become
// continuous columns; categorical ones expand to indicator columns, one per
// non-baseline level in sorted order, named "column=level". Rows with an
// unparseable numeric cell or an empty categorical/group cell are dropped and
// counted (or rejected outright under fail_fast, with the row and column
// named). Throws std::runtime_error for missing files or columns and for
// baselines never observed in the data.
CsvLoad load_csv(const std::string& path, const CsvRoles& roles);

// ---------------------------------------------------------------------------
// Bootstrap standard errors

struct BootstrapResult {
    VectorXd se;           // per-coefficient standard deviation across resamples
    int effective_B = 0;   // resamples whose fit succeeded
    int failures = 0;      // resamples excluded (estimator threw / non-finite)
};

// Nonparametric pairs bootstrap: B row-resamples with replacement, one child
// seed per resample, refit, per-coefficient standard deviation. Deterministic
// given the seed for any thread count (threads <= 0 uses the library default).
// Requires B >= 20; throws std::runtime_error if fewer than two resamples fit.
BootstrapResult bootstrap_se(const Dataset& data,
                             const std::function<VectorXd(const Dataset&)>& fit,
                             int B, std::uint64_t seed, int threads = 0);

// ---------------------------------------------------------------------------
// Group disparity

struct GroupFit {
    std::string group;
    Eigen::Index rows = 0;
    VectorXd beta;        // tail-regression coefficients for this group
    VectorXd se;          // pairs-bootstrap standard errors (empty if B = 0)
    int effective_B = 0;
};

struct DisparityResult {
    double tau = 0.0;
    bool lower_tail = false;
    GroupFit baseline;
    std::vector<GroupFit> groups; // non-baseline groups, sorted by name
    // Row g: groups[g].beta - baseline.beta. The disparity at covariate x is
    // the inner product of x with a contrast row.
    MatrixXd contrast;
    // Independent-groups combination sqrt(se_g^2 + se_baseline^2); groups are
    // disjoint row sets, so their fits are independent. Empty when B = 0.
    MatrixXd contrast_se;
};

// Fit the estimator separately per group and contrast every group against the
// named baseline. Lower-tail analyses negate the response, fit the upper tail
// at level 1 - tau, and negate the coefficients back. min_group_rows <= 0
// defaults to 2 * (p + 1); a smaller group is an error naming the group.
// Requires at least two groups and B = 0 (no bootstrap) or B >= 20.
DisparityResult fit_disparity(
    const Dataset& data, const std::vector<std::string>& group_labels,
    double tau, const std::function<VectorXd(const Dataset&, double)>& fit,
    const std::string& baseline, int B, std::uint64_t seed,
    bool lower_tail = false, Eigen::Index min_group_rows = 0, int threads = 0);

// ---------------------------------------------------------------------------
// Estimator registry

struct NamedEstimator {
    std::string name;
    std::function<FitResult(const Dataset&, double)> fit;
};

// Resolve an estimator name to a fitting closure. `base` supplies the stacked
// estimators' tuning (delta, grid size, binning, backend); tau is taken from
// the call, not from base. Names: esqr (discrete variant when every covariate
// is discrete, binned otherwise), esqr-discrete, esqr-binned, esqr-weighted,
// esqr-bspline (binned with the spline backend), ln (ES-on-representatives
// least squares), ts, tsls, qavg, wts. Unknown names throw
// std::invalid_argument listing the registry.
NamedEstimator make_estimator(const std::string& name, const EsqrConfig& base);
std::vector<std::string> known_estimators();

// McEstimator adapter for the Monte Carlo runner.
McEstimator make_mc_estimator(const std::string& name, const EsqrConfig& base);

// ---------------------------------------------------------------------------
// Command dispatcher: `tailreg fit|simulate|avar|counterexample ...`.
// Returns the process exit code: 0 when every requested estimator succeeded,
// 1 when any estimator failed, 2 for usage/configuration/runtime errors.
int run_cli(int argc, const char* const* argv);

} // namespace tailreg

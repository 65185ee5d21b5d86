// esqr.cpp -- the stacked-quantile-regression expected-shortfall estimators.
#include "tailreg/esqr.hpp"

#include "tailreg/mathutil.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace tailreg {

namespace {

void validate_config(const EsqrConfig& config, const char* who) {
    std::ostringstream msg;
    msg << who << ": ";
    if (!(config.tau > 0.0 && config.tau < 1.0)) {
        msg << "tau must lie in (0,1), got " << config.tau;
        throw std::invalid_argument(msg.str());
    }
    if (!(config.delta > 0.0 && config.delta <= 1.0)) {
        msg << "delta must lie in (0,1], got " << config.delta;
        throw std::invalid_argument(msg.str());
    }
    // Band endpoints tau - delta*tau and tau + delta*(1-tau) stay inside
    // (0,1) automatically for tau in (0,1) and delta in (0,1]; the grid
    // constructor re-checks them against floating-point edge cases.
}

// Format a covariate row (without the intercept) for error messages.
std::string describe_row(const Dataset& data, Eigen::Index i) {
    std::ostringstream out;
    out << "(";
    for (Eigen::Index j = 1; j < data.X.cols(); ++j) {
        if (j > 1) out << ", ";
        out << data.X(i, j);
    }
    out << ")";
    return out.str();
}

} // namespace

QrSolution solve_stacked(const MatrixXd& values, const MatrixXd& reps,
                         const VectorXd& weights, double tau,
                         const QrOptions& opts) {
    const Eigen::Index M = values.rows();
    const Eigen::Index L = values.cols();
    if (M == 0 || L == 0)
        throw std::invalid_argument("solve_stacked: empty ES process table");
    if (reps.rows() != M)
        throw std::invalid_argument(
            "solve_stacked: representative rows do not match the table rows");
    if (weights.size() != M)
        throw std::invalid_argument(
            "solve_stacked: one weight per table row is required");

    // Normalize to unit mean over positive weights so the solve is invariant
    // to a common positive rescaling of the bin weights.
    double sum = 0.0;
    Eigen::Index positive = 0;
    for (Eigen::Index m = 0; m < M; ++m) {
        const double w = weights(m);
        if (!std::isfinite(w) || w < 0.0)
            throw std::invalid_argument(
                "solve_stacked: weights must be finite and nonnegative");
        if (w > 0.0) {
            sum += w;
            ++positive;
        }
    }
    if (positive == 0)
        throw std::invalid_argument("solve_stacked: every weight is zero");
    const double mean = sum / static_cast<double>(positive);

    MatrixXd X(M * L, reps.cols());
    VectorXd y(M * L), w(M * L);
    Eigen::Index r = 0;
    for (Eigen::Index m = 0; m < M; ++m) {
        const double wm = weights(m) / mean;
        for (Eigen::Index j = 0; j < L; ++j, ++r) {
            X.row(r) = reps.row(m);
            y(r) = values(m, j);
            w(r) = wm;
        }
    }
    return fit_quantile_regression(X, y, tau, &w, opts);
}

EsqrArtifacts build_esqr_artifacts(const Dataset& data, const EsqrConfig& config,
                                   bool fit_tau_level) {
    validate_config(config, "build_esqr_artifacts");
    EsqrArtifacts art;
    art.grid = make_quantile_grid(config.tau, data.n(), config.delta, config.grid_J);
    PartitionConfig pc;
    pc.bins_constant = config.bins_constant;
    if (config.slices_override)
        pc.slices_override = static_cast<int>(*config.slices_override);
    art.partition = build_partition(data, pc);
    const bool want_tau =
        fit_tau_level && config.backend != BackendKind::bin_local_linear;
    art.backend =
        fit_quantile_backend(data, art.partition, art.grid, config.backend, want_tau);
    art.table = build_es_process(data, art.partition, art.grid, art.backend,
                                 config.threads);
    return art;
}

FitResult fit_esqr_discrete(const Dataset& data, const EsqrConfig& config) {
    validate_config(config, "fit_esqr_discrete");
    if (config.extra_weights)
        throw std::invalid_argument(
            "fit_esqr_discrete: extra weights are a binned-variant feature");
    const Eigen::Index n = data.n();
    const Eigen::Index d = data.X.cols();
    if (n < 2) throw std::invalid_argument("fit_esqr_discrete: need at least 2 rows");

    // Group observations by their exact covariate row.
    std::map<std::vector<double>, std::vector<Eigen::Index>> groups;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> key(static_cast<size_t>(d - 1));
        for (Eigen::Index j = 1; j < d; ++j) key[static_cast<size_t>(j - 1)] = data.X(i, j);
        groups[key].push_back(i);
    }
    const auto M = static_cast<Eigen::Index>(groups.size());
    MatrixXd reps(M, d);
    VectorXd weights(M);
    Eigen::Index m = 0;
    for (const auto& [key, rows] : groups) {
        if (rows.size() < 2) {
            std::ostringstream msg;
            msg << "fit_esqr_discrete: covariate value " << describe_row(data, rows[0])
                << " appears only once; every distinct value needs at least 2 "
                   "observations (use fit_esqr_binned for continuous designs)";
            throw std::invalid_argument(msg.str());
        }
        reps.row(m) = data.X.row(rows[0]);
        weights(m) = static_cast<double>(rows.size());
        ++m;
    }
    Eigen::ColPivHouseholderQR<MatrixXd> rank_check(reps);
    if (rank_check.rank() < d)
        throw std::invalid_argument(
            "fit_esqr_discrete: the distinct-covariate design is rank deficient");

    const QuantileGrid grid =
        make_quantile_grid(config.tau, n, config.delta, config.grid_J);

    // Empirical ES of each group at every grid level. Level-by-level calls
    // reuse the audited one-sample routine; group sizes are small by design.
    MatrixXd values(M, grid.size());
    m = 0;
    for (const auto& [key, rows] : groups) {
        std::vector<double> ys;
        ys.reserve(rows.size());
        for (const Eigen::Index i : rows) ys.push_back(data.y(i));
        for (Eigen::Index j = 0; j < grid.size(); ++j)
            values(m, j) = empirical_es(ys, grid.level(j), config.es_convention);
        ++m;
    }

    const QrSolution sol = solve_stacked(values, reps, weights, config.tau);
    FitResult out;
    out.method = "esqr-discrete";
    out.beta = sol.beta;
    out.objective = sol.objective;
    out.iterations = sol.iterations;
    out.bins_used = M;
    out.grid_points = grid.size();
    if (sol.used_fallback)
        out.warnings.push_back("stacked quantile solve used the smoothing fallback");
    return out;
}

namespace {

// Shared tail of the binned pipeline: weight assembly, sparse-bin drops, and
// the stacked solve. `extra` is an optional per-bin multiplier.
FitResult finish_binned(const EsqrConfig& config, const EsqrArtifacts& art,
                        const VectorXd* extra, const char* method,
                        std::vector<std::string> warnings) {
    const Eigen::Index M = art.partition.M();
    VectorXd weights = art.table.bin_weights;
    if (extra) {
        if (extra->size() != M) {
            std::ostringstream msg;
            msg << method << ": got " << extra->size() << " extra weights for " << M
                << " bins";
            throw std::invalid_argument(msg.str());
        }
        for (Eigen::Index m = 0; m < M; ++m) {
            const double w = (*extra)(m);
            if (!std::isfinite(w) || w < 0.0)
                throw std::invalid_argument(
                    std::string(method) +
                    ": extra weights must be finite and nonnegative");
            weights(m) *= w;
        }
    }

    // Drop bins that kept fewer than 2 observations: their ES rows rest on a
    // single response and carry no within-bin information.
    Eigen::Index dropped = 0;
    for (Eigen::Index m = 0; m < M; ++m) {
        if (art.partition.counts[static_cast<size_t>(m)] < 2) {
            weights(m) = 0.0;
            ++dropped;
        }
    }
    if (dropped > 0) {
        std::ostringstream msg;
        msg << "dropped " << dropped << " bin(s) with fewer than 2 observations";
        warnings.push_back(msg.str());
    }
    if ((weights.array() <= 0.0).all()) {
        std::ostringstream msg;
        msg << method << ": every bin weight is zero after drops; the partition "
            << "has no usable bins";
        throw std::invalid_argument(msg.str());
    }

    const QrSolution sol =
        solve_stacked(art.table.values, art.partition.rep_rows, weights, config.tau);
    FitResult out;
    out.method = method;
    out.beta = sol.beta;
    out.objective = sol.objective;
    out.iterations = sol.iterations;
    out.bins_used = M - dropped;
    out.grid_points = art.grid.size();
    out.warnings = std::move(warnings);
    for (const auto& wmsg : art.partition.warnings) out.warnings.push_back(wmsg);
    if (art.backend.degenerate_bins > 0)
        out.warnings.push_back(
            std::to_string(art.backend.degenerate_bins) +
            " bin-level quantile fit(s) fell back to the bin sample quantile");
    if (sol.used_fallback)
        out.warnings.push_back("stacked quantile solve used the smoothing fallback");
    return out;
}

} // namespace

FitResult fit_esqr_binned(const Dataset& data, const EsqrConfig& config) {
    validate_config(config, "fit_esqr_binned");
    const EsqrArtifacts art = build_esqr_artifacts(data, config);
    const VectorXd* extra = config.extra_weights ? &*config.extra_weights : nullptr;
    return finish_binned(config, art, extra, "esqr-binned", {});
}

FitResult fit_esqr_binned(const Dataset& data, const EsqrConfig& config,
                          const EsqrArtifacts& artifacts) {
    (void)data;
    validate_config(config, "fit_esqr_binned");
    if (artifacts.grid.tau != config.tau)
        throw std::invalid_argument(
            "fit_esqr_binned: artifacts were built for a different tau");
    const VectorXd* extra = config.extra_weights ? &*config.extra_weights : nullptr;
    return finish_binned(config, artifacts, extra, "esqr-binned", {});
}

PluginWeights plugin_optimal_weights(const Dataset& data, const EsqrConfig& config,
                                     const EsqrArtifacts& art) {
    const Eigen::Index M = art.partition.M();
    const Eigen::Index n = data.n();
    const double tau = config.tau;
    const bool local = config.backend == BackendKind::bin_local_linear;
    if (!local && art.backend.tau_coef.size() == 0)
        throw std::invalid_argument(
            "plugin_optimal_weights: artifacts were built without the tau-level "
            "quantile fit");

    PluginWeights pw;
    pw.omega.resize(M);
    pw.v_tau.resize(M);
    pw.q_tau.resize(M);
    pw.sigma2.resize(M);

    // Per-observation qhat(tau, x_i). Global backends evaluate their design
    // at tau_coef; the bin-local backend uses each bin's sample tau-quantile
    // (its local fit degenerates to that at the representative).
    VectorXd qhat_obs(n);
    if (!local) {
        qhat_obs = art.backend.design * art.backend.tau_coef;
    } else {
        std::vector<std::vector<double>> member_y(static_cast<size_t>(M));
        for (Eigen::Index i = 0; i < n; ++i)
            member_y[static_cast<size_t>(art.partition.member_index[static_cast<size_t>(i)])]
                .push_back(data.y(i));
        VectorXd bin_q(M);
        for (Eigen::Index m = 0; m < M; ++m)
            bin_q(m) = empirical_quantile(member_y[static_cast<size_t>(m)], tau);
        for (Eigen::Index i = 0; i < n; ++i)
            qhat_obs(i) = bin_q(art.partition.member_index[static_cast<size_t>(i)]);
    }

    const Eigen::Index j_tau = art.grid.nearest_index(tau);
    std::vector<std::vector<double>> tail_resid(static_cast<size_t>(M));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r = data.y(i) - qhat_obs(i);
        if (r >= 0.0)
            tail_resid[static_cast<size_t>(art.partition.member_index[static_cast<size_t>(i)])]
                .push_back(r);
    }

    // A bin's spread v - q scales with the response dispersion; spreads at
    // rounding scale (noiseless data) would otherwise explode omega through
    // the sigma^-2 factor, so they are treated as degenerate.
    std::vector<double> yv(data.y.data(), data.y.data() + n);
    const double spread_floor =
        1e-8 * std::sqrt(std::max(sample_variance(yv), 0.0));

    const double nan = std::numeric_limits<double>::quiet_NaN();
    VectorXd raw(M);
    for (Eigen::Index m = 0; m < M; ++m) {
        pw.v_tau(m) = art.table.values(m, j_tau);
        pw.q_tau(m) = local
                          ? qhat_obs(art.partition.representatives[static_cast<size_t>(m)])
                          : art.backend.design.row(
                                art.partition.representatives[static_cast<size_t>(m)]) *
                                art.backend.tau_coef;
        const auto& tail = tail_resid[static_cast<size_t>(m)];
        const double spread = pw.v_tau(m) - pw.q_tau(m);
        if (tail.size() < 2 || !(spread > spread_floor)) {
            pw.sigma2(m) = nan;
            raw(m) = nan;
            continue;
        }
        const double m1 = sample_variance(tail);
        pw.sigma2(m) = (m1 + tau * spread * spread) / (1.0 - tau);
        raw(m) = (pw.sigma2(m) > 0.0) ? spread / pw.sigma2(m) : nan;
    }

    std::vector<double> usable;
    for (Eigen::Index m = 0; m < M; ++m)
        if (std::isfinite(raw(m)) && raw(m) > 0.0) usable.push_back(raw(m));
    // No bin produced a usable plug-in (e.g. noiseless data, where every
    // spread is zero): floor everything at 1, which reduces the weighted
    // solve to the unweighted binned one.
    pw.floor = usable.empty()
                   ? 1.0
                   : config.weight_floor_scale * empirical_quantile(usable, 0.5);
    for (Eigen::Index m = 0; m < M; ++m) {
        if (std::isfinite(raw(m)) && raw(m) >= pw.floor) {
            pw.omega(m) = raw(m);
        } else {
            pw.omega(m) = pw.floor;
            ++pw.floored;
        }
    }
    return pw;
}

FitResult fit_esqr_weighted(const Dataset& data, const EsqrConfig& config,
                            const EsqrArtifacts& artifacts) {
    validate_config(config, "fit_esqr_weighted");
    if (config.extra_weights)
        throw std::invalid_argument(
            "fit_esqr_weighted: the weighted variant computes its own weights; "
            "pass preset weights to fit_esqr_binned instead");
    if (artifacts.grid.tau != config.tau)
        throw std::invalid_argument(
            "fit_esqr_weighted: artifacts were built for a different tau");
    const PluginWeights pw = plugin_optimal_weights(data, config, artifacts);
    std::vector<std::string> warnings;
    if (pw.floored > 0)
        warnings.push_back(std::to_string(pw.floored) +
                           " plug-in weight(s) clipped at the floor");
    return finish_binned(config, artifacts, &pw.omega, "esqr-weighted",
                         std::move(warnings));
}

FitResult fit_esqr_weighted(const Dataset& data, const EsqrConfig& config) {
    validate_config(config, "fit_esqr_weighted");
    const EsqrArtifacts art = build_esqr_artifacts(data, config, true);
    return fit_esqr_weighted(data, config, art);
}

} // namespace tailreg

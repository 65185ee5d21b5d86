// tail.cpp -- empirical ES, quantile grid, backends, and the ES process.
#include "tailreg/tail.hpp"

#include "tailreg/mathutil.hpp"
#include "tailreg/parallel.hpp"
#include "tailreg/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tailreg {

double empirical_es(const std::vector<double>& values, double s,
                    EsConvention convention) {
    if (values.empty()) throw std::invalid_argument("empirical_es: empty sample");
    const double q = empirical_quantile(values, s);
    double tail_sum = 0.0;
    std::size_t tail_count = 0;
    for (const double v : values) {
        if (v >= q) {
            tail_sum += v;
            ++tail_count;
        }
    }
    if (tail_count == 0) throw std::runtime_error("empirical_es: empty tail set");
    if (convention == EsConvention::count_normalized)
        return tail_sum / static_cast<double>(tail_count);
    return tail_sum / ((1.0 - s) * static_cast<double>(values.size()));
}

double empirical_es(const VectorXd& values, double s, EsConvention convention) {
    return empirical_es(
        std::vector<double>(values.data(), values.data() + values.size()), s,
        convention);
}

double local_linear_es(const MatrixXd& coords, const VectorXd& z,
                       const VectorXd& center) {
    const Eigen::Index m = coords.rows();
    const Eigen::Index p = coords.cols();
    if (m == 0) throw std::invalid_argument("local_linear_es: empty bin");
    if (z.size() != m || center.size() != p)
        throw std::invalid_argument("local_linear_es: size mismatch");

    // Normal equations of z ~ {1, coords - center}; the pseudo-inverse keeps
    // degenerate directions (constant coordinates within the bin) harmless.
    MatrixXd G = MatrixXd::Zero(p + 1, p + 1);
    VectorXd rhs = VectorXd::Zero(p + 1);
    VectorXd row(p + 1);
    for (Eigen::Index i = 0; i < m; ++i) {
        row(0) = 1.0;
        row.tail(p) = coords.row(i).transpose() - center;
        G.selfadjointView<Eigen::Lower>().rankUpdate(row, 1.0);
        rhs += row * z(i);
    }
    const MatrixXd Gfull = G.selfadjointView<Eigen::Lower>();
    return (pseudo_inverse(Gfull) * rhs)(0);
}

Eigen::Index QuantileGrid::nearest_index(double s) const {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < size(); ++j) {
        const double d = std::abs(levels[static_cast<size_t>(j)] - s);
        if (d < best_d - 1e-15) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

QuantileGrid make_quantile_grid(double tau, Eigen::Index n, double delta,
                                std::optional<Eigen::Index> J_override) {
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("make_quantile_grid: tau must lie in (0,1)");
    if (!(delta > 0.0 && delta <= 1.0))
        throw std::invalid_argument("make_quantile_grid: delta must lie in (0,1]");
    QuantileGrid grid;
    grid.tau = tau;
    grid.delta = delta;
    if (J_override) {
        grid.J = std::max<Eigen::Index>(1, *J_override);
    } else {
        if (n < 1) throw std::invalid_argument("make_quantile_grid: n must be positive");
        const double nn = static_cast<double>(n);
        const double raw = std::sqrt(70.0 * nn * std::log(nn));
        grid.J = std::max<Eigen::Index>(
            1, static_cast<Eigen::Index>(std::ceil(raw - 1e-9)));
    }
    const double lo = tau - delta * tau;
    const double hi = tau + delta * (1.0 - tau);
    if (!(lo > 0.0 && hi < 1.0))
        throw std::invalid_argument(
            "make_quantile_grid: grid endpoints must lie strictly inside (0,1)");
    grid.levels.resize(static_cast<size_t>(grid.J) + 1);
    for (Eigen::Index j = 0; j <= grid.J; ++j)
        grid.levels[static_cast<size_t>(j)] =
            lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(grid.J);
    const double cutoff = tau - 0.5 * delta * tau;
    Eigen::Index j0 = grid.J;
    for (Eigen::Index j = 0; j <= grid.J; ++j) {
        if (grid.levels[static_cast<size_t>(j)] >= cutoff - 1e-12) {
            j0 = j;
            break;
        }
    }
    grid.cutoff_index = j0;
    return grid;
}

namespace {

// Mixed backend design for the hinge expansion: intercept, then per
// continuous covariate {x, (x-k1)+, (x-k2)+}, discrete covariates as-is.
MatrixXd bspline_backend_design(const Dataset& data, const Partition& partition) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    std::vector<Eigen::Index> cont;
    for (Eigen::Index j = 0; j < p; ++j)
        if (partition.effective_kinds[static_cast<size_t>(j)] == ColumnKind::continuous)
            cont.push_back(j);

    Eigen::Index cols = 1 + p + 2 * static_cast<Eigen::Index>(cont.size());
    MatrixXd B(n, cols);
    B.col(0).setOnes();
    Eigen::Index c = 1;
    for (Eigen::Index j = 0; j < p; ++j) {
        const VectorXd col = data.X.col(j + 1);
        B.col(c++) = col;
        if (partition.effective_kinds[static_cast<size_t>(j)] == ColumnKind::continuous) {
            const std::vector<double> v(col.data(), col.data() + n);
            const double k1 = empirical_quantile(v, 1.0 / 3.0);
            const double k2 = empirical_quantile(v, 2.0 / 3.0);
            if (!(k1 < k2))
                throw std::invalid_argument(
                    "quantile backend: hinge knots must satisfy k1 < k2 for covariate " +
                    data.covariate_name(j));
            B.col(c++) = (col.array() - k1).cwiseMax(0.0);
            B.col(c++) = (col.array() - k2).cwiseMax(0.0);
        }
    }
    return B;
}

} // namespace

VectorXd QuantileBackend::predict_level(const Dataset& data,
                                        const Partition& partition,
                                        Eigen::Index j) const {
    if (kind != BackendKind::bin_local_linear) {
        const VectorXd& b = coef[static_cast<size_t>(j)];
        if (b.size() == 0)
            throw std::logic_error("quantile backend: level was not computed");
        return design * b;
    }
    const Eigen::Index n = data.n();
    VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index m = partition.member_index[static_cast<size_t>(i)];
        const VectorXd& b = bin_coef[static_cast<size_t>(m)][static_cast<size_t>(j)];
        double q = b(0);
        for (std::size_t c = 0; c < local_cols.size(); ++c) {
            const Eigen::Index col = local_cols[c];
            q += b(static_cast<Eigen::Index>(c) + 1) *
                 (data.X(i, col + 1) - partition.rep_rows(m, col + 1));
        }
        out(i) = q;
    }
    return out;
}

QuantileBackend fit_quantile_backend(const Dataset& data, const Partition& partition,
                                     const QuantileGrid& grid, BackendKind kind,
                                     bool also_fit_tau) {
    QuantileBackend backend;
    backend.kind = kind;
    const Eigen::Index Jp1 = grid.size();

    QrWarmState level_state; // interior-point state carried across levels
    auto fit_level_global = [&](double s, const VectorXd* warm) {
        QrOptions opts;
        opts.warm_start = warm;
        // The design is fixed across levels; the first (cold) call validates
        // its rank, so warm-started re-solves skip the validation QR and the
        // shared interior-point state hands each solve the previous level's
        // active set.
        opts.skip_rank_check = warm != nullptr;
        opts.warm_state = &level_state;
        try {
            return fit_quantile_regression(backend.design, data.y, s, nullptr, opts);
        } catch (const std::exception& e) {
            throw std::runtime_error("quantile backend failed at level s=" +
                                     std::to_string(s) + ": " + e.what());
        }
    };

    if (kind == BackendKind::global_linear || kind == BackendKind::global_bspline) {
        backend.design = (kind == BackendKind::global_linear)
                             ? data.X
                             : bspline_backend_design(data, partition);
        backend.coef.resize(static_cast<size_t>(Jp1));
        const VectorXd* warm = nullptr;
        for (Eigen::Index j = grid.cutoff_index; j < Jp1; ++j) {
            const auto sol = fit_level_global(grid.level(j), warm);
            backend.coef[static_cast<size_t>(j)] = sol.beta;
            warm = &backend.coef[static_cast<size_t>(j)];
        }
        if (also_fit_tau) {
            const VectorXd* w0 =
                backend.coef[static_cast<size_t>(grid.cutoff_index)].size() > 0
                    ? &backend.coef[static_cast<size_t>(grid.cutoff_index)]
                    : nullptr;
            backend.tau_coef = fit_level_global(grid.tau, w0).beta;
            backend.tau_coef_level = grid.tau;
        }
        return backend;
    }

    // bin-local-linear: {intercept, centered continuous coords} within each
    // bin. Bins without enough members (or without within-bin variation) for
    // the local design fall back to the bin sample quantile.
    if (also_fit_tau)
        throw std::invalid_argument(
            "fit_quantile_backend: tau-level fit is only available for global backends");
    for (Eigen::Index j = 0; j < data.p(); ++j)
        if (partition.effective_kinds[static_cast<size_t>(j)] == ColumnKind::continuous)
            backend.local_cols.push_back(j);
    const auto M = partition.M();
    std::vector<std::vector<Eigen::Index>> members(static_cast<size_t>(M));
    for (Eigen::Index i = 0; i < data.n(); ++i)
        members[static_cast<size_t>(partition.member_index[static_cast<size_t>(i)])]
            .push_back(i);

    const Eigen::Index d = static_cast<Eigen::Index>(backend.local_cols.size());
    backend.bin_coef.assign(static_cast<size_t>(M),
                            std::vector<VectorXd>(static_cast<size_t>(Jp1)));
    for (Eigen::Index m = 0; m < M; ++m) {
        const auto& rows = members[static_cast<size_t>(m)];
        const auto nm = static_cast<Eigen::Index>(rows.size());
        MatrixXd Xl(nm, d + 1);
        VectorXd yl(nm);
        for (Eigen::Index r = 0; r < nm; ++r) {
            Xl(r, 0) = 1.0;
            for (Eigen::Index c = 0; c < d; ++c) {
                const Eigen::Index col = backend.local_cols[static_cast<size_t>(c)];
                Xl(r, c + 1) = data.X(rows[static_cast<size_t>(r)], col + 1) -
                               partition.rep_rows(m, col + 1);
            }
            yl(r) = data.y(rows[static_cast<size_t>(r)]);
        }
        // Identifiability of the local design: enough rows and full rank.
        bool full_rank = nm >= d + 1;
        if (full_rank && d > 0) {
            Eigen::ColPivHouseholderQR<MatrixXd> qr(Xl);
            full_rank = qr.rank() == d + 1;
        }
        std::vector<double> ysorted;
        if (!full_rank) {
            ++backend.degenerate_bins;
            ysorted.assign(yl.data(), yl.data() + nm);
        }
        const VectorXd* warm = nullptr;
        QrWarmState bin_state; // per-bin design: state valid across levels only
        for (Eigen::Index j = grid.cutoff_index; j < Jp1; ++j) {
            const double s = grid.level(j);
            VectorXd b = VectorXd::Zero(d + 1);
            if (full_rank) {
                QrOptions opts;
                opts.warm_start = warm;
                opts.skip_rank_check = warm != nullptr; // fixed local design
                opts.warm_state = &bin_state;
                try {
                    b = fit_quantile_regression(Xl, yl, s, nullptr, opts).beta;
                } catch (const std::exception& e) {
                    throw std::runtime_error("quantile backend failed at level s=" +
                                             std::to_string(s) + " (bin " +
                                             std::to_string(m) + "): " + e.what());
                }
            } else {
                b(0) = empirical_quantile(ysorted, s);
            }
            backend.bin_coef[static_cast<size_t>(m)][static_cast<size_t>(j)] = b;
            warm = &backend.bin_coef[static_cast<size_t>(m)][static_cast<size_t>(j)];
        }
    }
    return backend;
}

ESProcessTable build_es_process(const Dataset& data, const Partition& partition,
                                const QuantileGrid& grid,
                                const QuantileBackend& backend, int threads) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    const Eigen::Index M = partition.M();
    const Eigen::Index Jp1 = grid.size();

    ESProcessTable table;
    table.grid = grid;
    table.values.resize(M, Jp1);
    table.representatives = partition.rep_rows;

    const auto moments = bin_moments(partition, data);
    table.bin_weights.resize(M);
    for (Eigen::Index m = 0; m < M; ++m)
        table.bin_weights(m) = moments[static_cast<size_t>(m)].gamma;

    // Per-bin members and the level-independent part of the local-linear
    // normal equations: G = sum [1; d_i][1; d_i]' depends only on coords, so
    // its pseudo-inverse is computed once per bin; only the right-hand side
    // changes across levels.
    std::vector<std::vector<Eigen::Index>> members(static_cast<size_t>(M));
    for (Eigen::Index i = 0; i < n; ++i)
        members[static_cast<size_t>(partition.member_index[static_cast<size_t>(i)])]
            .push_back(i);
    std::vector<MatrixXd> Ginv(static_cast<size_t>(M));
    std::vector<MatrixXd> devs(static_cast<size_t>(M)); // members x p deviations
    for (Eigen::Index m = 0; m < M; ++m) {
        const auto& rows = members[static_cast<size_t>(m)];
        const auto nm = static_cast<Eigen::Index>(rows.size());
        MatrixXd dd(nm, p);
        MatrixXd G = MatrixXd::Zero(p + 1, p + 1);
        VectorXd row(p + 1);
        for (Eigen::Index r = 0; r < nm; ++r) {
            dd.row(r) = data.X.row(rows[static_cast<size_t>(r)]).segment(1, p) -
                        partition.rep_rows.row(m).segment(1, p);
            row(0) = 1.0;
            row.tail(p) = dd.row(r).transpose();
            G.selfadjointView<Eigen::Lower>().rankUpdate(row, 1.0);
        }
        devs[static_cast<size_t>(m)] = dd;
        Ginv[static_cast<size_t>(m)] = pseudo_inverse(G.selfadjointView<Eigen::Lower>());
    }

    const Eigen::Index computed = Jp1 - grid.cutoff_index;
    parallel_for(
        static_cast<std::size_t>(computed),
        [&](std::size_t item) {
            const Eigen::Index j = grid.cutoff_index + static_cast<Eigen::Index>(item);
            const double s = grid.level(j);
            const VectorXd qhat = backend.predict_level(data, partition, j);
            VectorXd rhs(p + 1), theta(p + 1);
            for (Eigen::Index m = 0; m < M; ++m) {
                const auto& rows = members[static_cast<size_t>(m)];
                const MatrixXd& dd = devs[static_cast<size_t>(m)];
                rhs.setZero();
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    const Eigen::Index i = rows[r];
                    const double z = pseudo_response(data.y(i), qhat(i), s);
                    rhs(0) += z;
                    rhs.tail(p) += dd.row(static_cast<Eigen::Index>(r)).transpose() * z;
                }
                theta.noalias() = Ginv[static_cast<size_t>(m)] * rhs;
                table.values(m, j) = theta(0);
            }
        },
        threads);

    // Winsorization fill below the cutoff, then monotone rearrangement.
    for (Eigen::Index m = 0; m < M; ++m) {
        for (Eigen::Index j = 0; j < grid.cutoff_index; ++j)
            table.values(m, j) = table.values(m, grid.cutoff_index);
        // The matrix is column-major; sort each row through a dense copy.
        VectorXd rowvals = table.values.row(m);
        std::sort(rowvals.data(), rowvals.data() + Jp1);
        table.values.row(m) = rowvals.transpose();
    }
    if (!table.values.allFinite())
        throw std::runtime_error("build_es_process: non-finite table entries");
    return table;
}

} // namespace tailreg

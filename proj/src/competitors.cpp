// competitors.cpp -- comparison estimators built from quantile-regression
// first steps and least-squares second steps.
#include "tailreg/competitors.hpp"

#include "tailreg/mathutil.hpp"
#include "tailreg/quantile.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace tailreg {

namespace {

// Least squares of z on X, with an optional per-row weight vector applied as
// sqrt(w) row scaling. Throws on rank deficiency.
VectorXd least_squares(const MatrixXd& X, const VectorXd& z, const VectorXd* w,
                       const char* who) {
    MatrixXd A = X;
    VectorXd b = z;
    if (w) {
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            const double s = std::sqrt((*w)(i));
            A.row(i) *= s;
            b(i) *= s;
        }
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(A);
    if (qr.rank() < A.cols())
        throw std::invalid_argument(std::string(who) + ": singular design");
    return qr.solve(b);
}

double squared_error(const MatrixXd& X, const VectorXd& z, const VectorXd& beta,
                     const VectorXd* w) {
    const VectorXd r = z - X * beta;
    double total = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i)
        total += (w ? (*w)(i) : 1.0) * r(i) * r(i);
    return total;
}

} // namespace

FitResult fit_linearization(const MatrixXd& reps, const VectorXd& es_at_tau) {
    if (reps.rows() != es_at_tau.size())
        throw std::invalid_argument(
            "fit_linearization: one ES value per representative row is required");
    if (reps.rows() < reps.cols())
        throw std::invalid_argument(
            "fit_linearization: fewer rows than coefficients");
    FitResult out;
    out.method = "ln";
    out.beta = least_squares(reps, es_at_tau, nullptr, "fit_linearization");
    out.objective = squared_error(reps, es_at_tau, out.beta, nullptr);
    out.bins_used = reps.rows();
    return out;
}

FitResult fit_linearization(const Dataset& data, const EsqrArtifacts& art) {
    (void)data;
    const Eigen::Index j = art.grid.nearest_index(art.grid.tau);
    FitResult out = fit_linearization(art.partition.rep_rows,
                                      art.table.values.col(j));
    out.grid_points = art.grid.size();
    return out;
}

FitResult fit_linearization_discrete(const Dataset& data, double tau,
                                     EsConvention convention) {
    const Eigen::Index n = data.n();
    const Eigen::Index d = data.X.cols();
    std::map<std::vector<double>, std::vector<Eigen::Index>> groups;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> key(static_cast<size_t>(d - 1));
        for (Eigen::Index j = 1; j < d; ++j) key[static_cast<size_t>(j - 1)] = data.X(i, j);
        groups[key].push_back(i);
    }
    const auto M = static_cast<Eigen::Index>(groups.size());
    MatrixXd reps(M, d);
    VectorXd es(M);
    Eigen::Index m = 0;
    for (const auto& [key, rows] : groups) {
        if (rows.size() < 2)
            throw std::invalid_argument(
                "fit_linearization_discrete: a covariate value appears only once");
        std::vector<double> ys;
        ys.reserve(rows.size());
        for (const Eigen::Index i : rows) ys.push_back(data.y(i));
        reps.row(m) = data.X.row(rows[0]);
        es(m) = empirical_es(ys, tau, convention);
        ++m;
    }
    FitResult out = fit_linearization(reps, es);
    out.method = "ln";
    return out;
}

FitResult fit_two_step(const Dataset& data, double tau, const VectorXd& eta) {
    const Eigen::Index n = data.n();
    VectorXd z(n);
    const VectorXd qhat = data.X * eta;
    for (Eigen::Index i = 0; i < n; ++i)
        z(i) = pseudo_response(data.y(i), qhat(i), tau);
    FitResult out;
    out.method = "ts";
    out.beta = least_squares(data.X, z, nullptr, "fit_two_step");
    out.objective = squared_error(data.X, z, out.beta, nullptr);
    return out;
}

FitResult fit_two_step(const Dataset& data, double tau) {
    const QrSolution eta = fit_quantile_regression(data.X, data.y, tau);
    FitResult out = fit_two_step(data, tau, eta.beta);
    out.iterations = eta.iterations;
    return out;
}

FitResult fit_tsls(const Dataset& data, double /*tau*/, const VectorXd& eta) {
    const Eigen::Index n = data.n();
    const VectorXd qhat = data.X * eta;
    std::vector<Eigen::Index> tail;
    for (Eigen::Index i = 0; i < n; ++i)
        if (data.y(i) >= qhat(i)) tail.push_back(i);
    if (static_cast<Eigen::Index>(tail.size()) < data.X.cols()) {
        std::ostringstream msg;
        msg << "fit_tsls: too few tail observations (" << tail.size() << " above the "
            << "fitted quantile plane, need at least " << data.X.cols() << ")";
        throw std::invalid_argument(msg.str());
    }
    MatrixXd Xt(static_cast<Eigen::Index>(tail.size()), data.X.cols());
    VectorXd yt(static_cast<Eigen::Index>(tail.size()));
    for (size_t r = 0; r < tail.size(); ++r) {
        Xt.row(static_cast<Eigen::Index>(r)) = data.X.row(tail[r]);
        yt(static_cast<Eigen::Index>(r)) = data.y(tail[r]);
    }
    FitResult out;
    out.method = "tsls";
    out.beta = least_squares(Xt, yt, nullptr, "fit_tsls");
    out.objective = squared_error(Xt, yt, out.beta, nullptr);
    return out;
}

FitResult fit_tsls(const Dataset& data, double tau) {
    const QrSolution eta = fit_quantile_regression(data.X, data.y, tau);
    FitResult out = fit_tsls(data, tau, eta.beta);
    out.iterations = eta.iterations;
    return out;
}

FitResult fit_quantile_average(const Dataset& data, double tau, double step) {
    if (!(step > 0.0))
        throw std::invalid_argument("fit_quantile_average: step must be positive");
    // Levels tau, tau+step, ... strictly below the 0.999 exclusion cutoff.
    const auto count = static_cast<Eigen::Index>(
        std::floor((0.999 - tau) / step - 1e-9)) + 1;
    if (count < 2)
        throw std::invalid_argument(
            "fit_quantile_average: the level grid needs at least 2 levels below "
            "0.999; lower tau or the step size");
    FitResult out;
    out.method = "qavg";
    out.beta = VectorXd::Zero(data.X.cols());
    out.grid_points = count;
    QrOptions opts;
    VectorXd warm;
    for (Eigen::Index k = 0; k < count; ++k) {
        const double level = tau + static_cast<double>(k) * step;
        opts.warm_start = (warm.size() > 0) ? &warm : nullptr;
        QrSolution sol;
        try {
            sol = fit_quantile_regression(data.X, data.y, level, nullptr, opts);
        } catch (const std::exception& e) {
            std::ostringstream msg;
            msg << "fit_quantile_average: quantile fit failed at level " << level
                << ": " << e.what();
            throw std::runtime_error(msg.str());
        }
        warm = sol.beta;
        out.beta += sol.beta;
        out.iterations += sol.iterations;
    }
    out.beta /= static_cast<double>(count);
    return out;
}

FitResult fit_weighted_two_step(const Dataset& data, double tau,
                                double floor_scale) {
    if (!(floor_scale > 0.0))
        throw std::invalid_argument(
            "fit_weighted_two_step: floor scale must be positive");
    const Eigen::Index n = data.n();
    const QrSolution eta = fit_quantile_regression(data.X, data.y, tau);
    const FitResult ts = fit_two_step(data, tau, eta.beta);

    std::vector<double> yv(data.y.data(), data.y.data() + n);
    double floor = floor_scale * std::sqrt(std::max(sample_variance(yv), 0.0));
    // Degenerate response scale (all y equal): any common floor yields
    // uniform weights, so pick 1 rather than divide by zero.
    if (!(floor > 0.0)) floor = 1.0;
    const VectorXd spread = data.X * (ts.beta - eta.beta);
    VectorXd w(n), z(n);
    const VectorXd qhat = data.X * eta.beta;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = std::max(spread(i), floor);
        w(i) = 1.0 / (d * d);
        z(i) = pseudo_response(data.y(i), qhat(i), tau);
    }
    FitResult out;
    out.method = "wts";
    out.beta = least_squares(data.X, z, &w, "fit_weighted_two_step");
    out.objective = squared_error(data.X, z, out.beta, &w);
    out.iterations = eta.iterations;
    return out;
}

} // namespace tailreg

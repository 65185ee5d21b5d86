// quantile.cpp -- empirical quantiles and the interior-point quantile
// regression solver.
#include "tailreg/quantile.hpp"

#include "tailreg/mathutil.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace tailreg {

double check_loss_sum(const VectorXd& residuals, double s, const VectorXd* weights) {
    std::vector<double> terms(static_cast<std::size_t>(residuals.size()));
    for (Eigen::Index i = 0; i < residuals.size(); ++i) {
        double t = check_loss(residuals(i), s);
        if (weights) t *= (*weights)(i);
        terms[static_cast<std::size_t>(i)] = t;
    }
    return pairwise_sum(terms);
}

double empirical_quantile(const std::vector<double>& values, double s) {
    if (values.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
    if (!(s > 0.0 && s < 1.0))
        throw std::invalid_argument("empirical_quantile: level must lie in (0,1)");
    const double n = static_cast<double>(values.size());
    // ceil(n*s) with a tiny backoff so levels meant to land on an integer
    // index are not bumped to the next order statistic by rounding.
    auto k = static_cast<std::ptrdiff_t>(std::ceil(n * s - 1e-9));
    k = std::clamp<std::ptrdiff_t>(k, 1, static_cast<std::ptrdiff_t>(values.size()));
    std::vector<double> work = values;
    std::nth_element(work.begin(), work.begin() + (k - 1), work.end());
    return work[static_cast<std::size_t>(k - 1)];
}

double empirical_quantile(const VectorXd& values, double s) {
    return empirical_quantile(
        std::vector<double>(values.data(), values.data() + values.size()), s);
}

namespace {

// Largest step alpha <= cap with v + alpha*sign*dv > 0 componentwise. The
// sign parameter lets callers test a negated direction without materializing
// a temporary vector.
double max_step(const VectorXd& v, const VectorXd& dv, double sign, double cap) {
    double alpha = cap;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double d = sign * dv(i);
        if (d < 0.0) alpha = std::min(alpha, -v(i) / d);
    }
    return alpha;
}

// Smoothed-loss fallback (majorize-minimize): repeatedly solve the weighted
// least-squares surrogate
//   [sum x x' / d_i] b = sum x y / d_i - (2s-1) sum x,   d_i = eps + |r_i|,
// shrinking eps. Slow but robust; only used when the interior point stalls.
VectorXd mm_descent(const MatrixXd& X, const VectorXd& y, double s,
                    VectorXd b, int sweeps) {
    const Eigen::Index n = X.rows();
    const Eigen::Index k = X.cols();
    VectorXd r = y - X * b;
    double scale = std::max(1.0, y.cwiseAbs().maxCoeff());
    double eps = 1e-3 * scale;
    VectorXd best_b = b;
    double best_obj = check_loss_sum(r, s);
    const VectorXd drift = (2.0 * s - 1.0) * X.colwise().sum().transpose();
    VectorXd d(n), dy(n), rhs(k);
    MatrixXd W(n, k), G(k, k);
    for (int it = 0; it < sweeps; ++it) {
        d.array() = (eps + r.array().abs()).inverse();
        W.noalias() = d.asDiagonal() * X;
        G.noalias() = X.transpose() * W;
        dy.array() = y.array() * d.array();
        rhs.noalias() = X.transpose() * dy;
        rhs -= drift;
        Eigen::LDLT<MatrixXd> ldlt(G);

        if (ldlt.info() != Eigen::Success) break;
        b = ldlt.solve(rhs);
        if (!b.allFinite()) { b = best_b; break; }
        r = y;
        r.noalias() -= X * b;
        const double obj = check_loss_sum(r, s);
        if (obj < best_obj) { best_obj = obj; best_b = b; }
        if (it % 10 == 9) eps = std::max(eps * 0.5, 1e-12 * scale);
    }
    return best_b;
}

} // namespace

QrSolution fit_quantile_regression(const MatrixXd& X, const VectorXd& y, double s,
                                   const VectorXd* weights, const QrOptions& opts) {
    if (X.rows() == 0 || X.cols() == 0)
        throw std::invalid_argument("fit_quantile_regression: empty design");
    if (X.rows() != y.size())
        throw std::invalid_argument("fit_quantile_regression: design/response size mismatch");
    if (!(s > 0.0 && s < 1.0))
        throw std::invalid_argument("fit_quantile_regression: level must lie in (0,1)");

    // Apply weights by row scaling; rho_s is positively homogeneous, so
    // minimizing sum w_i rho_s(y_i - x_i'b) equals minimizing the unweighted
    // loss on rows (w_i x_i, w_i y_i) with zero-weight rows removed.
    MatrixXd Xw;
    VectorXd yw;
    if (weights) {
        if (weights->size() != y.size())
            throw std::invalid_argument("fit_quantile_regression: weight size mismatch");
        Eigen::Index kept = 0;
        for (Eigen::Index i = 0; i < weights->size(); ++i) {
            const double w = (*weights)(i);
            if (!std::isfinite(w) || w < 0.0)
                throw std::invalid_argument(
                    "fit_quantile_regression: weights must be finite and nonnegative");
            if (w > 0.0) ++kept;
        }
        if (kept == 0)
            throw std::invalid_argument("fit_quantile_regression: all weights are zero");
        Xw.resize(kept, X.cols());
        yw.resize(kept);
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            const double w = (*weights)(i);
            if (w > 0.0) {
                Xw.row(r) = w * X.row(i);
                yw(r) = w * y(i);
                ++r;
            }
        }
    } else {
        Xw = X;
        yw = y;
    }

    const Eigen::Index n = Xw.rows();
    const Eigen::Index k = Xw.cols();
    if (n < k)
        throw std::invalid_argument(
            "fit_quantile_regression: singular design (fewer rows than columns)");

    // Rank check; its factorization doubles as the least-squares starting
    // point on cold starts. Warm-started re-solves of an already-validated
    // design may skip it (see QrOptions::skip_rank_check).
    const bool have_warm = opts.warm_start && opts.warm_start->size() == k;
    VectorXd b;
    if (have_warm && opts.skip_rank_check) {
        b = *opts.warm_start;
    } else {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(Xw);
        if (qr.rank() < k)
            throw std::invalid_argument(
                "fit_quantile_regression: singular design (rank-deficient on "
                "positive-weight rows)");
        b = have_warm ? *opts.warm_start : VectorXd(qr.solve(yw));
    }

    // Interior-point state. a solves the bounded dual LP; s_slack = 1 - a;
    // (b, z, w) are the dual multipliers. The start is primal/dual feasible
    // up to complementarity: X'a = c holds exactly at a = (1-s)1 and
    // w - z = y - Xb holds exactly by construction.
    const VectorXd c = (1.0 - s) * (Xw.transpose() * VectorXd::Ones(n));
    const double y_sum = yw.sum();
    VectorXd resid = yw;
    resid.noalias() -= Xw * b;
    const double rscale = std::max(1.0, resid.cwiseAbs().maxCoeff());
    const double eps0 = 1e-4 * rscale;

    QrWarmState* const state = opts.warm_state;
    const bool have_state =
        state && state->s > 0.0 && state->s < 1.0 && state->a.size() == n;
    VectorXd a(n), s_slack(n), w(n), z(n);

    QrSolution out;
    out.beta = b;
    out.objective = check_loss_sum(resid, s);
    double best_obj = out.objective;
    VectorXd best_b = b;

    // Iteration workspace: the solver runs once per grid level inside the
    // stacked estimators, so per-iteration n-sized temporaries are hoisted
    // out of the loop and reused.
    VectorXd rb(n), q(n), qinv(n), za(n), ws(n), g(n), tmp_n(n);
    VectorXd da(n), dz(n), dw(n), tz(n), tw(n);
    VectorXd rc(k), rhs(k), db(k);
    MatrixXd W(n, k), M(k, k);

    const double damp = 0.9995;
    bool converged = false;
    int total_iter = 0;

    // Attempt 0 starts from the carried interior-point state when one is
    // available. A warm state can stall when the active set shifts between
    // levels, so a failed warm attempt falls through to a fresh cold attempt:
    // warm-starting can speed the solve up but never change its guarantees.
    for (int attempt = have_state ? 0 : 1; attempt < 2 && !converged; ++attempt) {
        if (attempt == 0) {
            // Only the dual variable a is carried: shifting it by the level
            // difference keeps X'a = (1-s) X'1 up to the clamp slip below,
            // which the infeasible-start correction term (rc) removes in one
            // Newton step. The multipliers are NOT carried — at a solved
            // level they sit on the boundary, and restarting from them leaves
            // the complementarity products spread over many orders of
            // magnitude, which truncates the Newton steps. Instead z and w
            // are rebuilt from the residuals at the warm beta, and a is
            // clamped per row so that every product a_i z_i and s_i w_i
            // starts at the common scale mu0: a point that is well-centered,
            // near-feasible, and already close to the new solution.
            const double eps_warm = 0.02 * eps0;
            const double mu0 = 0.5 * eps_warm;
            w = (resid.cwiseMax(0.0).array() + eps_warm).matrix();
            z = ((-resid).cwiseMax(0.0).array() + eps_warm).matrix();
            a = state->a;
            a.array() += state->s - s;
            a = a.cwiseMax(mu0 * z.cwiseInverse())
                    .cwiseMin((1.0 - mu0 * w.array().inverse()).matrix());
            s_slack.array() = 1.0 - a.array();
        } else {
            b = best_b;
            resid = yw;
            resid.noalias() -= Xw * b;
            a.setConstant(1.0 - s);
            s_slack.setConstant(s);
            // Stationarity w - z = y - Xb holds exactly at w = r_+ + eps,
            // z = r_- + eps. (z is the multiplier for a >= 0, w for a <= 1.)
            w = (resid.cwiseMax(0.0).array() + eps0).matrix();
            z = ((-resid).cwiseMax(0.0).array() + eps0).matrix();
        }

        double prev_gap = std::numeric_limits<double>::infinity();
        int stall = 0;

        for (int iter = 0; iter < opts.max_iterations; ++iter, ++total_iter) {
            resid = yw;
            resid.noalias() -= Xw * b;
            const double primal_obj = check_loss_sum(resid, s);
            if (primal_obj < best_obj) {
                best_obj = primal_obj;
                best_b = b;
            }
            const double dual_obj = yw.dot(a) - (1.0 - s) * y_sum;
            const double gap = primal_obj - dual_obj;
            rc = c;
            rc.noalias() -= Xw.transpose() * a;
            const double rc_err = rc.cwiseAbs().maxCoeff() /
                                  (1.0 + c.cwiseAbs().maxCoeff());
            if (gap <= opts.tol * (1.0 + std::abs(primal_obj)) && rc_err <= 1e-8) {
                converged = true;
                break;
            }
            if (gap > prev_gap * 0.9999) {
                if (++stall >= 8) break; // no progress; next attempt or fallback
            } else {
                stall = 0;
            }
            prev_gap = gap;

            // Newton system pieces shared by predictor and corrector.
            rb.array() = resid.array() - w.array() + z.array();
            za.array() = z.array() / a.array();
            ws.array() = w.array() / s_slack.array();
            q.array() = za.array() + ws.array();
            qinv.array() = q.array().inverse();
            W.noalias() = qinv.asDiagonal() * Xw;
            M.noalias() = Xw.transpose() * W;
            Eigen::LDLT<MatrixXd> ldlt(M);
            if (ldlt.info() != Eigen::Success) break;

            const double mu = (a.dot(z) + s_slack.dot(w)) / (2.0 * static_cast<double>(n));

            // Predictor (affine scaling, mu target 0).
            g.array() = rb.array() + w.array() - z.array();
            tmp_n.array() = qinv.array() * g.array();
            rhs.noalias() = Xw.transpose() * tmp_n;
            rhs -= rc;
            db = ldlt.solve(rhs);
            tmp_n.noalias() = Xw * db;
            da.array() = qinv.array() * (g.array() - tmp_n.array());
            dz.array() = -z.array() - za.array() * da.array();
            dw.array() = -w.array() + ws.array() * da.array();
            if (!db.allFinite() || !da.allFinite()) break;

            double ap = std::min(max_step(a, da, 1.0, 1.0), max_step(s_slack, da, -1.0, 1.0));
            double ad = std::min(max_step(z, dz, 1.0, 1.0), max_step(w, dw, 1.0, 1.0));
            const double mu_aff =
                (((a.array() + ap * da.array()) * (z.array() + ad * dz.array())).sum() +
                 ((s_slack.array() - ap * da.array()) * (w.array() + ad * dw.array())).sum()) /
                (2.0 * static_cast<double>(n));
            double sigma = std::pow(std::max(mu_aff, 0.0) / mu, 3.0);
            sigma = std::clamp(sigma, 1e-8, 1.0);
            const double mu_target = sigma * mu;

            // Corrector with Mehrotra second-order terms.
            tz.array() = mu_target - da.array() * dz.array();
            tw.array() = mu_target + da.array() * dw.array();
            g.array() = rb.array() + w.array() - z.array() + tz.array() / a.array() -
                        tw.array() / s_slack.array();
            tmp_n.array() = qinv.array() * g.array();
            rhs.noalias() = Xw.transpose() * tmp_n;
            rhs -= rc;
            db = ldlt.solve(rhs);
            tmp_n.noalias() = Xw * db;
            da.array() = qinv.array() * (g.array() - tmp_n.array());
            dz.array() = tz.array() / a.array() - z.array() - za.array() * da.array();
            dw.array() = tw.array() / s_slack.array() - w.array() + ws.array() * da.array();
            if (!db.allFinite() || !da.allFinite()) break;

            ap = damp * std::min(max_step(a, da, 1.0, 1.0 / damp),
                                 max_step(s_slack, da, -1.0, 1.0 / damp));
            ad = damp * std::min(max_step(z, dz, 1.0, 1.0 / damp),
                                 max_step(w, dw, 1.0, 1.0 / damp));
            ap = std::min(ap, 1.0);
            ad = std::min(ad, 1.0);

            a += ap * da;
            s_slack.array() = 1.0 - a.array(); // pin a + s = 1 exactly
            b += ad * db;
            z += ad * dz;
            w += ad * dw;
        }

        // The last step's b was never scored inside the loop.
        resid = yw;
        resid.noalias() -= Xw * b;
        const double obj = check_loss_sum(resid, s);
        if (obj < best_obj) {
            best_obj = obj;
            best_b = b;
        }
    } // attempt loop

    out.iterations = total_iter;
    out.converged = converged;
    if (!converged && opts.allow_fallback) {
        // Polish with the smoothed-loss majorizer from the best point found.
        VectorXd polished = mm_descent(Xw, yw, s, best_b, 200);
        const double obj = check_loss_sum(yw - Xw * polished, s);
        if (obj < best_obj) {
            best_obj = obj;
            best_b = polished;
        }
        out.used_fallback = true;
    }
    if (state) {
        state->s = s;
        state->a = std::move(a);
    }
    out.beta = best_b;
    out.objective = best_obj;
    return out;
}

BsplineDesign bspline_design(const MatrixXd& covariates,
                             const std::vector<std::pair<double, double>>* knots) {
    const Eigen::Index n = covariates.rows();
    const Eigen::Index p = covariates.cols();
    if (n == 0 || p == 0)
        throw std::invalid_argument("bspline_design: empty covariate matrix");
    if (knots && static_cast<Eigen::Index>(knots->size()) != p)
        throw std::invalid_argument("bspline_design: knot list size mismatch");

    BsplineDesign out;
    out.knots.resize(static_cast<std::size_t>(p));
    out.B.resize(n, 1 + 3 * p);
    out.B.col(0).setOnes();
    for (Eigen::Index j = 0; j < p; ++j) {
        double k1, k2;
        if (knots) {
            k1 = (*knots)[static_cast<std::size_t>(j)].first;
            k2 = (*knots)[static_cast<std::size_t>(j)].second;
        } else {
            const VectorXd col = covariates.col(j);
            k1 = empirical_quantile(col, 1.0 / 3.0);
            k2 = empirical_quantile(col, 2.0 / 3.0);
        }
        if (!(k1 < k2))
            throw std::invalid_argument(
                "bspline_design: knots must satisfy k1 < k2 for covariate " +
                std::to_string(j + 1) +
                " (column may have too few distinct values)");
        out.knots[static_cast<std::size_t>(j)] = {k1, k2};
        const Eigen::Index base = 1 + 3 * j;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double x = covariates(i, j);
            out.B(i, base) = x;
            out.B(i, base + 1) = std::max(x - k1, 0.0);
            out.B(i, base + 2) = std::max(x - k2, 0.0);
        }
    }
    return out;
}

} // namespace tailreg

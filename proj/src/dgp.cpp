// dgp.cpp -- analytic data-generating processes: sampling, exact supports,
// true ES coefficients, and closed-form conditional tail functionals.
#include "tailreg/dgp.hpp"

#include "tailreg/mathutil.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace tailreg {

namespace {

// Adaptive Simpson quadrature with an absolute tolerance.
double simpson_step(double a, double b, double fa, double fm, double fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double fa, double fm, double fb, double whole, double tol,
                        int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = simpson_step(a, m, fa, flm, fm);
    const double right = simpson_step(m, b, fm, frm, fb);
    if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
        return left + right + (left + right - whole) / 15.0;
    }
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
    const double fa = f(a);
    const double fb = f(b);
    const double fm = f(0.5 * (a + b));
    const double whole = simpson_step(a, b, fa, fm, fb);
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

// Mass of the negative piece of the two-piece skewed law.
double negative_mass(double skew) { return 1.0 / (1.0 + skew * skew); }

void check_skewt_params(int dof, double skew) {
    if (dof <= 2) throw std::invalid_argument("skewed-t: dof must exceed 2");
    if (!(skew > 0.0)) throw std::invalid_argument("skewed-t: skew must be positive");
}

// Draw one covariate row (excluding the intercept) into x[0..p-1].
// The per-row draw order is fixed so datasets are reproducible bit-for-bit.
void draw_design_row(const DgpSpec& spec, Rng& rng, double* x) {
    auto bern_pair = [&rng]() {
        const double u = rng.uniform01();
        return u < 0.25 ? 0.0 : (u < 0.75 ? 1.0 : 2.0);
    };
    switch (spec.kind) {
        case DgpKind::het_uniform:
            x[0] = 4.0 * rng.uniform01();
            x[1] = rng.uniform01() < 0.5 ? 0.0 : 1.0;
            break;
        case DgpKind::nonlinear_skewt:
            x[0] = -1.0 + 3.0 * rng.uniform01();
            x[1] = -1.0 + 3.0 * rng.uniform01();
            break;
        case DgpKind::discrete_het:
            x[0] = bern_pair();
            x[1] = bern_pair();
            break;
        case DgpKind::location_scale: {
            const Eigen::Index p = spec.dim() - 1;
            for (Eigen::Index j = 0; j < p; ++j)
                x[j] = 0.1 * static_cast<double>(rng.uniform_below(11));
            break;
        }
        case DgpKind::counterexample:
            x[0] = rng.gamma2();
            break;
        case DgpKind::halfnormal_scale:
            x[0] = std::abs(rng.normal());
            break;
        case DgpKind::correlated_het:
            x[1] = rng.uniform01() < 0.5 ? 0.0 : 1.0;
            x[0] = (3.0 + x[1]) * rng.uniform01();
            break;
    }
}

std::vector<ColumnKind> design_kinds(const DgpSpec& spec) {
    switch (spec.kind) {
        case DgpKind::het_uniform:
        case DgpKind::correlated_het:
            return {ColumnKind::continuous, ColumnKind::discrete};
        case DgpKind::nonlinear_skewt:
            return {ColumnKind::continuous, ColumnKind::continuous};
        case DgpKind::discrete_het:
            return {ColumnKind::discrete, ColumnKind::discrete};
        case DgpKind::location_scale:
            return std::vector<ColumnKind>(static_cast<size_t>(spec.dim() - 1),
                                           ColumnKind::discrete);
        case DgpKind::counterexample:
        case DgpKind::halfnormal_scale:
            return {ColumnKind::continuous};
    }
    return {};
}

} // namespace

std::string dgp_kind_name(DgpKind kind) {
    switch (kind) {
        case DgpKind::het_uniform: return "het-uniform";
        case DgpKind::nonlinear_skewt: return "nonlinear-skewt";
        case DgpKind::discrete_het: return "discrete-het";
        case DgpKind::location_scale: return "location-scale";
        case DgpKind::counterexample: return "counterexample";
        case DgpKind::halfnormal_scale: return "halfnormal-scale";
        case DgpKind::correlated_het: return "correlated-het";
    }
    return "unknown";
}

DgpSpec DgpSpec::het_uniform() {
    DgpSpec s;
    s.kind = DgpKind::het_uniform;
    return s;
}

DgpSpec DgpSpec::nonlinear_skewt(int dof, double skew) {
    check_skewt_params(dof, skew);
    DgpSpec s;
    s.kind = DgpKind::nonlinear_skewt;
    s.dof = dof;
    s.skew = skew;
    // The multiplicative scale 24x1^2+12x2^2+5 >= 5 is strictly positive on
    // the covariate square, so the response is comonotone in the noise given
    // x and the tail shift below is exact.
    s.nu0 = skewed_t_es(kSkewtLinearLevel, dof, skew);
    return s;
}

DgpSpec DgpSpec::discrete_het() {
    DgpSpec s;
    s.kind = DgpKind::discrete_het;
    return s;
}

DgpSpec DgpSpec::location_scale(VectorXd g1, VectorXd g2, double norm_tau) {
    if (g1.size() != g2.size() || g1.size() < 2)
        throw std::invalid_argument(
            "location-scale: gamma1 and gamma2 must have equal size >= 2 (intercept plus "
            "at least one covariate)");
    if (!g1.allFinite() || !g2.allFinite())
        throw std::invalid_argument("location-scale: parameters must be finite");
    if (!(norm_tau > 0.0 && norm_tau < 1.0))
        throw std::invalid_argument("location-scale: norm_tau must lie in (0,1)");
    // Coordinates live on [0,1], so the minimum of x'g2 over the grid is the
    // intercept plus every negative slope.
    double worst = g2(0);
    for (Eigen::Index j = 1; j < g2.size(); ++j) worst += std::min(0.0, g2(j));
    if (!(worst > 0.0))
        throw std::invalid_argument(
            "location-scale: the scale x'gamma2 reaches " + std::to_string(worst) +
            " on the covariate grid; it must be strictly positive everywhere");
    DgpSpec s;
    s.kind = DgpKind::location_scale;
    s.gamma1 = std::move(g1);
    s.gamma2 = std::move(g2);
    s.norm_tau = norm_tau;
    return s;
}

DgpSpec DgpSpec::counterexample() {
    DgpSpec s;
    s.kind = DgpKind::counterexample;
    return s;
}

DgpSpec DgpSpec::halfnormal_scale() {
    DgpSpec s;
    s.kind = DgpKind::halfnormal_scale;
    return s;
}

DgpSpec DgpSpec::correlated_het() {
    DgpSpec s;
    s.kind = DgpKind::correlated_het;
    return s;
}

Eigen::Index DgpSpec::dim() const {
    switch (kind) {
        case DgpKind::het_uniform:
        case DgpKind::nonlinear_skewt:
        case DgpKind::discrete_het:
        case DgpKind::correlated_het:
            return 3;
        case DgpKind::location_scale:
            return gamma1.size();
        case DgpKind::counterexample:
        case DgpKind::halfnormal_scale:
            return 2;
    }
    return 0;
}

DgpSpec parse_dgp(const std::string& name, Eigen::Index p) {
    if (name == "het-uniform") return DgpSpec::het_uniform();
    if (name == "nonlinear-skewt") return DgpSpec::nonlinear_skewt();
    if (name == "discrete-het") return DgpSpec::discrete_het();
    if (name == "location-scale") {
        VectorXd g = VectorXd::Ones(p + 1);
        g(0) = 3.0;
        return DgpSpec::location_scale(g, g);
    }
    if (name == "counterexample") return DgpSpec::counterexample();
    if (name == "halfnormal-scale") return DgpSpec::halfnormal_scale();
    if (name == "correlated-het") return DgpSpec::correlated_het();
    throw std::invalid_argument(
        "unknown data-generating process '" + name +
        "' (known: het-uniform, nonlinear-skewt, discrete-het, location-scale, "
        "counterexample, halfnormal-scale, correlated-het)");
}

Dataset sample_dgp(const DgpSpec& spec, Eigen::Index n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_dgp: n must be at least 1");
    const Eigen::Index p = spec.dim() - 1;
    Dataset data;
    data.X.resize(n, p + 1);
    data.X.col(0).setOnes();
    data.y.resize(n);
    data.kinds = design_kinds(spec);

    Rng rng(seed);
    std::vector<double> xrow(static_cast<size_t>(p));

    // location_scale noise normalization constants.
    double lam0 = 0.0, s0 = 1.0;
    if (spec.kind == DgpKind::location_scale) {
        const NormalTail nt = normal_tail(spec.norm_tau);
        lam0 = nt.mean;
        s0 = std::sqrt(nt.var);
    }

    for (Eigen::Index i = 0; i < n; ++i) {
        draw_design_row(spec, rng, xrow.data());
        for (Eigen::Index j = 0; j < p; ++j) data.X(i, j + 1) = xrow[static_cast<size_t>(j)];
        switch (spec.kind) {
            case DgpKind::het_uniform:
            case DgpKind::correlated_het: {
                const double u = rng.uniform01();
                const double c = 1.0 + 2.0 * xrow[0] + 3.0 * xrow[1];
                data.y(i) = c * (1.0 + u);
                break;
            }
            case DgpKind::nonlinear_skewt: {
                const double eps = skewed_t_draw(rng, spec.dof, spec.skew);
                const double scale =
                    24.0 * xrow[0] * xrow[0] + 12.0 * xrow[1] * xrow[1] + 5.0;
                data.y(i) = -1.0 + 2.0 * xrow[0] - 3.0 * xrow[1] + scale * (eps - spec.nu0);
                break;
            }
            case DgpKind::discrete_het: {
                const double u = rng.uniform01();
                const double e = -std::log1p(-u);
                data.y(i) = (1.0 + e) + (2.0 + 2.0 * u) * xrow[0] +
                            (3.0 + 30.0 * e) * xrow[1];
                break;
            }
            case DgpKind::location_scale: {
                const double eps = (rng.normal() - lam0) / s0;
                double loc = spec.gamma1(0), sc = spec.gamma2(0);
                for (Eigen::Index j = 0; j < p; ++j) {
                    loc += spec.gamma1(j + 1) * xrow[static_cast<size_t>(j)];
                    sc += spec.gamma2(j + 1) * xrow[static_cast<size_t>(j)];
                }
                data.y(i) = loc + sc * eps;
                break;
            }
            case DgpKind::counterexample: {
                const double eps = 2.0 * rng.uniform01() - 1.0;
                data.y(i) = 1.0 + xrow[0] * eps;
                break;
            }
            case DgpKind::halfnormal_scale: {
                const double u = rng.uniform01();
                const double e = -std::log1p(-u);
                data.y(i) = (1.0 + e) + (3.0 + 30.0 * e) * xrow[0];
                break;
            }
        }
    }
    return data;
}

MatrixXd sample_dgp_design(const DgpSpec& spec, Eigen::Index n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_dgp_design: n must be at least 1");
    const Eigen::Index p = spec.dim() - 1;
    MatrixXd X(n, p + 1);
    X.col(0).setOnes();
    Rng rng(seed);
    std::vector<double> xrow(static_cast<size_t>(p));
    for (Eigen::Index i = 0; i < n; ++i) {
        draw_design_row(spec, rng, xrow.data());
        for (Eigen::Index j = 0; j < p; ++j) X(i, j + 1) = xrow[static_cast<size_t>(j)];
    }
    return X;
}

bool dgp_has_finite_support(const DgpSpec& spec) {
    return spec.kind == DgpKind::discrete_het || spec.kind == DgpKind::location_scale;
}

void dgp_support(const DgpSpec& spec, MatrixXd& points, VectorXd& masses) {
    if (spec.kind == DgpKind::discrete_het) {
        // Two iid Binomial(2, 1/2) coordinates: 9 points.
        const double probs[3] = {0.25, 0.5, 0.25};
        points.resize(9, 3);
        masses.resize(9);
        Eigen::Index r = 0;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j, ++r) {
                points(r, 0) = 1.0;
                points(r, 1) = static_cast<double>(i);
                points(r, 2) = static_cast<double>(j);
                masses(r) = probs[i] * probs[j];
            }
        }
        return;
    }
    if (spec.kind == DgpKind::location_scale) {
        const Eigen::Index p = spec.dim() - 1;
        if (p > 6)
            throw std::invalid_argument(
                "location-scale support enumeration limited to 6 covariates");
        Eigen::Index total = 1;
        for (Eigen::Index j = 0; j < p; ++j) total *= 11;
        points.resize(total, p + 1);
        points.col(0).setOnes();
        masses = VectorXd::Constant(total, 1.0 / static_cast<double>(total));
        for (Eigen::Index r = 0; r < total; ++r) {
            Eigen::Index rem = r;
            for (Eigen::Index j = 0; j < p; ++j) {
                points(r, j + 1) = 0.1 * static_cast<double>(rem % 11);
                rem /= 11;
            }
        }
        return;
    }
    throw std::invalid_argument("dgp_support: '" + spec.name() +
                                "' has a continuous covariate design");
}

VectorXd true_beta(const DgpSpec& spec, double tau) {
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("true_beta: tau must lie in (0,1)");
    switch (spec.kind) {
        case DgpKind::het_uniform:
        case DgpKind::correlated_het: {
            // Y = c(x)(1+U) with E[U | U >= tau] = (1+tau)/2.
            VectorXd b(3);
            const double f = 1.0 + 0.5 * (1.0 + tau);
            b << f, 2.0 * f, 3.0 * f;
            return b;
        }
        case DgpKind::nonlinear_skewt: {
            if (std::abs(tau - DgpSpec::kSkewtLinearLevel) > 1e-9)
                throw std::invalid_argument(
                    "true_beta: the nonlinear-skewt model has a linear conditional ES "
                    "only at level 0.9");
            VectorXd b(3);
            b << -1.0, 2.0, -3.0;
            return b;
        }
        case DgpKind::discrete_het: {
            // E[U | U >= tau] = (1+tau)/2, E[Exp(1) | > qE] = qE + 1.
            const double qe = -std::log1p(-tau);
            VectorXd b(3);
            b << 2.0 + qe, 3.0 + tau, 3.0 + 30.0 * (1.0 + qe);
            return b;
        }
        case DgpKind::location_scale: {
            const NormalTail nt0 = normal_tail(spec.norm_tau);
            const NormalTail nt = normal_tail(tau);
            const double v_eps = (nt.mean - nt0.mean) / std::sqrt(nt0.var);
            return spec.gamma1 + spec.gamma2 * v_eps;
        }
        case DgpKind::counterexample: {
            // v(tau, x) = 1 + tau x.
            VectorXd b(2);
            b << 1.0, tau;
            return b;
        }
        case DgpKind::halfnormal_scale: {
            const double qe = -std::log1p(-tau);
            VectorXd b(2);
            b << 2.0 + qe, 3.0 + 30.0 * (1.0 + qe);
            return b;
        }
    }
    throw std::logic_error("true_beta: unhandled kind");
}

void dgp_functionals(const DgpSpec& spec, double tau, const MatrixXd& points,
                     VectorXd& m1, VectorXd& m2, VectorXd& v, VectorXd& q) {
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("dgp_functionals: tau must lie in (0,1)");
    if (points.cols() != spec.dim())
        throw std::invalid_argument("dgp_functionals: design rows have " +
                                    std::to_string(points.cols()) + " columns, expected " +
                                    std::to_string(spec.dim()));
    const Eigen::Index n = points.rows();
    m1.resize(n);
    m2.resize(n);
    v.resize(n);
    q.resize(n);
    switch (spec.kind) {
        case DgpKind::het_uniform:
        case DgpKind::correlated_het: {
            // Y = c(1+U): U tail mean (1+tau)/2, tail variance (1-tau)^2/12.
            for (Eigen::Index i = 0; i < n; ++i) {
                const double c = 1.0 + 2.0 * points(i, 1) + 3.0 * points(i, 2);
                q(i) = c * (1.0 + tau);
                v(i) = c * (3.0 + tau) / 2.0;
                m2(i) = c * (1.0 - tau) / 2.0;
                m1(i) = c * c * (1.0 - tau) * (1.0 - tau) / 12.0;
            }
            return;
        }
        case DgpKind::discrete_het: {
            // Y = (1+2x1+3x2) + 2x1 U + (1+30x2) E with E = -log(1-U):
            // conditionally comonotone in U. Above the tau-quantile,
            // U = tau + (1-tau)W and E = qE + G with G = -log(1-W) ~ Exp(1),
            // cov(W, G) = 1/4.
            const double qe = -std::log1p(-tau);
            const double omt = 1.0 - tau;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double x1 = points(i, 1), x2 = points(i, 2);
                const double base = 1.0 + 2.0 * x1 + 3.0 * x2;
                const double B = 1.0 + 30.0 * x2;
                q(i) = base + 2.0 * tau * x1 + B * qe;
                v(i) = base + (1.0 + tau) * x1 + B * (1.0 + qe);
                m2(i) = omt * x1 + B;
                m1(i) = x1 * x1 * omt * omt / 3.0 + x1 * omt * B + B * B;
            }
            return;
        }
        case DgpKind::location_scale: {
            const NormalTail nt0 = normal_tail(spec.norm_tau);
            const NormalTail nt = normal_tail(tau);
            const double s0 = std::sqrt(nt0.var);
            const double qe = (nt.z - nt0.mean) / s0;
            const double ve = (nt.mean - nt0.mean) / s0;
            const double tvar = nt.var / nt0.var;
            for (Eigen::Index i = 0; i < n; ++i) {
                double loc = 0.0, sc = 0.0;
                for (Eigen::Index j = 0; j < points.cols(); ++j) {
                    loc += spec.gamma1(j) * points(i, j);
                    sc += spec.gamma2(j) * points(i, j);
                }
                q(i) = loc + sc * qe;
                v(i) = loc + sc * ve;
                m2(i) = sc * (ve - qe);
                m1(i) = sc * sc * tvar;
            }
            return;
        }
        case DgpKind::counterexample: {
            // eps | eps >= 2tau-1 ~ U(2tau-1, 1): mean tau, variance (1-tau)^2/3.
            for (Eigen::Index i = 0; i < n; ++i) {
                const double x = points(i, 1);
                q(i) = 1.0 + x * (2.0 * tau - 1.0);
                v(i) = 1.0 + x * tau;
                m2(i) = x * (1.0 - tau);
                m1(i) = x * x * (1.0 - tau) * (1.0 - tau) / 3.0;
            }
            return;
        }
        case DgpKind::halfnormal_scale: {
            const double qe = -std::log1p(-tau);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double x = points(i, 1);
                const double B = 1.0 + 30.0 * x;
                q(i) = 1.0 + 3.0 * x + B * qe;
                v(i) = 1.0 + 3.0 * x + B * (1.0 + qe);
                m2(i) = B;
                m1(i) = B * B;
            }
            return;
        }
        case DgpKind::nonlinear_skewt:
            throw std::invalid_argument(
                "dgp_functionals: the nonlinear-skewt model has a nonlinear conditional "
                "quantile; the linear-model variance formulas do not apply to it");
    }
}

double skewed_t_draw(Rng& rng, int dof, double skew) {
    check_skewt_params(dof, skew);
    const double ppos = skew * skew / (1.0 + skew * skew);
    const double u = rng.uniform01();
    const double a = std::abs(rng.student_t(dof));
    return u < ppos ? skew * a : -a / skew;
}

double skewed_t_cdf(double x, int dof, double skew) {
    check_skewt_params(dof, skew);
    const boost::math::students_t t(static_cast<double>(dof));
    const double pneg = negative_mass(skew);
    if (x >= 0.0)
        return pneg + (1.0 - pneg) * (2.0 * boost::math::cdf(t, x / skew) - 1.0);
    return 2.0 * pneg * (1.0 - boost::math::cdf(t, -skew * x));
}

double skewed_t_quantile(double tau, int dof, double skew) {
    check_skewt_params(dof, skew);
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("skewed_t_quantile: tau must lie in (0,1)");
    const boost::math::students_t t(static_cast<double>(dof));
    const double pneg = negative_mass(skew);
    if (tau >= pneg)
        return skew * boost::math::quantile(t, 0.5 + 0.5 * (tau - pneg) / (1.0 - pneg));
    return -boost::math::quantile(t, 1.0 - 0.5 * tau / pneg) / skew;
}

double skewed_t_es(double tau, int dof, double skew) {
    check_skewt_params(dof, skew);
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("skewed_t_es: tau must lie in (0,1)");
    const double pneg = negative_mass(skew);
    if (tau < pneg)
        throw std::invalid_argument(
            "skewed_t_es: levels below the mass of the negative piece are not supported");
    const double qv = skewed_t_quantile(tau, dof, skew);
    const boost::math::students_t t(static_cast<double>(dof));
    // ES = q + (1-tau)^{-1} * integral_q^inf S(x) dx with S the survival
    // function; substitute x = q + s/(1-s) to map the domain onto [0,1).
    // The t tail decays like x^{-dof}, so the transformed integrand vanishes
    // at s=1 for dof > 2 and the quadrature sees a smooth function.
    const double ppos = 1.0 - pneg;
    auto integrand = [&](double s) {
        if (s >= 1.0) return 0.0;
        const double x = qv + s / (1.0 - s);
        const double surv = ppos * 2.0 * (1.0 - boost::math::cdf(t, x / skew));
        return surv / ((1.0 - s) * (1.0 - s));
    };
    const double tail = integrate(integrand, 0.0, 1.0, 1e-10);
    return qv + tail / (1.0 - tau);
}

NormalTail normal_tail(double tau) {
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("normal_tail: tau must lie in (0,1)");
    NormalTail nt;
    nt.z = normal_quantile(tau);
    nt.mean = normal_pdf(nt.z) / (1.0 - tau);
    nt.var = 1.0 + nt.z * nt.mean - nt.mean * nt.mean;
    return nt;
}

} // namespace tailreg

// avar.cpp -- sandwich asymptotic variance-covariance matrices and ARE.
#include "tailreg/avar.hpp"

#include "tailreg/mathutil.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace tailreg {

namespace {

constexpr Eigen::Index kChunk = 4096;

// E[g(X) X X'] = sum_i masses_i g_i x_i x_i', accumulated per fixed-size
// chunk and combined pairwise so the result is independent of any threading
// of the chunk loop and numerically stable for large N.
MatrixXd expect_xx(const ModelFunctionals& fn, const Eigen::ArrayXd& g) {
    const Eigen::Index n = fn.size();
    const Eigen::Index d = fn.dim();
    const Eigen::Index nchunks = (n + kChunk - 1) / kChunk;
    std::vector<MatrixXd> partial(static_cast<size_t>(nchunks));
    for (Eigen::Index c = 0; c < nchunks; ++c) {
        const Eigen::Index lo = c * kChunk;
        const Eigen::Index hi = std::min(n, lo + kChunk);
        MatrixXd acc = MatrixXd::Zero(d, d);
        for (Eigen::Index i = lo; i < hi; ++i) {
            const double s = fn.masses(i) * g(i);
            acc.selfadjointView<Eigen::Lower>().rankUpdate(fn.points.row(i).transpose(), s);
        }
        partial[static_cast<size_t>(c)] = acc;
    }
    // Pairwise tree reduction over chunk sums.
    for (Eigen::Index width = 1; width < nchunks; width *= 2)
        for (Eigen::Index c = 0; c + width < nchunks; c += 2 * width)
            partial[static_cast<size_t>(c)] += partial[static_cast<size_t>(c + width)];
    MatrixXd out = partial.empty() ? MatrixXd::Zero(d, d) : partial[0];
    out.triangularView<Eigen::StrictlyUpper>() = out.transpose();
    return out;
}

MatrixXd invert_or_throw(const MatrixXd& a) {
    Eigen::FullPivLU<MatrixXd> lu(a);
    if (!lu.isInvertible()) throw std::runtime_error("degenerate design");
    return lu.inverse();
}

void check_tau(double tau) {
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("avar: tau must lie in (0,1)");
}

AvarReport wls_sandwich(const std::string& tag, const ModelFunctionals& fn, double tau,
                        const Eigen::ArrayXd& w) {
    if (!w.isFinite().all() || (w <= 0.0).any())
        throw std::invalid_argument("avar: weights must be positive and finite");
    const Eigen::ArrayXd phi = fn.m1.array() + tau * fn.m2.array().square();
    AvarReport rep;
    rep.method = tag;
    rep.bread = expect_xx(fn, w);
    rep.meat = expect_xx(fn, w.square() * phi);
    const MatrixXd bread_inv = invert_or_throw(rep.bread);
    rep.sandwich = bread_inv * rep.meat * bread_inv / (1.0 - tau);
    rep.sandwich = ((rep.sandwich + rep.sandwich.transpose()) / 2.0).eval();
    return rep;
}

} // namespace

std::string avar_method_name(AvarMethod method) {
    switch (method) {
        case AvarMethod::esqr: return "esqr";
        case AvarMethod::ts: return "ts";
        case AvarMethod::ln: return "ln";
        case AvarMethod::tsls: return "tsls";
        case AvarMethod::j1: return "j1";
        case AvarMethod::j2: return "j2";
        case AvarMethod::wls: return "wls";
        case AvarMethod::optimal: return "optimal";
    }
    return "unknown";
}

AvarMethod parse_avar_method(const std::string& name) {
    if (name == "esqr") return AvarMethod::esqr;
    if (name == "ts") return AvarMethod::ts;
    if (name == "ln") return AvarMethod::ln;
    if (name == "tsls") return AvarMethod::tsls;
    if (name == "j1") return AvarMethod::j1;
    if (name == "j2") return AvarMethod::j2;
    if (name == "wls") return AvarMethod::wls;
    if (name == "optimal") return AvarMethod::optimal;
    throw std::invalid_argument(
        "unknown asymptotic-variance method '" + name +
        "' (known: esqr, ts, ln, tsls, j1, j2, wls, optimal)");
}

void ModelFunctionals::validate() const {
    const Eigen::Index n = points.rows();
    if (n < 1) throw std::invalid_argument("functionals: at least one evaluation point");
    if (masses.size() != n || m1.size() != n || m2.size() != n || v.size() != n ||
        q.size() != n)
        throw std::invalid_argument("functionals: field sizes disagree");
    if (!points.allFinite() || !masses.allFinite() || !m1.allFinite() ||
        !m2.allFinite() || !v.allFinite() || !q.allFinite())
        throw std::invalid_argument("functionals: values must be finite at every point");
    if ((masses.array() < 0.0).any())
        throw std::invalid_argument("functionals: masses must be nonnegative");
    if (std::abs(masses.sum() - 1.0) > 1e-8)
        throw std::invalid_argument("functionals: masses must sum to 1");
    if ((m1.array() < 0.0).any())
        throw std::invalid_argument("functionals: m1 must be nonnegative");
    if ((m2.array() <= 0.0).any())
        throw std::invalid_argument("functionals: m2 must be strictly positive");
}

AvarReport avar(AvarMethod method, const ModelFunctionals& fn, double tau,
                const VectorXd* wls_weights) {
    check_tau(tau);
    fn.validate();
    if (method != AvarMethod::wls && wls_weights != nullptr)
        throw std::invalid_argument("avar: weights are accepted only by the wls method");
    const Eigen::ArrayXd ones = Eigen::ArrayXd::Ones(fn.size());
    switch (method) {
        case AvarMethod::esqr:
            return wls_sandwich("esqr", fn, tau, fn.m2.array().inverse());
        case AvarMethod::ts:
        case AvarMethod::ln:
            return wls_sandwich(avar_method_name(method), fn, tau, ones);
        case AvarMethod::j1:
        case AvarMethod::j2: {
            if ((fn.v.array() <= 0.0).any())
                throw std::invalid_argument(
                    "avar: the joint methods require strictly positive ES levels "
                    "(their link functions act on v)");
            const double expo = method == AvarMethod::j1 ? -2.0 : -1.5;
            return wls_sandwich(avar_method_name(method), fn, tau,
                                fn.v.array().pow(expo));
        }
        case AvarMethod::wls: {
            if (wls_weights == nullptr)
                throw std::invalid_argument("avar: the wls method requires weights");
            if (wls_weights->size() != fn.size())
                throw std::invalid_argument(
                    "avar: need one weight per evaluation point");
            return wls_sandwich("wls", fn, tau, wls_weights->array());
        }
        case AvarMethod::optimal: {
            const Eigen::ArrayXd phi = fn.m1.array() + tau * fn.m2.array().square();
            return wls_sandwich("optimal", fn, tau, phi.inverse());
        }
        case AvarMethod::tsls: {
            // Two-step sandwich: bread E[XX']; the tail least-squares stage
            // contributes E[m1 XX'], the estimated-quantile stage
            // tau K E[XX'] K' with K = E[XX'] E[XX'/m2]^{-1} (the two pieces
            // are asymptotically uncorrelated). Valid for location-scale
            // tail families, where f(q(tau,x) | x) is proportional to 1/m2(x).
            const Eigen::ArrayXd ones_w = ones;
            AvarReport rep;
            rep.method = "tsls";
            rep.bread = expect_xx(fn, ones_w);
            const MatrixXd bread_inv = invert_or_throw(rep.bread);
            const MatrixXd g = expect_xx(fn, fn.m2.array().inverse());
            const MatrixXd k = rep.bread * invert_or_throw(g);
            rep.meat = expect_xx(fn, fn.m1.array()) + tau * k * rep.bread * k.transpose();
            rep.sandwich = bread_inv * rep.meat * bread_inv / (1.0 - tau);
            rep.sandwich = ((rep.sandwich + rep.sandwich.transpose()) / 2.0).eval();
            return rep;
        }
    }
    throw std::logic_error("avar: unhandled method");
}

AvarReport avar_esqr_weighted(const ModelFunctionals& fn, double tau,
                              const VectorXd& omega) {
    check_tau(tau);
    fn.validate();
    if (omega.size() != fn.size())
        throw std::invalid_argument("avar: need one weight per evaluation point");
    return wls_sandwich("esqr-weighted", fn, tau, omega.array() / fn.m2.array());
}

double are(const AvarReport& a, const AvarReport& b, AreNorm norm) {
    if (a.sandwich.rows() != b.sandwich.rows() || a.sandwich.cols() != b.sandwich.cols())
        throw std::invalid_argument("are: sandwich dimensions disagree");
    double na = 0.0, nb = 0.0;
    if (norm == AreNorm::frobenius) {
        na = a.sandwich.norm();
        nb = b.sandwich.norm();
    } else {
        na = std::abs(a.sandwich.determinant());
        nb = std::abs(b.sandwich.determinant());
    }
    if (!(na > 0.0) || !(nb > 0.0) || !std::isfinite(na) || !std::isfinite(nb))
        throw std::runtime_error("are: sandwich norm is zero or not finite");
    return nb / na;
}

ModelFunctionals functionals_at(const DgpSpec& spec, double tau, const MatrixXd& points,
                                const VectorXd* masses) {
    ModelFunctionals fn;
    fn.points = points;
    if (masses != nullptr) {
        if (masses->size() != points.rows())
            throw std::invalid_argument("functionals_at: one mass per design row");
        fn.masses = *masses;
    } else {
        fn.masses = VectorXd::Constant(points.rows(),
                                       1.0 / static_cast<double>(points.rows()));
    }
    dgp_functionals(spec, tau, points, fn.m1, fn.m2, fn.v, fn.q);
    fn.validate();
    return fn;
}

ModelFunctionals functionals_from_dgp(const DgpSpec& spec, double tau,
                                      Eigen::Index sample_points, std::uint64_t seed) {
    if (dgp_has_finite_support(spec)) {
        MatrixXd points;
        VectorXd masses;
        dgp_support(spec, points, masses);
        return functionals_at(spec, tau, points, &masses);
    }
    if (sample_points < 1)
        throw std::invalid_argument("functionals_from_dgp: sample_points must be >= 1");
    const MatrixXd points = sample_dgp_design(spec, sample_points, seed);
    return functionals_at(spec, tau, points, nullptr);
}

} // namespace tailreg

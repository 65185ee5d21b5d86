#include "tailreg/simulate.hpp"

#include "tailreg/mathutil.hpp"
#include "tailreg/parallel.hpp"
#include "tailreg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace tailreg {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

// Empirical superquantile of a sorted sample at level alpha:
//   vhat(alpha) = qhat + mean((z - qhat)^+) / (1 - alpha),
// with qhat the ceil(n * alpha)-th order statistic (type-1 quantile). suffix
// holds trailing sums of the sorted values: suffix[k] = sum_{i >= k} z[i].
double sorted_superquantile(const std::vector<double>& sorted,
                            const std::vector<double>& suffix, double alpha) {
    const std::size_t n = sorted.size();
    const auto k = static_cast<std::size_t>(
        std::max(1.0, std::ceil(static_cast<double>(n) * alpha - 1e-9)));
    const double q = sorted[std::min(k, n) - 1];
    const auto first_above = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), q) - sorted.begin());
    const double excess =
        suffix[first_above] - static_cast<double>(n - first_above) * q;
    return q + excess / (static_cast<double>(n) * (1.0 - alpha));
}

std::vector<double> suffix_sums(const std::vector<double>& sorted) {
    std::vector<double> suffix(sorted.size() + 1, 0.0);
    for (std::size_t i = sorted.size(); i-- > 0;)
        suffix[i] = suffix[i + 1] + sorted[i];
    return suffix;
}

} // namespace

double McReport::ratio(Eigen::Index baseline, Eigen::Index candidate,
                       Eigen::Index coef) const {
    if (baseline < 0 || candidate < 0 ||
        baseline >= static_cast<Eigen::Index>(estimators.size()) ||
        candidate >= static_cast<Eigen::Index>(estimators.size()) ||
        coef < 0 || coef >= rmse.cols())
        throw std::invalid_argument("McReport::ratio: index out of range");
    if (baseline == candidate) return 1.0;
    const double b = rmse(baseline, coef);
    const double c = rmse(candidate, coef);
    if (std::isnan(b) || std::isnan(c)) return kNan;
    if (c == 0.0) return b == 0.0 ? 1.0 : kInf;
    return b / c;
}

MatrixXd McReport::ratio_matrix(Eigen::Index coef) const {
    const auto k = static_cast<Eigen::Index>(estimators.size());
    MatrixXd out(k, k);
    for (Eigen::Index b = 0; b < k; ++b)
        for (Eigen::Index c = 0; c < k; ++c) out(b, c) = ratio(b, c, coef);
    return out;
}

McReport run_monte_carlo(const DgpSpec& spec,
                         const std::vector<McEstimator>& estimators,
                         const McConfig& cfg) {
    if (cfg.reps < 2)
        throw std::invalid_argument("run_monte_carlo: need at least 2 replications");
    if (estimators.empty())
        throw std::invalid_argument("run_monte_carlo: estimator list is empty");
    if (cfg.n < 1)
        throw std::invalid_argument("run_monte_carlo: sample size must be positive");
    if (!(cfg.tau > 0.0 && cfg.tau < 1.0))
        throw std::invalid_argument("run_monte_carlo: tau must lie in (0, 1)");
    for (const McEstimator& est : estimators)
        if (!est.fit)
            throw std::invalid_argument("run_monte_carlo: estimator '" + est.name +
                                        "' has no fit function");

    McReport report;
    report.dgp = spec.name();
    report.reps = cfg.reps;
    report.n = cfg.n;
    report.tau = cfg.tau;
    report.seed = cfg.seed;
    report.beta_true = true_beta(spec, cfg.tau);
    const Eigen::Index p = report.beta_true.size();
    const auto n_est = static_cast<Eigen::Index>(estimators.size());
    for (const McEstimator& est : estimators) report.estimators.push_back(est.name);

    // Replication-indexed slots; a NaN row marks a failed (or non-finite) fit.
    report.draws.assign(static_cast<std::size_t>(n_est),
                        MatrixXd::Constant(cfg.reps, p, kNan));

    const int threads = cfg.threads > 0 ? cfg.threads : default_thread_count();
    parallel_for(
        static_cast<std::size_t>(cfg.reps),
        [&](std::size_t r) {
            const Dataset ds =
                sample_dgp(spec, cfg.n, child_seed(cfg.seed, static_cast<std::uint64_t>(r)));
            for (Eigen::Index e = 0; e < n_est; ++e) {
                VectorXd est;
                try {
                    est = estimators[static_cast<std::size_t>(e)].fit(ds, cfg.tau);
                } catch (const std::exception&) {
                    continue; // slot stays NaN; counted below
                }
                if (est.size() == p && est.allFinite())
                    report.draws[static_cast<std::size_t>(e)]
                        .row(static_cast<Eigen::Index>(r)) = est.transpose();
            }
        },
        threads);

    report.rel_bias = MatrixXd::Constant(n_est, p, kNan);
    report.rmse = MatrixXd::Constant(n_est, p, kNan);
    report.failures.assign(static_cast<std::size_t>(n_est), 0);

    std::vector<double> diff, diff_sq;
    for (Eigen::Index e = 0; e < n_est; ++e) {
        const MatrixXd& d = report.draws[static_cast<std::size_t>(e)];
        int used = 0;
        for (int r = 0; r < cfg.reps; ++r)
            if (d.row(r).allFinite()) ++used;
        report.failures[static_cast<std::size_t>(e)] = cfg.reps - used;
        if (used == 0) continue;
        for (Eigen::Index j = 0; j < p; ++j) {
            diff.clear();
            diff_sq.clear();
            for (int r = 0; r < cfg.reps; ++r) {
                if (!d.row(r).allFinite()) continue;
                const double dv = d(r, j) - report.beta_true(j);
                diff.push_back(dv);
                diff_sq.push_back(dv * dv);
            }
            const double bias = pairwise_mean(diff);
            const double sd =
                diff.size() > 1 ? std::sqrt(sample_variance(diff, 1)) : 0.0;
            report.rmse(e, j) = std::sqrt(pairwise_mean(diff_sq));
            if (bias == 0.0)
                report.rel_bias(e, j) = 0.0;
            else if (sd == 0.0)
                report.rel_bias(e, j) = std::copysign(kInf, bias);
            else
                report.rel_bias(e, j) = bias / sd;
        }
    }
    return report;
}

std::string mc_report_table(const McReport& report) {
    std::string out =
        "estimator\tcoefficient\trel_bias\trmse\trmse_ratio_vs_" +
        (report.estimators.empty() ? std::string("baseline")
                                   : report.estimators.front()) +
        "\tfailed_reps\n";
    char buf[160];
    for (Eigen::Index e = 0; e < static_cast<Eigen::Index>(report.estimators.size());
         ++e) {
        for (Eigen::Index j = 0; j < report.rmse.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%s\tbeta%ld\t%.10g\t%.10g\t%.10g\t%d\n",
                          report.estimators[static_cast<std::size_t>(e)].c_str(),
                          static_cast<long>(j), report.rel_bias(e, j),
                          report.rmse(e, j), report.ratio(0, e, j),
                          report.failures[static_cast<std::size_t>(e)]);
            out += buf;
        }
    }
    return out;
}

double superquantile_objective_derivative(double theta1) {
    if (!(theta1 >= -1.0 && theta1 <= 1.0))
        throw std::invalid_argument(
            "superquantile_objective_derivative: slope outside [-1, 1]");
    if (theta1 <= 0.0) return -1.0 - std::log1p(-theta1);
    return 2.0 * (-0.5 - dilog(0.5) + dilog(0.5 * (1.0 + theta1)) +
                  (0.5 - std::log(2.0)) * std::log1p(theta1));
}

double superquantile_population_slope() {
    const auto deriv = [](double t) { return superquantile_objective_derivative(t); };
    const double lo = 0.0, hi = 1.0;
    if (!(deriv(lo) < 0.0 && deriv(hi) > 0.0))
        throw std::runtime_error(
            "superquantile_population_slope: derivative root not bracketed in (0, 1)");
    return bisect_root(deriv, lo, hi, 1e-10);
}

SuperquantileFit superquantile_sample_fit(Eigen::Index n, std::uint64_t seed,
                                          int grid_points) {
    if (n < 100)
        throw std::invalid_argument("superquantile_sample_fit: need n >= 100");
    if (grid_points < 1)
        throw std::invalid_argument("superquantile_sample_fit: need grid_points >= 1");
    const double tau = 0.5; // the counterexample's tail level
    const DgpSpec spec = DgpSpec::counterexample();
    const Dataset ds = sample_dgp(spec, n, seed);

    std::vector<double> x(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = ds.X(i, 1);
    const double xbar = pairwise_mean(x);

    // Midpoint levels of (tau, 1).
    std::vector<double> levels(static_cast<std::size_t>(grid_points));
    for (int t = 0; t < grid_points; ++t)
        levels[static_cast<std::size_t>(t)] =
            tau + (t + 0.5) * (1.0 - tau) / grid_points;

    std::vector<double> z(static_cast<std::size_t>(n));
    const auto objective = [&](double slope) {
        for (Eigen::Index i = 0; i < n; ++i)
            z[static_cast<std::size_t>(i)] = ds.y(i) - slope * ds.X(i, 1);
        std::sort(z.begin(), z.end());
        const std::vector<double> suffix = suffix_sums(z);
        double acc = 0.0;
        for (double alpha : levels) acc += sorted_superquantile(z, suffix, alpha);
        return xbar * slope + acc / grid_points;
    };

    SuperquantileFit fit;
    fit.slope = golden_section_minimize(objective, -0.99, 0.99, 1e-8);
    for (Eigen::Index i = 0; i < n; ++i)
        z[static_cast<std::size_t>(i)] = ds.y(i) - fit.slope * ds.X(i, 1);
    std::sort(z.begin(), z.end());
    fit.intercept = sorted_superquantile(z, suffix_sums(z), tau);
    return fit;
}

VectorXd standardized_normality_check(const MatrixXd& draws, const VectorXd& beta,
                                      const MatrixXd& avar, double n) {
    if (draws.cols() != beta.size() || avar.rows() != beta.size() ||
        avar.cols() != beta.size())
        throw std::invalid_argument(
            "standardized_normality_check: dimension mismatch between draws, "
            "beta, and avar");
    if (!(n > 0.0))
        throw std::invalid_argument(
            "standardized_normality_check: sample size must be positive");
    std::vector<Eigen::Index> usable;
    for (Eigen::Index r = 0; r < draws.rows(); ++r)
        if (draws.row(r).allFinite()) usable.push_back(r);
    if (usable.size() < 50)
        throw std::invalid_argument(
            "standardized_normality_check: need at least 50 finite draws");

    const double root_n = std::sqrt(n);
    VectorXd ks(beta.size());
    std::vector<double> zs(usable.size());
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        const double v = avar(j, j);
        if (!(v > 0.0))
            throw std::invalid_argument(
                "standardized_normality_check: avar diagonal must be strictly "
                "positive");
        const double scale = std::sqrt(v);
        for (std::size_t i = 0; i < usable.size(); ++i)
            zs[i] = root_n * (draws(usable[i], j) - beta(j)) / scale;
        if (sample_variance(zs, 1) <= 0.0)
            throw std::runtime_error(
                "standardized_normality_check: draws have zero variance in "
                "coordinate " +
                std::to_string(j));
        ks(j) = ks_distance_normal(zs);
    }
    return ks;
}

} // namespace tailreg

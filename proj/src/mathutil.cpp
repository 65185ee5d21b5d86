// mathutil.cpp -- implementations of the numeric helpers.
#include "tailreg/mathutil.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tailreg {

double pairwise_sum(const double* data, std::size_t n) {
    // Below the block threshold plain left-to-right summation is accurate
    // enough; the recursion above it halves at fixed midpoints, so the
    // evaluation tree depends only on n, never on thread count.
    constexpr std::size_t kBlock = 64;
    if (n <= kBlock) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += data[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(data, half) + pairwise_sum(data + half, n - half);
}

double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

double pairwise_mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("pairwise_mean: empty sample");
    return pairwise_sum(v) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v, int ddof) {
    const std::size_t n = v.size();
    if (n <= static_cast<std::size_t>(ddof))
        throw std::invalid_argument("sample_variance: sample too small for requested ddof");
    const double m = pairwise_mean(v);
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (v[i] - m) * (v[i] - m);
    return pairwise_sum(sq) / static_cast<double>(n - static_cast<std::size_t>(ddof));
}

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double prob) {
    if (!(prob > 0.0 && prob < 1.0))
        throw std::invalid_argument("normal_quantile: probability must lie in (0,1)");
    static const boost::math::normal_distribution<double> dist(0.0, 1.0);
    return boost::math::quantile(dist, prob);
}

double dilog(double x) {
    if (x < 0.0 || x > 1.0) throw std::invalid_argument("dilog: argument outside [0,1]");
    constexpr double pi2_6 = M_PI * M_PI / 6.0;
    if (x == 1.0) return pi2_6;
    if (x > 0.5) {
        // Reflection keeps the series argument at or below 1/2.
        return pi2_6 - std::log(x) * std::log1p(-x) - dilog(1.0 - x);
    }
    // Li2(x) = sum_{k>=1} x^k / k^2; at |x| <= 1/2 the tail drops below 1e-17
    // well before k = 60.
    double term = x, sum = 0.0;
    for (int k = 1; k < 64; ++k) {
        sum += term / (static_cast<double>(k) * k);
        term *= x;
        if (term < 1e-18) break;
    }
    return sum;
}

double ks_distance_normal(const std::vector<double>& sample) {
    if (sample.empty()) throw std::invalid_argument("ks_distance_normal: empty sample");
    std::vector<double> z = sample;
    std::sort(z.begin(), z.end());
    const double n = static_cast<double>(z.size());
    double d = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double cdf = normal_cdf(z[i]);
        const double lo = static_cast<double>(i) / n;      // F_n just below z_i
        const double hi = static_cast<double>(i + 1) / n;  // F_n at z_i
        d = std::max(d, std::max(cdf - lo, hi - cdf));
    }
    return d;
}

double ks_p_value(double d, std::size_t n) {
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    if (lambda <= 0.0) return 1.0;
    if (lambda < 1.18) {
        // Small-lambda branch: the alternating series converges too slowly,
        // so use the dual theta representation of the Kolmogorov CDF,
        //   K(l) = sqrt(2*pi)/l * sum_k exp(-(2k-1)^2 pi^2 / (8 l^2)).
        const double f = M_PI * M_PI / (8.0 * lambda * lambda);
        double cdf = 0.0;
        for (int k = 1; k <= 20; ++k) {
            const double term = std::exp(-(2.0 * k - 1.0) * (2.0 * k - 1.0) * f);
            cdf += term;
            if (term < 1e-18) break;
        }
        cdf *= std::sqrt(2.0 * M_PI) / lambda;
        return std::clamp(1.0 - cdf, 0.0, 1.0);
    }
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

double golden_section_minimize(const std::function<double(double)>& f,
                               double lo, double hi, double tol) {
    if (!(lo < hi)) throw std::invalid_argument("golden_section_minimize: empty bracket");
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d; d = c; fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c; c = d; fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

double bisect_root(const std::function<double(double)>& f,
                   double lo, double hi, double tol) {
    double flo = f(lo), fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0.0) == (fhi > 0.0))
        throw std::invalid_argument("bisect_root: endpoints do not bracket a sign change");
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid; flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& a) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double tol = std::max(a.rows(), a.cols()) * (sv.size() ? sv(0) : 0.0) *
                       std::numeric_limits<double>::epsilon();
    Eigen::VectorXd inv = sv;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        inv(i) = sv(i) > tol ? 1.0 / sv(i) : 0.0;
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

} // namespace tailreg

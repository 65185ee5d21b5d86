// mathutil.hpp -- small numerical utilities: deterministic summation, normal
// distribution helpers, the dilogarithm, Kolmogorov-Smirnov statistics, and a
// bracketed scalar minimizer/root finder.
#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <vector>

namespace tailreg {

// Pairwise (cascade) summation: O(log n) rounding depth and a fixed evaluation
// order, so long Monte Carlo reductions are both accurate and bit-reproducible.
double pairwise_sum(const double* data, std::size_t n);
double pairwise_sum(const std::vector<double>& v);

double pairwise_mean(const std::vector<double>& v);

// Sample variance with the given divisor convention (ddof = 1 -> unbiased).
double sample_variance(const std::vector<double>& v, int ddof = 1);

// Standard normal density, CDF, and quantile.
double normal_pdf(double x);
double normal_cdf(double x);
double normal_quantile(double prob);

// Dilogarithm Li2(x) for x in [0, 1]: power series on [0, 1/2], the standard
// reflection Li2(x) + Li2(1-x) = pi^2/6 - log(x)log(1-x) above. Absolute
// accuracy ~1e-15 on the closed interval.
double dilog(double x);

// Two-sided Kolmogorov-Smirnov distance between a sample and the standard
// normal: sup_x |F_n(x) - Phi(x)|. The sample is copied and sorted internally.
double ks_distance_normal(const std::vector<double>& sample);

// Asymptotic Kolmogorov p-value Q(lambda) = 2 * sum_k (-1)^{k-1} exp(-2 k^2 lambda^2),
// evaluated with the finite-sample correction lambda = (sqrt(n)+0.12+0.11/sqrt(n)) * d.
double ks_p_value(double d, std::size_t n);

// Golden-section minimizer for a strictly unimodal function on [lo, hi].
// Returns the argmin to within `tol` of the true minimizer.
double golden_section_minimize(const std::function<double(double)>& f,
                               double lo, double hi, double tol = 1e-10);

// Brent-style bisection root finder; f(lo) and f(hi) must have opposite signs.
double bisect_root(const std::function<double(double)>& f,
                   double lo, double hi, double tol = 1e-12);

// Moore-Penrose pseudo-inverse via SVD with the usual relative tolerance.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& a);

} // namespace tailreg

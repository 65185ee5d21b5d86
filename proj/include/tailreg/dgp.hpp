// dgp.hpp -- analytic data-generating processes shared by the Monte Carlo
// harness, the asymptotic-variance calculators, and the CLI.
//
// Every registered generator (except nonlinear_skewt) is a location-scale
// family driven by a single latent variable, with the response comonotone in
// that variable given the covariates. The conditional quantile and expected
// shortfall are therefore available in closed form at every level, and
// true_beta returns the exact linear ES coefficients. nonlinear_skewt has a
// nonlinear conditional quantile whose ES is linear at one level only (0.9);
// it exists to exercise estimators under quantile-model misspecification.
#pragma once

#include "tailreg/dataset.hpp"
#include "tailreg/rng.hpp"

#include <cstdint>
#include <string>

namespace tailreg {

enum class DgpKind {
    // Y = (1+2x1+3x2)(1+U): U(0,1) driver, x1 ~ U(0,4), x2 ~ Bernoulli(1/2).
    het_uniform,
    // Y = -1+2x1-3x2 + (24x1^2+12x2^2+5)(eps - nu0), x uniform on [-1,2]^2,
    // eps skewed-t: the conditional quantile is nonlinear in x at all levels,
    // while the conditional ES is exactly linear at level 0.9.
    nonlinear_skewt,
    // Y = (1+E) + (2+2U)x1 + (3+30E)x2 with E = -log(1-U), a single U(0,1)
    // driver, and x1, x2 iid Binomial(2, 1/2): a fully discrete design with
    // strong tail heterogeneity.
    discrete_het,
    // Y = x'g1 + (x'g2) eps on the grid {0, 0.1, ..., 1}^p with eps a
    // rescaled normal normalized so that its ES is 0 and its tail variance
    // is 1 at the construction level norm_tau.
    location_scale,
    // Y = 1 + x eps, x ~ Gamma(2,1), eps ~ U(-1,1): the model on which the
    // superquantile-regression slope (0.7041) differs from the ES regression
    // slope (0.5) at level one-half.
    counterexample,
    // Y = (1+E) + (3+30E)x with x = |N(0,1)| and E = Exp(1) comonotone with
    // the intercept noise: an unbounded covariate.
    halfnormal_scale,
    // Same conditional law as het_uniform but x1 | x2 ~ U(0, 3+x2),
    // x2 ~ Bernoulli(1/2): correlated covariates.
    correlated_het,
};

std::string dgp_kind_name(DgpKind kind);

struct DgpSpec {
    DgpKind kind = DgpKind::het_uniform;

    // location_scale parameters, intercept coefficient first (size p+1).
    VectorXd gamma1, gamma2;
    // location_scale: level at which eps is normalized (ES 0, tail variance 1).
    double norm_tau = 0.9;

    // nonlinear_skewt noise parameters.
    int dof = 5;
    double skew = 2.0;
    // ES of the skewed-t noise at the level where the model's ES is linear;
    // computed once at construction and subtracted from the noise so the
    // conditional ES at that level has no tail shift.
    double nu0 = 0.0;
    static constexpr double kSkewtLinearLevel = 0.9;

    static DgpSpec het_uniform();
    static DgpSpec nonlinear_skewt(int dof = 5, double skew = 2.0);
    static DgpSpec discrete_het();
    // Throws std::invalid_argument if x'g2 can be nonpositive anywhere on the
    // covariate grid (the scale must stay strictly positive).
    static DgpSpec location_scale(VectorXd g1, VectorXd g2, double norm_tau = 0.9);
    static DgpSpec counterexample();
    static DgpSpec halfnormal_scale();
    static DgpSpec correlated_het();

    Eigen::Index dim() const; // number of regression coefficients, p+1
    std::string name() const { return dgp_kind_name(kind); }
};

// Parse a DgpSpec from its registered name (location-scale gets default
// parameters g1 = g2 = (3, 1, ..., 1) at the given dimension).
DgpSpec parse_dgp(const std::string& name, Eigen::Index p = 3);

// Draw n i.i.d. rows. Deterministic given the seed: each row consumes a fixed
// sequence of variates (covariates first, latent drivers second).
Dataset sample_dgp(const DgpSpec& spec, Eigen::Index n, std::uint64_t seed);

// Covariate design only (with intercept column), same per-row draw order as
// sample_dgp's covariate block. Used for sampled expectations over X.
MatrixXd sample_dgp_design(const DgpSpec& spec, Eigen::Index n, std::uint64_t seed);

// True if the covariate design has finite support (discrete_het,
// location_scale), in which case dgp_support enumerates it exactly.
bool dgp_has_finite_support(const DgpSpec& spec);
void dgp_support(const DgpSpec& spec, MatrixXd& points, VectorXd& masses);

// Exact linear ES coefficients at level tau (intercept first). Throws for
// nonlinear_skewt away from its construction level.
VectorXd true_beta(const DgpSpec& spec, double tau);

// Closed-form conditional tail functionals at level tau, evaluated at the
// given design rows (intercept column included): per row,
//   q  = conditional tau-quantile,
//   v  = conditional tau-ES,
//   m2 = v - q,
//   m1 = var(Y | Y >= q, x).
// Throws for nonlinear_skewt (its quantile model is nonlinear by design and
// the linear-model variance formulas do not apply).
void dgp_functionals(const DgpSpec& spec, double tau, const MatrixXd& points,
                     VectorXd& m1, VectorXd& m2, VectorXd& v, VectorXd& q);

// --- skewed-t noise (two-piece construction) ---
// X = skew * |T| with probability skew^2/(1+skew^2), else -|T|/skew, for
// T ~ t_dof. skew = 1 recovers the symmetric t.
double skewed_t_draw(Rng& rng, int dof, double skew);
double skewed_t_cdf(double x, int dof, double skew);
double skewed_t_quantile(double tau, int dof, double skew);
// tau-level ES, by adaptive integration of the tail integral to ~1e-8
// absolute accuracy. Requires dof > 2 (one-sided tail mean must exist) and
// a tau at or above the mass of the negative piece.
double skewed_t_es(double tau, int dof, double skew);

// Upper-tail moments of the standard normal at level tau:
// z = quantile, mean = E[Z | Z > z], var = var(Z | Z > z).
struct NormalTail {
    double z = 0.0;
    double mean = 0.0;
    double var = 0.0;
};
NormalTail normal_tail(double tau);

} // namespace tailreg

// dataset.hpp -- core data containers shared across the tailreg library.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tailreg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// How a covariate column should be treated by the partitioning logic.
enum class ColumnKind { continuous, discrete };

// A regression dataset. X always carries a leading intercept column of ones,
// so X has n rows and p+1 columns when there are p covariates. `kinds` and
// `names` describe the p covariate columns (X columns 1..p), not the intercept.
struct Dataset {
    MatrixXd X;                     // n x (p+1), column 0 is all ones
    VectorXd y;                     // n
    std::vector<ColumnKind> kinds;  // size p
    std::vector<std::string> names; // size p (may be empty -> "x1", "x2", ...)

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index p() const { return X.cols() - 1; }
    std::string covariate_name(Eigen::Index j) const {
        if (j < static_cast<Eigen::Index>(names.size())) return names[static_cast<size_t>(j)];
        return "x" + std::to_string(j + 1);
    }
};

// Result of fitting one estimator.
struct FitResult {
    std::string method;             // estimator tag, e.g. "esqr", "ts"
    VectorXd beta;                  // p+1 coefficients (intercept first)
    VectorXd se;                    // optional standard errors (empty = absent)
    double objective = 0.0;         // value of the estimator's criterion at beta
    int iterations = 0;             // solver iterations (0 when closed form)
    std::vector<std::string> warnings;
    // Diagnostics for the stacked-regression estimators (0 when not applicable).
    Eigen::Index bins_used = 0;     // rows M in the stacked design
    Eigen::Index grid_points = 0;   // quantile levels J+1
};

} // namespace tailreg

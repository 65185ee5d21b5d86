// binning.hpp -- covariate-space partitioning: discrete covariates split by
// distinct value, continuous covariates sliced at equally spaced empirical
// quantiles, bins formed as the cross product. Also computes the per-bin
// moment blocks whose Schur complement gives the implicit bin weight.
#pragma once

#include "tailreg/dataset.hpp"

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace tailreg {

struct BinCoord {
    bool categorical = false;
    double value = 0.0; // category value when categorical
    double lo = 0.0;    // recorded slice bounds when continuous; the outer
    double hi = 0.0;    // bounds are the observed column min/max, so centers
                        // are finite midpoints and the last slice is closed
                        // on both ends
};

struct Partition {
    std::vector<std::vector<BinCoord>> bins;    // M x p descriptors
    MatrixXd centers;                           // M x (p+1), column 0 = 1
    MatrixXd rep_rows;                          // M x (p+1) representative rows
    std::vector<Eigen::Index> representatives;  // observation index per bin
    std::vector<Eigen::Index> counts;           // members per bin
    std::vector<Eigen::Index> member_index;     // n -> bin index
    std::vector<Eigen::Index> groups_per_column; // p: slices or distinct values
    std::vector<ColumnKind> effective_kinds;    // p: after zero-variance rules
    std::vector<std::string> warnings;

    Eigen::Index M() const { return static_cast<Eigen::Index>(bins.size()); }
};

struct PartitionConfig {
    // Constant in the slice-count rule k = ceil(c * sqrt(p) * (sqrt(n)/log n)^(1/p)),
    // with p counting continuous covariates only.
    double bins_constant = 1.6;
    // Explicit override of the per-covariate slice count (continuous columns).
    std::optional<int> slices_override;
};

// Number of quantile slices per continuous covariate.
int continuous_slice_count(Eigen::Index n, Eigen::Index p_continuous,
                           double bins_constant);

// Build the partition. Zero-variance continuous columns are reclassified as
// discrete (single value) with a warning. Empty cross-product cells are
// dropped; bins are ordered by their cross-product cell index.
Partition build_partition(const Dataset& data, const PartitionConfig& config = {});

// Covariate row (with intercept) of bin m's representative: the member
// closest to the geometric center in raw-scale Euclidean distance, ties
// broken by the lowest observation index. Throws "empty bin" on a bin with
// no members and on an out-of-range index.
VectorXd representative(const Partition& partition, Eigen::Index m);

struct BinMoments {
    double S0 = 0.0;      // count / n
    VectorXd S1;          // p: mean deviation from the geometric center (x n^-1)
    MatrixXd S2;          // p x p: scaled scatter about the geometric center
    double gamma = 0.0;   // S0 - S1' S2^+ S1 (Moore-Penrose), in [0, S0]
};

// Moment blocks per bin, centered at the geometric centers.
std::vector<BinMoments> bin_moments(const Partition& partition, const Dataset& data);

} // namespace tailreg

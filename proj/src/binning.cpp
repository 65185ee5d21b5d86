// binning.cpp -- partition construction and bin moment blocks.
#include "tailreg/binning.hpp"

#include "tailreg/mathutil.hpp"
#include "tailreg/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace tailreg {

int continuous_slice_count(Eigen::Index n, Eigen::Index p_continuous,
                           double bins_constant) {
    if (p_continuous <= 0) return 1;
    const double nn = static_cast<double>(n);
    const double pp = static_cast<double>(p_continuous);
    const double base = std::sqrt(nn) / std::log(nn);
    const double k = bins_constant * std::sqrt(pp) * std::pow(base, 1.0 / pp);
    return std::max(1, static_cast<int>(std::ceil(k - 1e-9)));
}

namespace {

// Per-column grouping rule: for discrete columns the sorted distinct values;
// for continuous columns the interior quantile edges plus observed min/max.
struct ColumnGroups {
    ColumnKind kind;
    std::vector<double> values; // discrete: distinct values (sorted)
    std::vector<double> edges;  // continuous: interior edges (sorted)
    double lo = 0.0, hi = 0.0;  // continuous: observed min/max
    Eigen::Index group_count() const {
        return kind == ColumnKind::discrete
                   ? static_cast<Eigen::Index>(values.size())
                   : static_cast<Eigen::Index>(edges.size()) + 1;
    }
    // Group index of x: discrete columns match the exact value; continuous
    // columns use right-closed slices (-inf, e1], (e1, e2], ..., (e_{k-1}, inf).
    Eigen::Index group_of(double x) const {
        if (kind == ColumnKind::discrete) {
            const auto it = std::lower_bound(values.begin(), values.end(), x);
            return static_cast<Eigen::Index>(it - values.begin());
        }
        const auto it = std::lower_bound(edges.begin(), edges.end(), x);
        return static_cast<Eigen::Index>(it - edges.begin());
    }
};

} // namespace

Partition build_partition(const Dataset& data, const PartitionConfig& config) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    if (n < 1) throw std::invalid_argument("build_partition: empty dataset");
    if (p < 1) throw std::invalid_argument("build_partition: no covariate columns");
    if (static_cast<Eigen::Index>(data.kinds.size()) != p)
        throw std::invalid_argument("build_partition: covariate kind list size mismatch");

    Partition part;

    // Effective kinds: continuous columns without variation become discrete.
    part.effective_kinds = data.kinds;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (data.kinds[static_cast<size_t>(j)] == ColumnKind::continuous) {
            const double lo = data.X.col(j + 1).minCoeff();
            const double hi = data.X.col(j + 1).maxCoeff();
            if (lo == hi) {
                part.effective_kinds[static_cast<size_t>(j)] = ColumnKind::discrete;
                part.warnings.push_back(
                    "covariate " + data.covariate_name(j) +
                    " has zero variance; treated as discrete with one value");
            }
        }
    }

    Eigen::Index p_cont = 0;
    for (const auto kind : part.effective_kinds)
        if (kind == ColumnKind::continuous) ++p_cont;

    const int k = config.slices_override
                      ? std::max(1, *config.slices_override)
                      : continuous_slice_count(n, p_cont, config.bins_constant);

    std::vector<ColumnGroups> cols(static_cast<size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) {
        auto& cg = cols[static_cast<size_t>(j)];
        cg.kind = part.effective_kinds[static_cast<size_t>(j)];
        const VectorXd col = data.X.col(j + 1);
        if (cg.kind == ColumnKind::discrete) {
            std::set<double> distinct(col.data(), col.data() + n);
            cg.values.assign(distinct.begin(), distinct.end());
        } else {
            cg.lo = col.minCoeff();
            cg.hi = col.maxCoeff();
            const std::vector<double> v(col.data(), col.data() + n);
            for (int l = 1; l < k; ++l)
                cg.edges.push_back(
                    empirical_quantile(v, static_cast<double>(l) / k));
            // Duplicate edges produce empty slices which are dropped below.
        }
    }

    // Cross-product cell index per observation (mixed-radix over columns).
    std::vector<long long> strides(static_cast<size_t>(p));
    long long stride = 1;
    for (Eigen::Index j = p - 1; j >= 0; --j) {
        strides[static_cast<size_t>(j)] = stride;
        stride *= static_cast<long long>(cols[static_cast<size_t>(j)].group_count());
    }

    std::map<long long, std::vector<Eigen::Index>> cells; // ordered -> determinism
    std::vector<long long> obs_cell(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        long long cell = 0;
        for (Eigen::Index j = 0; j < p; ++j)
            cell += strides[static_cast<size_t>(j)] *
                    static_cast<long long>(
                        cols[static_cast<size_t>(j)].group_of(data.X(i, j + 1)));
        obs_cell[static_cast<size_t>(i)] = cell;
        cells[cell].push_back(i);
    }

    const auto M = static_cast<Eigen::Index>(cells.size());
    part.bins.resize(static_cast<size_t>(M));
    part.centers.resize(M, p + 1);
    part.rep_rows.resize(M, p + 1);
    part.representatives.resize(static_cast<size_t>(M));
    part.counts.resize(static_cast<size_t>(M));
    part.member_index.resize(static_cast<size_t>(n));
    part.groups_per_column.resize(static_cast<size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j)
        part.groups_per_column[static_cast<size_t>(j)] =
            cols[static_cast<size_t>(j)].group_count();

    Eigen::Index m = 0;
    for (const auto& [cell, members] : cells) {
        // Decode the cell into per-column group indices.
        auto& coords = part.bins[static_cast<size_t>(m)];
        coords.resize(static_cast<size_t>(p));
        part.centers(m, 0) = 1.0;
        long long rem = cell;
        for (Eigen::Index j = 0; j < p; ++j) {
            const auto& cg = cols[static_cast<size_t>(j)];
            const long long g = rem / strides[static_cast<size_t>(j)];
            rem %= strides[static_cast<size_t>(j)];
            auto& bc = coords[static_cast<size_t>(j)];
            if (cg.kind == ColumnKind::discrete) {
                bc.categorical = true;
                bc.value = cg.values[static_cast<size_t>(g)];
                part.centers(m, j + 1) = bc.value;
            } else {
                bc.categorical = false;
                bc.lo = (g == 0) ? cg.lo : cg.edges[static_cast<size_t>(g - 1)];
                bc.hi = (g == static_cast<long long>(cg.edges.size()))
                            ? cg.hi
                            : cg.edges[static_cast<size_t>(g)];
                part.centers(m, j + 1) = 0.5 * (bc.lo + bc.hi);
            }
        }

        // Representative: raw-scale Euclidean distance to the center, ties
        // broken by the lowest observation index (members are in index order).
        double best_dist = std::numeric_limits<double>::infinity();
        Eigen::Index best_i = members.front();
        for (const Eigen::Index i : members) {
            double d2 = 0.0;
            for (Eigen::Index j = 0; j < p; ++j) {
                const double diff = data.X(i, j + 1) - part.centers(m, j + 1);
                d2 += diff * diff;
            }
            if (d2 < best_dist) {
                best_dist = d2;
                best_i = i;
            }
        }
        part.representatives[static_cast<size_t>(m)] = best_i;
        part.rep_rows.row(m) = data.X.row(best_i);
        part.counts[static_cast<size_t>(m)] = static_cast<Eigen::Index>(members.size());
        for (const Eigen::Index i : members) part.member_index[static_cast<size_t>(i)] = m;
        ++m;
    }
    return part;
}

VectorXd representative(const Partition& partition, Eigen::Index m) {
    if (m < 0 || m >= partition.M())
        throw std::invalid_argument("representative: empty bin (index out of range)");
    if (partition.counts[static_cast<size_t>(m)] == 0)
        throw std::invalid_argument("representative: empty bin");
    return partition.rep_rows.row(m);
}

std::vector<BinMoments> bin_moments(const Partition& partition, const Dataset& data) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    if (static_cast<Eigen::Index>(partition.member_index.size()) != n)
        throw std::invalid_argument("bin_moments: partition built from different data");

    std::vector<BinMoments> out(static_cast<size_t>(partition.M()));
    for (auto& bm : out) {
        bm.S1 = VectorXd::Zero(p);
        bm.S2 = MatrixXd::Zero(p, p);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index m = partition.member_index[static_cast<size_t>(i)];
        auto& bm = out[static_cast<size_t>(m)];
        const VectorXd d =
            (data.X.row(i).segment(1, p) - partition.centers.row(m).segment(1, p))
                .transpose();
        bm.S1 += d;
        bm.S2.selfadjointView<Eigen::Lower>().rankUpdate(d, 1.0);
    }
    for (Eigen::Index m = 0; m < partition.M(); ++m) {
        auto& bm = out[static_cast<size_t>(m)];
        bm.S0 = static_cast<double>(partition.counts[static_cast<size_t>(m)]) * inv_n;
        bm.S1 *= inv_n;
        bm.S2 = MatrixXd(bm.S2.selfadjointView<Eigen::Lower>()) * inv_n;
        const double reduction = bm.S1.dot(pseudo_inverse(bm.S2) * bm.S1);
        // Mathematically 0 <= gamma <= S0 (Schur complement of a Gram
        // matrix); clamp away floating-point spill at the boundaries.
        bm.gamma = std::clamp(bm.S0 - reduction, 0.0, bm.S0);
    }
    return out;
}

} // namespace tailreg

#include "tailreg/cli.hpp"

#include "tailreg/avar.hpp"
#include "tailreg/competitors.hpp"
#include "tailreg/mathutil.hpp"
#include "tailreg/parallel.hpp"
#include "tailreg/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tailreg {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// CSV parsing

// Split a CSV byte stream into records of fields. Handles quoted fields with
// doubled-quote escapes, embedded commas and newlines, and CRLF line ends.
std::vector<std::vector<std::string>> parse_csv_records(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;

    const auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    const auto end_record = [&] {
        end_field();
        // Skip records that are completely empty (blank lines).
        if (!(record.size() == 1 && record[0].empty())) records.push_back(record);
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
        case '"':
            if (!field_started && field.empty()) {
                quoted = true;
                field_started = true;
            } else {
                field += c; // stray quote inside an unquoted field: keep it
            }
            break;
        case ',':
            end_field();
            break;
        case '\r':
            break; // swallow; the \n (or EOF) ends the record
        case '\n':
            end_record();
            break;
        default:
            field += c;
            field_started = true;
            break;
        }
    }
    if (field_started || !field.empty() || !record.empty()) end_record();
    return records;
}

bool parse_double(const std::string& s, double* out) {
    const char* begin = s.c_str();
    char* parse_end = nullptr;
    const double v = std::strtod(begin, &parse_end);
    if (parse_end == begin) return false;
    while (*parse_end == ' ' || *parse_end == '\t') ++parse_end;
    if (*parse_end != '\0') return false;
    if (!std::isfinite(v)) return false;
    *out = v;
    return true;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    std::size_t b = s.find_last_not_of(" \t");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

} // namespace

CsvLoad load_csv(const std::string& path, const CsvRoles& roles) {
    if (roles.response.empty())
        throw std::invalid_argument("load_csv: a response column must be declared");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_csv: cannot open '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    const auto records = parse_csv_records(buffer.str());
    if (records.empty())
        throw std::runtime_error("load_csv: '" + path + "' has no header row");

    const std::vector<std::string>& header = records.front();
    std::map<std::string, std::size_t> column;
    for (std::size_t j = 0; j < header.size(); ++j) column[trim(header[j])] = j;
    const auto find_column = [&](const std::string& name) {
        const auto it = column.find(name);
        if (it == column.end())
            throw std::runtime_error("load_csv: column '" + name +
                                     "' not found in '" + path + "'");
        return it->second;
    };

    const std::size_t response_col = find_column(roles.response);
    std::vector<std::size_t> cov_cols;
    for (const ColumnRole& role : roles.covariates) {
        if (role.categorical && role.baseline.empty())
            throw std::invalid_argument("load_csv: categorical column '" + role.name +
                                        "' needs a declared baseline level");
        cov_cols.push_back(find_column(role.name));
    }
    const bool has_group = !roles.group.empty();
    const std::size_t group_col = has_group ? find_column(roles.group) : 0;

    // Pass 1: decide which rows are usable (or fail fast on the first bad cell).
    CsvLoad out;
    out.rows_read = static_cast<Eigen::Index>(records.size()) - 1;
    std::vector<std::size_t> kept;
    std::vector<VectorXd> numeric_rows; // response + numeric covariates per kept row
    const auto bad_cell = [&](std::size_t record_idx, const std::string& col,
                              const std::string& what) {
        if (roles.fail_fast)
            throw std::runtime_error("load_csv: row " + std::to_string(record_idx) +
                                     ", column '" + col + "': " + what);
    };
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() != header.size()) {
            bad_cell(r, "-", "expected " + std::to_string(header.size()) +
                                 " fields, found " + std::to_string(rec.size()));
            ++out.rows_dropped;
            continue;
        }
        bool ok = true;
        VectorXd nums(1 + static_cast<Eigen::Index>(cov_cols.size()));
        nums.setConstant(kNan);
        double v = 0.0;
        if (!parse_double(trim(rec[response_col]), &v)) {
            bad_cell(r, roles.response, "cannot parse '" + rec[response_col] + "'");
            ok = false;
        } else {
            nums(0) = v;
        }
        for (std::size_t k = 0; ok && k < cov_cols.size(); ++k) {
            const std::string cell = trim(rec[cov_cols[k]]);
            if (roles.covariates[k].categorical) {
                if (cell.empty()) {
                    bad_cell(r, roles.covariates[k].name, "empty categorical cell");
                    ok = false;
                }
            } else if (!parse_double(cell, &v)) {
                bad_cell(r, roles.covariates[k].name, "cannot parse '" + cell + "'");
                ok = false;
            } else {
                nums(1 + static_cast<Eigen::Index>(k)) = v;
            }
        }
        if (ok && has_group && trim(rec[group_col]).empty()) {
            bad_cell(r, roles.group, "empty group cell");
            ok = false;
        }
        if (!ok) {
            ++out.rows_dropped;
            continue;
        }
        kept.push_back(r);
        numeric_rows.push_back(std::move(nums));
    }

    // Pass 2: observed levels of each categorical column among kept rows.
    std::vector<std::vector<std::string>> levels(roles.covariates.size());
    for (std::size_t k = 0; k < roles.covariates.size(); ++k) {
        if (!roles.covariates[k].categorical) continue;
        std::set<std::string> seen;
        for (std::size_t r : kept) seen.insert(trim(records[r][cov_cols[k]]));
        if (!seen.count(roles.covariates[k].baseline))
            throw std::runtime_error("load_csv: baseline level '" +
                                     roles.covariates[k].baseline +
                                     "' never appears in column '" +
                                     roles.covariates[k].name + "'");
        for (const std::string& lev : seen)
            if (lev != roles.covariates[k].baseline)
                levels[k].push_back(lev); // std::set iterates in sorted order
    }

    Eigen::Index p = 0;
    for (std::size_t k = 0; k < roles.covariates.size(); ++k)
        p += roles.covariates[k].categorical
                 ? static_cast<Eigen::Index>(levels[k].size())
                 : 1;

    const auto n = static_cast<Eigen::Index>(kept.size());
    out.data.X.setZero(n, p + 1);
    out.data.X.col(0).setOnes();
    out.data.y.resize(n);
    out.data.kinds.clear();
    out.data.names.clear();
    for (std::size_t k = 0; k < roles.covariates.size(); ++k) {
        if (roles.covariates[k].categorical) {
            for (const std::string& lev : levels[k]) {
                out.data.kinds.push_back(ColumnKind::discrete);
                out.data.names.push_back(roles.covariates[k].name + "=" + lev);
            }
        } else {
            out.data.kinds.push_back(ColumnKind::continuous);
            out.data.names.push_back(roles.covariates[k].name);
        }
    }
    if (has_group) out.group_labels.resize(static_cast<std::size_t>(n));

    for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t r = kept[static_cast<std::size_t>(i)];
        out.data.y(i) = numeric_rows[static_cast<std::size_t>(i)](0);
        Eigen::Index col = 1;
        for (std::size_t k = 0; k < roles.covariates.size(); ++k) {
            if (roles.covariates[k].categorical) {
                const std::string cell = trim(records[r][cov_cols[k]]);
                for (const std::string& lev : levels[k])
                    out.data.X(i, col++) = cell == lev ? 1.0 : 0.0;
            } else {
                out.data.X(i, col++) =
                    numeric_rows[static_cast<std::size_t>(i)](1 + static_cast<Eigen::Index>(k));
            }
        }
        if (has_group)
            out.group_labels[static_cast<std::size_t>(i)] = trim(records[r][group_col]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bootstrap

BootstrapResult bootstrap_se(const Dataset& data,
                             const std::function<VectorXd(const Dataset&)>& fit,
                             int B, std::uint64_t seed, int threads) {
    if (B < 20) throw std::invalid_argument("bootstrap_se: need B >= 20 resamples");
    if (!fit) throw std::invalid_argument("bootstrap_se: missing fit function");
    const Eigen::Index n = data.n();
    if (n < 1) throw std::invalid_argument("bootstrap_se: empty dataset");
    const Eigen::Index p1 = data.X.cols();

    MatrixXd slots = MatrixXd::Constant(B, p1, kNan);
    parallel_for(
        static_cast<std::size_t>(B),
        [&](std::size_t b) {
            Rng rng(child_seed(seed, static_cast<std::uint64_t>(b)));
            Dataset resample;
            resample.kinds = data.kinds;
            resample.names = data.names;
            resample.X.resize(n, p1);
            resample.y.resize(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto pick = static_cast<Eigen::Index>(
                    rng.uniform_below(static_cast<std::uint64_t>(n)));
                resample.X.row(i) = data.X.row(pick);
                resample.y(i) = data.y(pick);
            }
            VectorXd est;
            try {
                est = fit(resample);
            } catch (const std::exception&) {
                return; // slot stays NaN
            }
            if (est.size() == p1 && est.allFinite())
                slots.row(static_cast<Eigen::Index>(b)) = est.transpose();
        },
        threads > 0 ? threads : default_thread_count());

    BootstrapResult out;
    std::vector<double> col;
    col.reserve(static_cast<std::size_t>(B));
    out.se.resize(p1);
    for (Eigen::Index j = 0; j < p1; ++j) {
        col.clear();
        for (int b = 0; b < B; ++b)
            if (slots.row(b).allFinite()) col.push_back(slots(b, j));
        if (j == 0) {
            out.effective_B = static_cast<int>(col.size());
            out.failures = B - out.effective_B;
            if (out.effective_B < 2)
                throw std::runtime_error(
                    "bootstrap_se: fewer than 2 of " + std::to_string(B) +
                    " resamples produced a fit");
        }
        out.se(j) = std::sqrt(sample_variance(col, 1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Group disparity

DisparityResult fit_disparity(
    const Dataset& data, const std::vector<std::string>& group_labels, double tau,
    const std::function<VectorXd(const Dataset&, double)>& fit,
    const std::string& baseline, int B, std::uint64_t seed, bool lower_tail,
    Eigen::Index min_group_rows, int threads) {
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("fit_disparity: tau must lie in (0, 1)");
    if (!fit) throw std::invalid_argument("fit_disparity: missing fit function");
    if (B != 0 && B < 20)
        throw std::invalid_argument("fit_disparity: bootstrap B must be 0 or >= 20");
    if (static_cast<Eigen::Index>(group_labels.size()) != data.n())
        throw std::invalid_argument(
            "fit_disparity: one group label per row is required");

    std::map<std::string, std::vector<Eigen::Index>> members;
    for (Eigen::Index i = 0; i < data.n(); ++i)
        members[group_labels[static_cast<std::size_t>(i)]].push_back(i);
    if (members.size() < 2)
        throw std::invalid_argument("fit_disparity: need at least two groups");
    if (!members.count(baseline))
        throw std::invalid_argument("fit_disparity: baseline group '" + baseline +
                                    "' does not appear in the data");
    const Eigen::Index min_rows =
        min_group_rows > 0 ? min_group_rows : 2 * data.X.cols();
    for (const auto& [name, rows] : members)
        if (static_cast<Eigen::Index>(rows.size()) < min_rows)
            throw std::runtime_error("fit_disparity: group '" + name + "' has " +
                                     std::to_string(rows.size()) +
                                     " rows; at least " + std::to_string(min_rows) +
                                     " are required");

    const double fit_tau = lower_tail ? 1.0 - tau : tau;
    const double sign = lower_tail ? -1.0 : 1.0;

    DisparityResult out;
    out.tau = tau;
    out.lower_tail = lower_tail;

    std::uint64_t group_index = 0;
    const auto fit_group = [&](const std::string& name,
                               const std::vector<Eigen::Index>& rows) {
        Dataset sub;
        sub.kinds = data.kinds;
        sub.names = data.names;
        sub.X.resize(static_cast<Eigen::Index>(rows.size()), data.X.cols());
        sub.y.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            sub.X.row(static_cast<Eigen::Index>(i)) = data.X.row(rows[i]);
            sub.y(static_cast<Eigen::Index>(i)) = sign * data.y(rows[i]);
        }
        GroupFit g;
        g.group = name;
        g.rows = static_cast<Eigen::Index>(rows.size());
        try {
            g.beta = sign * fit(sub, fit_tau);
        } catch (const std::exception& e) {
            throw std::runtime_error("fit_disparity: group '" + name +
                                     "': " + e.what());
        }
        if (B > 0) {
            const BootstrapResult bs = bootstrap_se(
                sub, [&](const Dataset& ds) { return fit(ds, fit_tau); }, B,
                child_seed(seed, group_index), threads);
            g.se = bs.se; // negating coefficients leaves their spread unchanged
            g.effective_B = bs.effective_B;
        }
        ++group_index;
        return g;
    };

    for (const auto& [name, rows] : members) {
        if (name == baseline)
            out.baseline = fit_group(name, rows);
        else
            out.groups.push_back(fit_group(name, rows));
    }

    const Eigen::Index p1 = data.X.cols();
    out.contrast.resize(static_cast<Eigen::Index>(out.groups.size()), p1);
    if (B > 0)
        out.contrast_se.resize(static_cast<Eigen::Index>(out.groups.size()), p1);
    for (std::size_t g = 0; g < out.groups.size(); ++g) {
        out.contrast.row(static_cast<Eigen::Index>(g)) =
            (out.groups[g].beta - out.baseline.beta).transpose();
        if (B > 0)
            out.contrast_se.row(static_cast<Eigen::Index>(g)) =
                (out.groups[g].se.array().square() +
                 out.baseline.se.array().square())
                    .sqrt()
                    .transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Estimator registry

namespace {

bool all_discrete(const Dataset& ds) {
    if (ds.kinds.empty()) return false;
    return std::all_of(ds.kinds.begin(), ds.kinds.end(),
                       [](ColumnKind k) { return k == ColumnKind::discrete; });
}

EsqrConfig at_tau(EsqrConfig c, double tau) {
    c.tau = tau;
    return c;
}

} // namespace

std::vector<std::string> known_estimators() {
    return {"esqr",         "esqr-discrete", "esqr-binned", "esqr-weighted",
            "esqr-bspline", "ln",            "ts",          "tsls",
            "qavg",         "wts"};
}

NamedEstimator make_estimator(const std::string& name, const EsqrConfig& base) {
    NamedEstimator est;
    est.name = name;
    if (name == "esqr") {
        est.fit = [base](const Dataset& ds, double tau) {
            return all_discrete(ds) ? fit_esqr_discrete(ds, at_tau(base, tau))
                                    : fit_esqr_binned(ds, at_tau(base, tau));
        };
    } else if (name == "esqr-discrete") {
        est.fit = [base](const Dataset& ds, double tau) {
            return fit_esqr_discrete(ds, at_tau(base, tau));
        };
    } else if (name == "esqr-binned") {
        est.fit = [base](const Dataset& ds, double tau) {
            return fit_esqr_binned(ds, at_tau(base, tau));
        };
    } else if (name == "esqr-weighted") {
        est.fit = [base](const Dataset& ds, double tau) {
            return fit_esqr_weighted(ds, at_tau(base, tau));
        };
    } else if (name == "esqr-bspline") {
        est.fit = [base](const Dataset& ds, double tau) {
            EsqrConfig cfg = at_tau(base, tau);
            cfg.backend = BackendKind::global_bspline;
            return fit_esqr_binned(ds, cfg);
        };
    } else if (name == "ln") {
        est.fit = [base](const Dataset& ds, double tau) {
            if (all_discrete(ds))
                return fit_linearization_discrete(ds, tau, base.es_convention);
            const EsqrConfig cfg = at_tau(base, tau);
            return fit_linearization(ds, build_esqr_artifacts(ds, cfg));
        };
    } else if (name == "ts") {
        est.fit = [](const Dataset& ds, double tau) { return fit_two_step(ds, tau); };
    } else if (name == "tsls") {
        est.fit = [](const Dataset& ds, double tau) { return fit_tsls(ds, tau); };
    } else if (name == "qavg") {
        est.fit = [](const Dataset& ds, double tau) {
            return fit_quantile_average(ds, tau);
        };
    } else if (name == "wts") {
        est.fit = [](const Dataset& ds, double tau) {
            return fit_weighted_two_step(ds, tau);
        };
    } else {
        std::string known;
        for (const std::string& k : known_estimators()) known += " " + k;
        throw std::invalid_argument("unknown estimator '" + name + "' (known:" +
                                    known + ")");
    }
    return est;
}

McEstimator make_mc_estimator(const std::string& name, const EsqrConfig& base) {
    const NamedEstimator named = make_estimator(name, base);
    return {named.name, [fit = named.fit](const Dataset& ds, double tau) {
                return fit(ds, tau).beta;
            }};
}

// ---------------------------------------------------------------------------
// Commands

namespace {

using nlohmann::json;

struct CommonOpts {
    double tau = 0.9;
    double delta = 0.5;
    std::uint64_t seed = 20260816;
    int threads = 0;
    std::string output = "tailreg-run";
    std::vector<std::string> estimators;
    double bins_constant = 1.6;
    long long grid_J = 0; // 0 = automatic rule
    std::string backend = "linear";
};

EsqrConfig base_config(const CommonOpts& c) {
    EsqrConfig cfg;
    cfg.tau = c.tau;
    cfg.delta = c.delta;
    cfg.bins_constant = c.bins_constant;
    if (c.grid_J > 0) cfg.grid_J = static_cast<Eigen::Index>(c.grid_J);
    if (c.backend == "linear")
        cfg.backend = BackendKind::global_linear;
    else if (c.backend == "bspline")
        cfg.backend = BackendKind::global_bspline;
    else if (c.backend == "local")
        cfg.backend = BackendKind::bin_local_linear;
    else
        throw std::invalid_argument("unknown backend '" + c.backend +
                                    "' (known: linear, bspline, local)");
    cfg.threads = c.threads > 0 ? c.threads : default_thread_count();
    return cfg;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file '" + path + "'");
    out << content;
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

// Every command emits <output>.manifest.json describing the exact run.
void write_manifest(const CommonOpts& c, const std::string& command,
                    json parameters, const std::vector<std::string>& files) {
    json m;
    m["schema_version"] = kManifestSchemaVersion;
    m["tool"] = "tailreg";
    m["version"] = kTailregVersion;
    m["command"] = command;
    parameters["tau"] = c.tau;
    parameters["delta"] = c.delta;
    parameters["seed"] = c.seed;
    parameters["threads"] = c.threads > 0 ? c.threads : default_thread_count();
    m["parameters"] = parameters;
    m["outputs"] = files;
    write_text_file(c.output + ".manifest.json", m.dump(2) + "\n");
}

std::string format_fit_row(const std::string& method, const std::string& coef,
                           double estimate, double se, bool have_se) {
    char buf[200];
    if (have_se)
        std::snprintf(buf, sizeof buf, "%s\t%s\t%.10g\t%.10g\n", method.c_str(),
                      coef.c_str(), estimate, se);
    else
        std::snprintf(buf, sizeof buf, "%s\t%s\t%.10g\t\n", method.c_str(),
                      coef.c_str(), estimate);
    return buf;
}

struct FitOpts {
    std::string input;
    std::string response;
    std::vector<std::string> covariate_specs;
    std::string group;
    std::string baseline;
    bool lower_tail = false;
    bool fail_fast = false;
    int bootstrap = 0;
};

int run_fit(const CommonOpts& c, const FitOpts& f) {
    CsvRoles roles;
    roles.response = f.response;
    roles.group = f.group;
    roles.fail_fast = f.fail_fast;
    for (const std::string& spec : f.covariate_specs) {
        // name            -> numeric column
        // name:cat:LEVEL  -> categorical with declared baseline LEVEL
        ColumnRole role;
        const auto c1 = spec.find(':');
        if (c1 == std::string::npos) {
            role.name = spec;
        } else {
            role.name = spec.substr(0, c1);
            const auto c2 = spec.find(':', c1 + 1);
            const std::string kind = spec.substr(c1 + 1, c2 == std::string::npos
                                                             ? std::string::npos
                                                             : c2 - c1 - 1);
            if (kind != "cat")
                throw std::invalid_argument("covariate spec '" + spec +
                                            "': expected name or name:cat:baseline");
            if (c2 == std::string::npos)
                throw std::invalid_argument("covariate spec '" + spec +
                                            "': categorical needs a baseline level");
            role.categorical = true;
            role.baseline = spec.substr(c2 + 1);
        }
        roles.covariates.push_back(role);
    }
    const CsvLoad load = load_csv(f.input, roles);
    std::printf("loaded %s: %lld rows read, %lld dropped, %lld kept, %lld design columns\n",
                f.input.c_str(), static_cast<long long>(load.rows_read),
                static_cast<long long>(load.rows_dropped),
                static_cast<long long>(load.data.n()),
                static_cast<long long>(load.data.X.cols()));

    const EsqrConfig base = base_config(c);
    std::vector<std::string> names = c.estimators;
    if (names.empty()) names = {"esqr"};
    std::vector<std::string> files;
    json params;
    params["input"] = f.input;
    params["response"] = f.response;
    params["covariates"] = f.covariate_specs;
    params["estimators"] = names;
    params["bootstrap"] = f.bootstrap;
    params["rows_read"] = static_cast<long long>(load.rows_read);
    params["rows_dropped"] = static_cast<long long>(load.rows_dropped);

    if (!f.group.empty()) {
        // Disparity mode: one estimator, per-group fits and contrasts.
        if (f.baseline.empty())
            throw std::invalid_argument("--group requires --baseline");
        const NamedEstimator est = make_estimator(names.front(), base);
        const DisparityResult res = fit_disparity(
            load.data, load.group_labels, c.tau,
            [&](const Dataset& ds, double tau) { return est.fit(ds, tau).beta; },
            f.baseline, f.bootstrap, c.seed, f.lower_tail, 0, c.threads);

        std::string tsv = "group\tcoefficient\testimate\tse\tcontrast\tcontrast_se\n";
        const auto coef_name = [&](Eigen::Index j) {
            return j == 0 ? std::string("intercept")
                          : load.data.covariate_name(j - 1);
        };
        std::printf("\n%s tail disparity at tau=%g, estimator %s, baseline '%s'\n",
                    f.lower_tail ? "lower" : "upper", c.tau, est.name.c_str(),
                    f.baseline.c_str());
        for (Eigen::Index j = 0; j < load.data.X.cols(); ++j) {
            char buf[240];
            std::snprintf(buf, sizeof buf, "%s\t%s\t%.10g\t%.10g\t\t\n",
                          res.baseline.group.c_str(), coef_name(j).c_str(),
                          res.baseline.beta(j),
                          res.baseline.se.size() ? res.baseline.se(j) : kNan);
            tsv += buf;
        }
        for (std::size_t g = 0; g < res.groups.size(); ++g) {
            for (Eigen::Index j = 0; j < load.data.X.cols(); ++j) {
                char buf[240];
                std::snprintf(
                    buf, sizeof buf, "%s\t%s\t%.10g\t%.10g\t%.10g\t%.10g\n",
                    res.groups[g].group.c_str(), coef_name(j).c_str(),
                    res.groups[g].beta(j),
                    res.groups[g].se.size() ? res.groups[g].se(j) : kNan,
                    res.contrast(static_cast<Eigen::Index>(g), j),
                    res.contrast_se.size()
                        ? res.contrast_se(static_cast<Eigen::Index>(g), j)
                        : kNan);
                tsv += buf;
            }
            std::printf("  %s - %s intercept gap: %.6g\n",
                        res.groups[g].group.c_str(), f.baseline.c_str(),
                        res.contrast(static_cast<Eigen::Index>(g), 0));
        }
        const std::string path = c.output + ".disparity.tsv";
        write_text_file(path, tsv);
        files.push_back(path);
        params["group"] = f.group;
        params["baseline"] = f.baseline;
        params["lower_tail"] = f.lower_tail;
        write_manifest(c, "fit", params, files);
        std::printf("wrote %s\n", path.c_str());
        return 0;
    }

    std::string tsv = "method\tcoefficient\testimate\tse\n";
    bool any_failed = false;
    for (const std::string& name : names) {
        FitResult fit;
        try {
            const NamedEstimator est = make_estimator(name, base);
            fit = est.fit(load.data, c.tau);
            if (f.bootstrap > 0) {
                const BootstrapResult bs = bootstrap_se(
                    load.data,
                    [&](const Dataset& ds) { return est.fit(ds, c.tau).beta; },
                    f.bootstrap, c.seed, c.threads);
                fit.se = bs.se;
                std::printf("%s: bootstrap B=%d effective=%d\n", name.c_str(),
                            f.bootstrap, bs.effective_B);
            }
        } catch (const std::exception& e) {
            std::fprintf(stderr, "estimator %s failed: %s\n", name.c_str(), e.what());
            any_failed = true;
            continue;
        }
        std::printf("\nmethod %s (objective %.6g, %lld stacked rows)\n", name.c_str(),
                    fit.objective, static_cast<long long>(fit.bins_used));
        for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
            const std::string coef =
                j == 0 ? std::string("intercept") : load.data.covariate_name(j - 1);
            if (fit.se.size())
                std::printf("  %-16s %12.6g  (se %.6g)\n", coef.c_str(), fit.beta(j),
                            fit.se(j));
            else
                std::printf("  %-16s %12.6g\n", coef.c_str(), fit.beta(j));
            tsv += format_fit_row(name, coef, fit.beta(j),
                                  fit.se.size() ? fit.se(j) : 0.0,
                                  fit.se.size() > 0);
        }
        for (const std::string& w : fit.warnings)
            std::printf("  warning: %s\n", w.c_str());
    }
    const std::string path = c.output + ".fit.tsv";
    write_text_file(path, tsv);
    files.push_back(path);
    write_manifest(c, "fit", params, files);
    std::printf("wrote %s\n", path.c_str());
    return any_failed ? 1 : 0;
}

struct SimulateOpts {
    std::string dgp = "het-uniform";
    long long n = 1000;
    int reps = 200;
};

int run_simulate(const CommonOpts& c, const SimulateOpts& s) {
    const DgpSpec spec = parse_dgp(s.dgp);
    std::vector<std::string> names = c.estimators;
    if (names.empty()) names = {"ts", "esqr"};
    const EsqrConfig base = base_config(c);
    std::vector<McEstimator> ests;
    for (const std::string& name : names) ests.push_back(make_mc_estimator(name, base));

    McConfig mc;
    mc.reps = s.reps;
    mc.n = static_cast<Eigen::Index>(s.n);
    mc.tau = c.tau;
    mc.seed = c.seed;
    mc.threads = c.threads;
    const McReport report = run_monte_carlo(spec, ests, mc);

    const std::string table = mc_report_table(report);
    std::fputs(table.c_str(), stdout);
    const std::string path = c.output + ".mc.tsv";
    write_text_file(path, table);
    json params;
    params["dgp"] = s.dgp;
    params["n"] = s.n;
    params["reps"] = s.reps;
    params["estimators"] = names;
    write_manifest(c, "simulate", params, {path});
    std::printf("wrote %s\n", path.c_str());

    int failed = 0;
    for (std::size_t e = 0; e < report.failures.size(); ++e) failed += report.failures[e];
    if (failed > 0)
        std::fprintf(stderr, "%d replication fits failed across estimators\n", failed);
    return failed == 0 ? 0 : 1;
}

struct AvarOpts {
    std::string dgp = "location-scale";
    long long sample_points = 1000000;
};

int run_avar(const CommonOpts& c, const AvarOpts& a) {
    const DgpSpec spec = parse_dgp(a.dgp);
    const ModelFunctionals fn = functionals_from_dgp(
        spec, c.tau, static_cast<Eigen::Index>(a.sample_points), c.seed);
    const std::vector<AvarMethod> methods = {
        AvarMethod::esqr, AvarMethod::ts, AvarMethod::ln,     AvarMethod::tsls,
        AvarMethod::j1,   AvarMethod::j2, AvarMethod::optimal};

    std::vector<AvarReport> reports;
    for (AvarMethod m : methods) reports.push_back(avar(m, fn, c.tau));

    std::string avar_tsv = "method\trow\tcol\tsandwich\n";
    for (const AvarReport& rep : reports)
        for (Eigen::Index i = 0; i < rep.sandwich.rows(); ++i)
            for (Eigen::Index j = 0; j < rep.sandwich.cols(); ++j) {
                char buf[120];
                std::snprintf(buf, sizeof buf, "%s\t%lld\t%lld\t%.10g\n",
                              rep.method.c_str(), static_cast<long long>(i),
                              static_cast<long long>(j), rep.sandwich(i, j));
                avar_tsv += buf;
            }

    std::string are_tsv = "baseline\tcandidate\tnorm\tare\n";
    std::printf("asymptotic covariance at tau=%g on model %s (%lld support points)\n",
                c.tau, spec.name().c_str(), static_cast<long long>(fn.size()));
    for (std::size_t i = 0; i < reports.size(); ++i) {
        std::printf("  %-8s diag:", reports[i].method.c_str());
        for (Eigen::Index j = 0; j < reports[i].sandwich.rows(); ++j)
            std::printf(" %.6g", reports[i].sandwich(j, j));
        std::printf("\n");
        for (std::size_t j = 0; j < reports.size(); ++j) {
            for (AreNorm norm : {AreNorm::frobenius, AreNorm::determinant}) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "%s\t%s\t%s\t%.10g\n",
                              reports[i].method.c_str(), reports[j].method.c_str(),
                              norm == AreNorm::frobenius ? "frobenius" : "determinant",
                              are(reports[i], reports[j], norm));
                are_tsv += buf;
            }
        }
    }
    const std::string path_avar = c.output + ".avar.tsv";
    const std::string path_are = c.output + ".are.tsv";
    write_text_file(path_avar, avar_tsv);
    write_text_file(path_are, are_tsv);
    json params;
    params["dgp"] = a.dgp;
    params["sample_points"] = a.sample_points;
    write_manifest(c, "avar", params, {path_avar, path_are});
    std::printf("wrote %s and %s\n", path_avar.c_str(), path_are.c_str());
    return 0;
}

struct CounterexampleOpts {
    int reps = 200;
    long long sample_n = 1000;
    long long fit_n = 100000;
};

int run_counterexample(const CommonOpts& c, const CounterexampleOpts& x) {
    const double tau = 0.5; // the counterexample's tail level
    const double pop = superquantile_population_slope();

    std::vector<double> slopes(static_cast<std::size_t>(x.reps));
    parallel_for(
        static_cast<std::size_t>(x.reps),
        [&](std::size_t r) {
            slopes[r] = superquantile_sample_fit(
                            static_cast<Eigen::Index>(x.sample_n),
                            child_seed(c.seed, static_cast<std::uint64_t>(r)))
                            .slope;
        },
        c.threads > 0 ? c.threads : default_thread_count());
    const double center = pairwise_mean(slopes);
    const double spread = std::sqrt(sample_variance(slopes, 1));

    EsqrConfig cfg = base_config(c);
    cfg.tau = tau;
    const Dataset big = sample_dgp(DgpSpec::counterexample(),
                                   static_cast<Eigen::Index>(x.fit_n),
                                   child_seed(c.seed, static_cast<std::uint64_t>(x.reps)));
    const FitResult fit = fit_esqr_binned(big, cfg);

    std::printf("superquantile regression vs tail regression on Y = 1 + X*eps "
                "(tau = %.2f, true tail slope 0.5)\n", tau);
    std::printf("  population superquantile slope : %.6f\n", pop);
    std::printf("  sample superquantile fits      : mean %.4f (sd %.4f) over %d runs"
                " of n=%lld\n", center, spread, x.reps, x.sample_n);
    std::printf("  stacked tail regression (esqr) : slope %.4f at n=%lld\n",
                fit.beta(1), x.fit_n);
    std::printf("  superquantile regression converges to %.4f, not the tail slope "
                "0.5; the stacked estimator recovers it.\n", pop);

    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "quantity\tvalue\n"
                  "population_superquantile_slope\t%.10g\n"
                  "sample_superquantile_mean\t%.10g\n"
                  "sample_superquantile_sd\t%.10g\n"
                  "esqr_intercept\t%.10g\n"
                  "esqr_slope\t%.10g\n"
                  "true_tail_slope\t0.5\n",
                  pop, center, spread, fit.beta(0), fit.beta(1));
    const std::string path = c.output + ".counterexample.tsv";
    write_text_file(path, buf);
    json params;
    params["reps"] = x.reps;
    params["sample_n"] = x.sample_n;
    params["fit_n"] = x.fit_n;
    write_manifest(c, "counterexample", params, {path});
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"tailreg: linear expected-shortfall (tail) regression toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI config file; command-line flags override it");

    CommonOpts c;
    const auto add_common = [&](CLI::App* sub, bool with_estimators) {
        sub->add_option("--tau", c.tau, "tail level in (0, 1)")
            ->check(CLI::Range(1e-6, 1.0 - 1e-6));
        sub->add_option("--delta", c.delta, "level-band half-width parameter");
        sub->add_option("--seed", c.seed, "master seed");
        sub->add_option("--threads", c.threads,
                        "worker threads (0 = TAILREG_THREADS or hardware)");
        sub->add_option("--output", c.output, "output path prefix");
        sub->add_option("--bins-constant", c.bins_constant,
                        "bin-count constant for the binned estimators");
        sub->add_option("--grid-J", c.grid_J, "override the level-grid size rule");
        sub->add_option("--backend", c.backend,
                        "quantile backend: linear | bspline | local");
        if (with_estimators)
            sub->add_option("--estimators", c.estimators,
                            "comma-separated estimator names")
                ->delimiter(',');
    };

    FitOpts f;
    CLI::App* fit = app.add_subcommand("fit", "fit tail regressions on a CSV file");
    add_common(fit, true);
    fit->add_option("--input", f.input, "CSV file with a header row")->required();
    fit->add_option("--response", f.response, "response column name")->required();
    fit->add_option("--covariates", f.covariate_specs,
                    "covariate specs: name or name:cat:baseline")
        ->required()
        ->delimiter(',');
    fit->add_option("--group", f.group, "categorical group column for disparity");
    fit->add_option("--baseline", f.baseline, "baseline group for contrasts");
    fit->add_flag("--lower-tail", f.lower_tail,
                  "analyze the lower tail (negate response at level 1 - tau)");
    fit->add_flag("--fail-fast", f.fail_fast,
                  "error on malformed cells instead of dropping rows");
    fit->add_option("--bootstrap", f.bootstrap, "bootstrap resamples (0 = off)");

    SimulateOpts s;
    CLI::App* sim =
        app.add_subcommand("simulate", "Monte Carlo study on a generating model");
    add_common(sim, true);
    sim->add_option("--dgp", s.dgp, "generating model name")->required();
    sim->add_option("--n", s.n, "sample size per replication");
    sim->add_option("--reps", s.reps, "number of replications");

    AvarOpts a;
    CLI::App* av = app.add_subcommand(
        "avar", "asymptotic covariance matrices and relative efficiencies");
    add_common(av, false);
    av->add_option("--dgp", a.dgp, "generating model name")->required();
    av->add_option("--sample-points", a.sample_points,
                   "design draws for models without finite support");

    CounterexampleOpts x;
    CLI::App* cx = app.add_subcommand(
        "counterexample",
        "superquantile regression vs tail regression demonstration");
    add_common(cx, false);
    cx->add_option("--reps", x.reps, "sample-fit replications");
    cx->add_option("--sample-n", x.sample_n, "sample size per sample fit");
    cx->add_option("--fit-n", x.fit_n, "sample size for the stacked fit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (fit->parsed()) return run_fit(c, f);
        if (sim->parsed()) return run_simulate(c, s);
        if (av->parsed()) return run_avar(c, a);
        if (cx->parsed()) return run_counterexample(c, x);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2; // unreachable: a subcommand is required
}

} // namespace tailreg

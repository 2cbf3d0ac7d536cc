#include "rtalign/regress.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "rtalign/linalg.hpp"
#include "rtalign/rng.hpp"

namespace rtalign {

namespace {

void design_row(const RegressionRow& row, bool include_surprisal, double* out) {
    std::size_t i = 0;
    if (include_surprisal) {
        if (!row.surprisal_bits || !std::isfinite(*row.surprisal_bits)) {
            throw ConstructionError("row is missing a finite surprisal value");
        }
        out[i++] = *row.surprisal_bits;
    }
    out[i++] = row.unigram_bits;
    out[i++] = row.length_chars;
    out[i] = 1.0;
}

RegressionFit solve_normal_equations(const DesignMatrix& dm, double rho) {
    const std::size_t n = dm.n, d = dm.d;
    // A = X^T X + rho I, b = X^T y
    std::vector<double> a(d * d, 0.0), b(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = &dm.x[r * d];
        for (std::size_t i = 0; i < d; ++i) {
            b[i] += xr[i] * dm.y[r];
            for (std::size_t j = 0; j <= i; ++j) a[i * d + j] += xr[i] * xr[j];
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        a[i * d + i] += rho;
        for (std::size_t j = i + 1; j < d; ++j) a[i * d + j] = a[j * d + i];
    }
    const std::vector<double> l = linalg::cholesky_factor(a, d);
    RegressionFit fit;
    fit.beta = linalg::cholesky_solve_vec(l, d, b);
    fit.rho = rho;
    fit.column_names = dm.column_names;
    double ssr = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double pred = 0.0;
        for (std::size_t i = 0; i < d; ++i) pred += dm.x[r * d + i] * fit.beta[i];
        const double e = dm.y[r] - pred;
        ssr += e * e;
    }
    fit.sigma2 = ssr / static_cast<double>(n);
    for (double v : fit.beta) {
        if (!std::isfinite(v)) throw NumericError("non-finite regression coefficient");
    }
    return fit;
}

std::vector<double> predictions(const std::vector<RegressionRow>& rows,
                                const RegressionFit& fit) {
    const bool with_surprisal = fit.uses_surprisal();
    std::vector<double> out(rows.size());
    double buf[4];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        design_row(rows[i], with_surprisal, buf);
        out[i] = fit.predict(buf);
    }
    return out;
}

}  // namespace

double RegressionFit::predict(const double* row) const {
    double v = 0.0;
    for (std::size_t i = 0; i < beta.size(); ++i) v += row[i] * beta[i];
    return v;
}

DesignMatrix build_design_matrix(const std::vector<RegressionRow>& rows,
                                 bool include_surprisal) {
    if (rows.empty()) throw ConstructionError("cannot build a design matrix from 0 rows");
    DesignMatrix dm;
    dm.n = rows.size();
    dm.d = include_surprisal ? 4 : 3;
    dm.column_names = include_surprisal
                          ? std::vector<std::string>{"surprisal", "unigram", "length", "intercept"}
                          : std::vector<std::string>{"unigram", "length", "intercept"};
    dm.x.resize(dm.n * dm.d);
    dm.y.resize(dm.n);
    for (std::size_t r = 0; r < dm.n; ++r) {
        design_row(rows[r], include_surprisal, &dm.x[r * dm.d]);
        if (!std::isfinite(rows[r].rt_ms)) throw ConstructionError("non-finite reading time");
        dm.y[r] = rows[r].rt_ms;
    }
    return dm;
}

RegressionFit ridge_fit(const DesignMatrix& dm, double rho) {
    if (!(rho > 0.0)) throw DomainError("ridge_fit requires rho > 0");
    for (double v : dm.x) {
        if (!std::isfinite(v)) throw NumericError("non-finite design entry");
    }
    return solve_normal_equations(dm, rho);
}

RegressionFit ols_fit(const DesignMatrix& dm) {
    try {
        RegressionFit fit = solve_normal_equations(dm, 0.0);
        fit.rho = 0.0;
        return fit;
    } catch (const NotSpdError& e) {
        throw SingularDesignError(std::string("OLS design is rank deficient: ") + e.what());
    }
}

std::vector<double> gaussian_loglik(const std::vector<double>& y,
                                    const std::vector<double>& y_hat, double sigma2) {
    if (!(sigma2 > 0.0)) throw DomainError("gaussian_loglik requires sigma2 > 0");
    if (y.size() != y_hat.size()) throw DomainError("gaussian_loglik length mismatch");
    const double c = -0.5 * std::log(2.0 * std::numbers::pi * sigma2);
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = y[i] - y_hat[i];
        out[i] = c - e * e / (2.0 * sigma2);
    }
    return out;
}

std::vector<double> delta_llh_per_row(const std::vector<RegressionRow>& rows,
                                      const RegressionFit& target_fit,
                                      const RegressionFit& baseline_fit) {
    if (rows.empty()) throw DomainError("delta_llh on empty rows");
    std::vector<double> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = rows[i].rt_ms;
    const std::vector<double> ll_target =
        gaussian_loglik(y, predictions(rows, target_fit), target_fit.sigma2);
    const std::vector<double> ll_baseline =
        gaussian_loglik(y, predictions(rows, baseline_fit), baseline_fit.sigma2);
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = ll_target[i] - ll_baseline[i];
    return out;
}

double delta_llh(const std::vector<RegressionRow>& rows, const RegressionFit& target_fit,
                 const RegressionFit& baseline_fit) {
    const std::vector<double> d = delta_llh_per_row(rows, target_fit, baseline_fit);
    return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double mse(const std::vector<double>& y, const std::vector<double>& y_hat) {
    if (y.empty() || y.size() != y_hat.size()) throw DomainError("mse on empty/mismatched input");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = y[i] - y_hat[i];
        s += e * e;
    }
    return s / static_cast<double>(y.size());
}

CVReport kfold_cv(const std::vector<RegressionRow>& rows, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw DomainError("kfold_cv requires k >= 2");
    if (rows.size() < k) throw DomainError("kfold_cv requires at least k rows");
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    // Fold sizes differ by at most one; remainder rows go to the earliest
    // folds.
    const std::size_t base = rows.size() / k;
    const std::size_t extra = rows.size() % k;

    CVReport report;
    report.k = k;
    report.n_rows = rows.size();
    std::vector<double> all_dllh;
    all_dllh.reserve(rows.size());
    double sse = 0.0;

    std::size_t offset = 0;
    for (std::size_t fold = 0; fold < k; ++fold) {
        const std::size_t fold_size = base + (fold < extra ? 1 : 0);
        std::vector<RegressionRow> train_rows, eval_rows;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const bool in_fold = i >= offset && i < offset + fold_size;
            (in_fold ? eval_rows : train_rows).push_back(rows[order[i]]);
        }
        offset += fold_size;

        const DesignMatrix dm_target = build_design_matrix(train_rows, true);
        const DesignMatrix dm_baseline = build_design_matrix(train_rows, false);
        FoldFits fits{ols_fit(dm_target), ols_fit(dm_baseline)};

        const std::vector<double> dllh =
            delta_llh_per_row(eval_rows, fits.target, fits.baseline);
        all_dllh.insert(all_dllh.end(), dllh.begin(), dllh.end());
        double buf[4];
        for (const auto& row : eval_rows) {
            design_row(row, true, buf);
            const double e = row.rt_ms - fits.target.predict(buf);
            sse += e * e;
        }
        report.fold_fits.push_back(std::move(fits));
    }

    const double n = static_cast<double>(rows.size());
    report.mean_dllh_nats = std::accumulate(all_dllh.begin(), all_dllh.end(), 0.0) / n;
    double var = 0.0;
    for (double d : all_dllh) var += (d - report.mean_dllh_nats) * (d - report.mean_dllh_nats);
    report.dllh_se = rows.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
    report.mean_mse = sse / n;

    for (std::size_t c = 0; c < report.fold_fits[0].target.column_names.size(); ++c) {
        double mean = 0.0;
        for (const auto& fits : report.fold_fits) mean += fits.target.beta[c];
        report.coefficient_means[report.fold_fits[0].target.column_names[c]] =
            mean / static_cast<double>(k);
    }
    return report;
}

std::string to_json(const CVReport& report) {
    nlohmann::json j;
    j["k"] = report.k;
    j["n_rows"] = report.n_rows;
    j["mean_dllh_nats"] = report.mean_dllh_nats;
    j["dllh_se"] = report.dllh_se;
    j["mean_mse"] = report.mean_mse;
    j["coefficient_means"] = report.coefficient_means;
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& fits : report.fold_fits) {
        nlohmann::json f;
        f["target"] = {{"beta", fits.target.beta},
                       {"sigma2", fits.target.sigma2},
                       {"columns", fits.target.column_names}};
        f["baseline"] = {{"beta", fits.baseline.beta},
                         {"sigma2", fits.baseline.sigma2},
                         {"columns", fits.baseline.column_names}};
        folds.push_back(std::move(f));
    }
    j["folds"] = std::move(folds);
    return j.dump(2);
}

std::string fold_coefficients_csv(const CVReport& report) {
    std::ostringstream out;
    out << "fold,column,beta\n";
    for (std::size_t fold = 0; fold < report.fold_fits.size(); ++fold) {
        const RegressionFit& fit = report.fold_fits[fold].target;
        for (std::size_t c = 0; c < fit.beta.size(); ++c) {
            out << fold << "," << fit.column_names[c] << ",";
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", fit.beta[c]);
            out << buf << "\n";
        }
    }
    return out.str();
}

}  // namespace rtalign

#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "rtalign/regress.hpp"
#include "rtalign/rng.hpp"

using namespace rtalign;

namespace {

// Brute-force normal-equations solve by Gauss-Jordan, independent of the
// Cholesky path under test.
std::vector<double> direct_solve(const DesignMatrix& dm, double rho) {
    const std::size_t n = dm.n, d = dm.d;
    std::vector<double> a(d * d, 0.0), b(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) {
            b[i] += dm.x[r * d + i] * dm.y[r];
            for (std::size_t j = 0; j < d; ++j) a[i * d + j] += dm.x[r * d + i] * dm.x[r * d + j];
        }
    for (std::size_t i = 0; i < d; ++i) a[i * d + i] += rho;
    for (std::size_t col = 0; col < d; ++col) {
        const double piv = a[col * d + col];
        b[col] /= piv;
        for (std::size_t j = 0; j < d; ++j) a[col * d + j] /= piv;
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = a[r * d + col];
            b[r] -= f * b[col];
            for (std::size_t j = 0; j < d; ++j) a[r * d + j] -= f * a[col * d + j];
        }
    }
    return b;
}

std::vector<RegressionRow> synthetic_rows(std::size_t n, double b_surp, double noise,
                                          std::uint64_t seed) {
    Rng rng(seed);
    std::vector<RegressionRow> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        RegressionRow row;
        row.surprisal_bits = 1.0 + 6.0 * rng.uniform();
        row.unigram_bits = 2.0 + 8.0 * rng.uniform();
        row.length_chars = 1.0 + static_cast<double>(rng.uniform_int(10));
        row.rt_ms = 50.0 + b_surp * *row.surprisal_bits + 2.0 * row.unigram_bits +
                    3.0 * row.length_chars + rng.normal(0.0, noise);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("build_design_matrix assembles target and baseline columns") {
    std::vector<RegressionRow> rows = {{2.0, 3.0, 5.0, 100.0}};
    const DesignMatrix target = build_design_matrix(rows, true);
    CHECK(target.n == 1);
    CHECK(target.d == 4);
    CHECK(target.x == std::vector<double>{2.0, 3.0, 5.0, 1.0});
    CHECK(target.y == std::vector<double>{100.0});

    const DesignMatrix baseline = build_design_matrix(rows, false);
    CHECK(baseline.d == 3);
    CHECK(baseline.x == std::vector<double>{3.0, 5.0, 1.0});

    CHECK_THROWS_AS(build_design_matrix({}, true), ConstructionError);

    rows[0].surprisal_bits.reset();
    CHECK_THROWS_AS(build_design_matrix(rows, true), ConstructionError);
    CHECK_NOTHROW(build_design_matrix(rows, false));
}

TEST_CASE("ridge_fit scalar closed forms") {
    DesignMatrix dm;
    dm.n = 2;
    dm.d = 1;
    dm.x = {1.0, 1.0};
    dm.y = {2.0, 4.0};
    dm.column_names = {"intercept"};
    CHECK(ridge_fit(dm, 1e-12).beta[0] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(ridge_fit(dm, 1e-5).beta[0] == doctest::Approx(6.0 / (2.0 + 1e-5)).epsilon(1e-12));
    CHECK_THROWS_AS(ridge_fit(dm, 0.0), DomainError);
    CHECK_THROWS_AS(ridge_fit(dm, -1.0), DomainError);
}

TEST_CASE("ridge_fit matches a direct normal-equations solve on a random system") {
    Rng rng(17);
    DesignMatrix dm;
    dm.n = 200;
    dm.d = 4;
    dm.x.resize(dm.n * dm.d);
    dm.y.resize(dm.n);
    for (double& v : dm.x) v = rng.normal(0.0, 1.0);
    for (double& v : dm.y) v = rng.normal(0.0, 1.0);
    dm.column_names = {"a", "b", "c", "d"};

    const RegressionFit fit = ridge_fit(dm, 1e-5);
    const std::vector<double> oracle = direct_solve(dm, 1e-5);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(fit.beta[i] - oracle[i]) < 1e-8 * std::max(1.0, std::abs(oracle[i])));
    }
}

TEST_CASE("ols_fit recovers exact linear data") {
    const std::vector<double> truth = {4.0, -2.0, 0.5, 30.0};
    std::vector<RegressionRow> rows;
    Rng rng(3);
    for (std::size_t i = 0; i < 50; ++i) {
        RegressionRow row;
        row.surprisal_bits = rng.uniform() * 5.0;
        row.unigram_bits = rng.uniform() * 9.0;
        row.length_chars = 1.0 + static_cast<double>(rng.uniform_int(9));
        row.rt_ms = truth[0] * *row.surprisal_bits + truth[1] * row.unigram_bits +
                    truth[2] * row.length_chars + truth[3];
        rows.push_back(row);
    }
    const RegressionFit fit = ols_fit(build_design_matrix(rows, true));
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(fit.beta[i] - truth[i]) < 1e-10);
    CHECK(fit.sigma2 < 1e-16);
}

TEST_CASE("ols_fit rejects rank-deficient designs") {
    DesignMatrix dm;
    dm.n = 3;
    dm.d = 2;
    dm.x = {1.0, 2.0, 1.0, 2.0, 1.0, 2.0};  // second column = 2 * first
    dm.y = {1.0, 2.0, 3.0};
    dm.column_names = {"a", "a2"};
    CHECK_THROWS_AS(ols_fit(dm), SingularDesignError);
}

TEST_CASE("OLS residuals are orthogonal to the design columns") {
    Rng rng(23);
    DesignMatrix dm;
    dm.n = 500;
    dm.d = 3;
    dm.x.resize(dm.n * dm.d);
    dm.y.resize(dm.n);
    for (std::size_t r = 0; r < dm.n; ++r) {
        dm.x[r * 3 + 0] = rng.normal(0.0, 1.0);
        dm.x[r * 3 + 1] = rng.normal(0.0, 1.0);
        dm.x[r * 3 + 2] = 1.0;
        dm.y[r] = rng.normal(0.0, 5.0);
    }
    dm.column_names = {"a", "b", "intercept"};
    const RegressionFit fit = ols_fit(dm);
    double y_norm = 0.0;
    for (double v : dm.y) y_norm += v * v;
    y_norm = std::sqrt(y_norm);
    for (std::size_t j = 0; j < dm.d; ++j) {
        double dot = 0.0;
        for (std::size_t r = 0; r < dm.n; ++r) {
            double pred = 0.0;
            for (std::size_t i = 0; i < dm.d; ++i) pred += dm.x[r * dm.d + i] * fit.beta[i];
            dot += dm.x[r * dm.d + j] * (dm.y[r] - pred);
        }
        CHECK(std::abs(dot) < 1e-8 * y_norm);
    }
}

TEST_CASE("ridge solution converges monotonically to OLS as rho shrinks") {
    const std::vector<RegressionRow> rows = synthetic_rows(120, 4.0, 10.0, 31);
    const DesignMatrix dm = build_design_matrix(rows, true);
    const RegressionFit ols = ols_fit(dm);
    double prev = 1e100;
    for (double rho : {1e-2, 1e-4, 1e-6, 1e-8, 1e-10}) {
        const RegressionFit ridge = ridge_fit(dm, rho);
        double dist = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            dist += (ridge.beta[i] - ols.beta[i]) * (ridge.beta[i] - ols.beta[i]);
        }
        dist = std::sqrt(dist);
        CHECK(dist < prev);
        prev = dist;
    }
    CHECK(prev < 1e-8);
}

TEST_CASE("gaussian_loglik values and domain") {
    CHECK(gaussian_loglik({1.0}, {1.0}, 1.0 / (2.0 * std::numbers::pi))[0] ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(gaussian_loglik({1.0}, {1.0}, 1.0)[0] ==
          doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
    // monotone decrease in |residual|
    double last = 0.0;
    bool first = true;
    for (double r : {0.0, 1.0, 2.0, 5.0, 50.0}) {
        const double ll = gaussian_loglik({r}, {0.0}, 2.0)[0];
        if (!first) CHECK(ll < last);
        last = ll;
        first = false;
    }
    CHECK_THROWS_AS(gaussian_loglik({1.0}, {1.0}, 0.0), DomainError);
    CHECK_THROWS_AS(gaussian_loglik({1.0}, {1.0}, -1.0), DomainError);
}

TEST_CASE("delta_llh is zero for identical fits and positive for real effects") {
    const std::vector<RegressionRow> rows = synthetic_rows(200, 8.0, 15.0, 41);
    const RegressionFit baseline = ols_fit(build_design_matrix(rows, false));
    CHECK(delta_llh(rows, baseline, baseline) == 0.0);

    // fit on one half, evaluate held out
    const std::vector<RegressionRow> train(rows.begin(), rows.begin() + 100);
    const std::vector<RegressionRow> held(rows.begin() + 100, rows.end());
    const RegressionFit t = ols_fit(build_design_matrix(train, true));
    const RegressionFit b = ols_fit(build_design_matrix(train, false));
    CHECK(delta_llh(held, t, b) > 0.0);

    CHECK_THROWS_AS(delta_llh({}, t, b), DomainError);
}

TEST_CASE("delta_llh with a noise predictor stays within 2 SE of zero") {
    std::vector<RegressionRow> rows = synthetic_rows(400, 0.0, 15.0, 53);
    Rng rng(54);
    // surprisal column carries no signal: replace it with fresh white noise
    for (auto& row : rows) row.surprisal_bits = rng.normal(0.0, 1.0);
    const std::vector<RegressionRow> train(rows.begin(), rows.begin() + 200);
    const std::vector<RegressionRow> held(rows.begin() + 200, rows.end());
    const RegressionFit t = ols_fit(build_design_matrix(train, true));
    const RegressionFit b = ols_fit(build_design_matrix(train, false));
    const std::vector<double> d = delta_llh_per_row(held, t, b);
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    const double se = std::sqrt(var / (static_cast<double>(d.size()) - 1.0) /
                                static_cast<double>(d.size()));
    CHECK(std::abs(mean) < 2.0 * se);
}

TEST_CASE("delta_llh is invariant to positive rescaling of the surprisal column") {
    const std::vector<RegressionRow> rows = synthetic_rows(150, 6.0, 12.0, 61);
    std::vector<RegressionRow> scaled = rows;
    for (auto& row : scaled) row.surprisal_bits = *row.surprisal_bits * std::numbers::ln2;

    auto dllh_of = [](const std::vector<RegressionRow>& all) {
        const std::vector<RegressionRow> train(all.begin(), all.begin() + 75);
        const std::vector<RegressionRow> held(all.begin() + 75, all.end());
        return delta_llh(held, ols_fit(build_design_matrix(train, true)),
                         ols_fit(build_design_matrix(train, false)));
    };
    CHECK(dllh_of(rows) == doctest::Approx(dllh_of(scaled)).epsilon(1e-9));
}

TEST_CASE("adding the true surprisal column never hurts in-sample likelihood") {
    for (std::uint64_t seed : {71u, 72u, 73u}) {
        const std::vector<RegressionRow> rows = synthetic_rows(80, 2.0, 25.0, seed);
        std::vector<double> y(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) y[i] = rows[i].rt_ms;
        const RegressionFit t = ols_fit(build_design_matrix(rows, true));
        const RegressionFit b = ols_fit(build_design_matrix(rows, false));
        // in-sample Gaussian MLE log-likelihood is monotone in sigma2
        CHECK(t.sigma2 <= b.sigma2 + 1e-12);
    }
}

TEST_CASE("kfold_cv partitions the rows and reports positive dllh on real effects") {
    const std::vector<RegressionRow> rows = synthetic_rows(103, 10.0, 10.0, 83);
    const CVReport report = kfold_cv(rows, 5, 1);
    CHECK(report.k == 5);
    CHECK(report.n_rows == 103);
    CHECK(report.fold_fits.size() == 5);
    CHECK(report.mean_dllh_nats > 0.0);
    CHECK(report.coefficient_means.at("surprisal") == doctest::Approx(10.0).epsilon(0.2));

    // synthetic oracle across seeds
    for (std::uint64_t seed : {2u, 3u, 4u}) {
        CHECK(kfold_cv(synthetic_rows(103, 10.0, 10.0, seed), 5, seed).mean_dllh_nats > 0.0);
    }
}

TEST_CASE("kfold_cv leave-one-out and domain checks") {
    const std::vector<RegressionRow> rows = synthetic_rows(10, 4.0, 5.0, 91);
    const CVReport loo = kfold_cv(rows, 10, 7);
    CHECK(loo.fold_fits.size() == 10);
    CHECK_THROWS_AS(kfold_cv(rows, 1, 7), DomainError);
    CHECK_THROWS_AS(kfold_cv(rows, 11, 7), DomainError);
}

TEST_CASE("kfold_cv with permuted reading times is a null result") {
    std::vector<RegressionRow> rows = synthetic_rows(300, 6.0, 10.0, 97);
    std::vector<double> rts(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rts[i] = rows[i].rt_ms;
    Rng rng(98);
    rng.shuffle(rts);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rt_ms = rts[i];
    const CVReport report = kfold_cv(rows, 5, 99);
    CHECK(std::abs(report.mean_dllh_nats) < 2.0 * report.dllh_se);
}

TEST_CASE("mse basics") {
    CHECK(mse({1.0, 2.0}, {1.0, 2.0}) == 0.0);
    CHECK(mse({0.0, 0.0}, {2.0, 2.0}) == 4.0);
    CHECK_THROWS_AS(mse({}, {}), DomainError);

    // constant prediction at the mean gives the population variance
    const std::vector<double> y = {1.0, 4.0, 7.0, 10.0};
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / 4.0;
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= 4.0;
    CHECK(mse(y, {mean, mean, mean, mean}) == doctest::Approx(var).epsilon(1e-12));
}

TEST_CASE("CVReport serialization") {
    const CVReport report = kfold_cv(synthetic_rows(40, 5.0, 8.0, 101), 4, 5);
    const std::string json = to_json(report);
    CHECK(json.find("\"mean_dllh_nats\"") != std::string::npos);
    CHECK(json.find("\"folds\"") != std::string::npos);
    const std::string csv = fold_coefficients_csv(report);
    CHECK(csv.rfind("fold,column,beta\n", 0) == 0);
    // 4 folds x 4 target columns + header
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);
}

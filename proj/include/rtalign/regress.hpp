#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rtalign/errors.hpp"

namespace rtalign {

struct RegressionRow {
    std::optional<double> surprisal_bits;
    double unigram_bits = 0.0;
    double length_chars = 0.0;
    double rt_ms = 0.0;
};

struct DesignMatrix {
    std::size_t n = 0, d = 0;
    std::vector<double> x;  // n x d row-major
    std::vector<double> y;  // length n
    std::vector<std::string> column_names;
};

struct RegressionFit {
    std::vector<double> beta;
    double sigma2 = 0.0;  // MLE residual variance (ms^2)
    double rho = 0.0;     // ridge strength used; 0 for OLS
    std::vector<std::string> column_names;

    double predict(const double* row) const;
    bool uses_surprisal() const { return column_names.size() == 4; }
};

// Target columns: [surprisal, unigram, length, intercept]. The baseline
// omits the surprisal column entirely; a literal zero column would make
// X^T X singular under OLS.
DesignMatrix build_design_matrix(const std::vector<RegressionRow>& rows, bool include_surprisal);

// beta = (X^T X + rho I)^{-1} X^T y via Cholesky.
RegressionFit ridge_fit(const DesignMatrix& dm, double rho);
// Unregularized normal equations via Cholesky; rank deficiency raises
// SingularDesignError.
RegressionFit ols_fit(const DesignMatrix& dm);

// Element i = -0.5 ln(2 pi sigma2) - (y_i - y_hat_i)^2 / (2 sigma2), nats.
std::vector<double> gaussian_loglik(const std::vector<double>& y,
                                    const std::vector<double>& y_hat, double sigma2);

// Per-unit target-minus-baseline log-likelihood differences in nats, each
// model using its own sigma^2.
std::vector<double> delta_llh_per_row(const std::vector<RegressionRow>& rows,
                                      const RegressionFit& target_fit,
                                      const RegressionFit& baseline_fit);
double delta_llh(const std::vector<RegressionRow>& rows, const RegressionFit& target_fit,
                 const RegressionFit& baseline_fit);

double mse(const std::vector<double>& y, const std::vector<double>& y_hat);

struct FoldFits {
    RegressionFit target;
    RegressionFit baseline;
};

struct CVReport {
    std::size_t k = 0;
    std::size_t n_rows = 0;
    double mean_dllh_nats = 0.0;
    double dllh_se = 0.0;  // standard error of the unit-level differences
    double mean_mse = 0.0;
    std::vector<FoldFits> fold_fits;
    std::map<std::string, double> coefficient_means;  // target model, per column
};

// Rows shuffled by seed and partitioned into k near-equal folds (remainder
// rows go to the earliest folds); both regressors fit by OLS on the other
// k-1 folds and evaluated on the held-out fold. Predictors are not
// standardized.
CVReport kfold_cv(const std::vector<RegressionRow>& rows, std::size_t k, std::uint64_t seed);

std::string to_json(const CVReport& report);
// CSV `fold,column,beta` over the per-fold target fits.
std::string fold_coefficients_csv(const CVReport& report);

}  // namespace rtalign

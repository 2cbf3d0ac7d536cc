#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "rtalign/errors.hpp"

namespace rtalign::linalg {

// Cholesky factor of a symmetric positive definite n x n matrix stored
// row-major. Returns the lower triangular L with A = L L^T. Throws
// NotSpdError when a non-positive pivot is encountered.
inline std::vector<double> cholesky_factor(const std::vector<double>& a, std::size_t n) {
    std::vector<double> l(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
            if (i == j) {
                if (!(s > 0.0) || !std::isfinite(s)) {
                    throw NotSpdError("cholesky: non-positive pivot at row " + std::to_string(i));
                }
                l[i * n + i] = std::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    return l;
}

// Solves A x = b for one right-hand side given the Cholesky factor L:
// forward substitution L z = b, then back substitution L^T x = z.
inline std::vector<double> cholesky_solve_vec(const std::vector<double>& l, std::size_t n,
                                              const std::vector<double>& b) {
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * z[k];
        z[i] = s / l[i * n + i];
    }
    std::vector<double> x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = z[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * x[k];
        x[ii] = s / l[ii * n + ii];
    }
    return x;
}

// Solves A X = B with B given as n x m row-major.
inline std::vector<double> cholesky_solve(const std::vector<double>& l, std::size_t n,
                                          const std::vector<double>& b, std::size_t m) {
    std::vector<double> x(n * m);
    std::vector<double> col(n);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = b[i * m + j];
        const std::vector<double> xc = cholesky_solve_vec(l, n, col);
        for (std::size_t i = 0; i < n; ++i) x[i * m + j] = xc[i];
    }
    return x;
}

}  // namespace rtalign::linalg

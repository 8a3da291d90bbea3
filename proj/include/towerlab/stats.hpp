#pragma once

#include <vector>

namespace towerlab {

struct FitResult {
    double slope = 0.0, intercept = 0.0, r2 = 0.0;
    int points = 0;
};

/// Ordinary least squares y = intercept + slope x.
FitResult linear_fit(const std::vector<double>& x, const std::vector<double>& y);

/// Least squares of log(value) on n; non-positive values are skipped.
FitResult fit_log_linear(const std::vector<double>& n, const std::vector<double>& value);

/// Linear-interpolated quantile, q in [0,1].
double quantile(std::vector<double> v, double q);

double mean(const std::vector<double>& v);
/// Sample standard deviation (n - 1 denominator).
double stddev(const std::vector<double>& v);

}  // namespace towerlab

#include "towerlab/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace towerlab {

FitResult linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("linear_fit: size mismatch");
    const auto n = static_cast<Eigen::Index>(x.size());
    FitResult r;
    r.points = static_cast<int>(n);
    if (n < 2) return r;
    Eigen::MatrixXd A(n, 2);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        A(i, 0) = 1.0;
        A(i, 1) = x[i];
        b(i) = y[i];
    }
    const Eigen::Vector2d beta = A.colPivHouseholderQr().solve(b);
    r.intercept = beta(0);
    r.slope = beta(1);
    const double ybar = b.mean();
    const double ss_tot = (b.array() - ybar).square().sum();
    const double ss_res = (b - A * beta).squaredNorm();
    r.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return r;
}

FitResult fit_log_linear(const std::vector<double>& n, const std::vector<double>& value) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < n.size() && i < value.size(); ++i) {
        if (value[i] > 0.0 && std::isfinite(value[i])) {
            xs.push_back(n[i]);
            ys.push_back(std::log(value[i]));
        }
    }
    return linear_fit(xs, ys);
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= v.size()) return v.back();
    return v[i] + (pos - static_cast<double>(i)) * (v[i + 1] - v[i]);
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace towerlab

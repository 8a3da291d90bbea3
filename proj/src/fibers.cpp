#include "towerlab/fibers.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace towerlab {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require(bool ok, const char* what) {
    if (!ok) throw DomainError(what);
}

double inner_value(double alpha, double x) {
    const double r = std::abs(x - quad::c) / quad::w;
    return 0.75 + 0.25 * (1.0 - std::pow(r, alpha));
}

}  // namespace

double quad_left_inverse(double y) { return y / (2.0 * (1.0 + std::sqrt(1.0 - y))); }

double lorenz_h(double alpha, double u) {
    return kLorenzMix * std::pow(u, alpha) + (1.0 - kLorenzMix) * u;
}

double lorenz_h_inverse(double alpha, double v) {
    require(v >= 0.0 && v <= 1.0, "lorenz: branch value outside [0,1]");
    if (v == 0.0) return 0.0;
    if (v == 1.0) return 1.0;
    // p u^a <= h(u) <= u^a on [0,1] brackets the root.
    const double lo = std::pow(v, 1.0 / alpha);
    const double hi = std::min(1.0, std::pow(v / kLorenzMix, 1.0 / alpha));
    return solve_increasing([alpha](double u) { return lorenz_h(alpha, u); },
                            [alpha](double u) {
                                return kLorenzMix * alpha * std::pow(u, alpha - 1.0) +
                                       (1.0 - kLorenzMix);
                            },
                            lo, hi, v);
}

double solve_increasing(const std::function<double(double)>& f,
                        const std::function<double(double)>& df, double lo, double hi,
                        double y, double abs_tol) {
    require(lo <= hi, "solver: empty bracket");
    const double flo = f(lo), fhi = f(hi);
    require(flo <= y + 1e-15 && fhi >= y - 1e-15, "solver: value outside branch image");
    if (flo >= y) return lo;
    if (fhi <= y) return hi;
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 400; ++it) {
        const double fx = f(x) - y;
        if (fx == 0.0) return x;
        if (fx < 0.0) lo = x; else hi = x;
        const double width = hi - lo;
        if (width <= abs_tol && width <= 4.0 * kEps * std::max(std::abs(lo), std::abs(hi)))
            break;
        const double d = df(x);
        double next = (std::isfinite(d) && d > 0.0) ? x - fx / d : lo - 1.0;
        if (!(next > lo && next < hi)) {
            next = (lo > 0.0 && hi > 4.0 * lo) ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
        } else if (std::abs(next - x) <= 2.0 * kEps * std::abs(x)) {
            return next;
        }
        if (next == x) break;
        x = next;
    }
    return 0.5 * (lo + hi);
}

Branch branch_of(const FiberMap& m, double x) {
    if (m.family == Family::quadratic) {
        require(x >= 0.0 && x <= 1.0, "quadratic: x outside [0,1]");
        if (x < quad::x0) return Branch::outer_left;
        if (x > quad::right) return Branch::outer_right;
        return x <= quad::c ? Branch::inner_left : Branch::inner_right;
    }
    require(x >= -0.5 && x <= 0.5, "lorenz: x outside [-1/2,1/2]");
    require(x != 0.0, "lorenz: singularity at 0");
    return x < 0.0 ? Branch::lorenz_left : Branch::lorenz_right;
}

double eval(const FiberMap& m, double x) {
    const Branch b = branch_of(m, x);
    switch (b) {
        case Branch::outer_left:
        case Branch::outer_right: return 4.0 * x * (1.0 - x);
        case Branch::inner_left:
        case Branch::inner_right: return inner_value(m.alpha, x);
        case Branch::lorenz_right: return lorenz_h(m.alpha, 2.0 * x) - 0.5;
        case Branch::lorenz_left: return 0.5 - lorenz_h(m.alpha, -2.0 * x);
    }
    return 0.0;
}

double derivative(const FiberMap& m, double x) {
    const Branch b = branch_of(m, x);
    switch (b) {
        case Branch::outer_left:
        case Branch::outer_right: return 4.0 - 8.0 * x;
        case Branch::inner_left:
        case Branch::inner_right: {
            require(x != quad::c, "quadratic: derivative at the critical point");
            const double r = std::abs(x - quad::c) / quad::w;
            const double mag = 0.25 * m.alpha * std::pow(r, m.alpha - 1.0) / quad::w;
            return x < quad::c ? mag : -mag;
        }
        case Branch::lorenz_left:
        case Branch::lorenz_right: {
            const double u = 2.0 * std::abs(x);
            return 2.0 * (kLorenzMix * m.alpha * std::pow(u, m.alpha - 1.0) + (1.0 - kLorenzMix));
        }
    }
    return 0.0;
}

double branch_inverse(const FiberMap& m, Branch b, double y) {
    switch (b) {
        case Branch::outer_left:
            require(m.family == Family::quadratic && y >= 0.0 && y <= 0.75,
                    "outer-left inverse: y outside [0, 3/4]");
            return quad_left_inverse(y);
        case Branch::outer_right:
            require(m.family == Family::quadratic && y >= 0.0 && y <= 0.75,
                    "outer-right inverse: y outside [0, 3/4]");
            return 0.5 * (1.0 + std::sqrt(1.0 - y));
        case Branch::inner_left:
        case Branch::inner_right: {
            require(m.family == Family::quadratic && y >= 0.75 && y <= 1.0,
                    "inner inverse: y outside [3/4, 1]");
            const double t = quad::w * std::pow(4.0 * (1.0 - y), 1.0 / m.alpha);
            return b == Branch::inner_left ? quad::c - t : quad::c + t;
        }
        case Branch::lorenz_right:
            require(m.family == Family::lorenz && y > -0.5 && y <= 0.5,
                    "lorenz right inverse: y outside (-1/2, 1/2]");
            return 0.5 * lorenz_h_inverse(m.alpha, y + 0.5);
        case Branch::lorenz_left:
            require(m.family == Family::lorenz && y >= -0.5 && y < 0.5,
                    "lorenz left inverse: y outside [-1/2, 1/2)");
            return -0.5 * lorenz_h_inverse(m.alpha, 0.5 - y);
    }
    return 0.0;
}

}  // namespace towerlab

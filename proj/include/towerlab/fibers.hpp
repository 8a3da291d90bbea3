#pragma once

#include <functional>
#include <stdexcept>

namespace towerlab {

enum class Family { quadratic, lorenz };

/// Geometry of the quadratic family: f(x) = 4x(1-x) off [x0, 3/4], and on
/// [x0, 3/4] the inner branch g(x) = 3/4 + (1/4)(1 - |x - c|^a / w^a).
namespace quad {
inline constexpr double x0 = 0.25;
inline constexpr double right = 0.75;
inline constexpr double c = 0.5;
inline constexpr double w = 0.25;
}  // namespace quad

/// Lorenz branch blend: f(x) = sign(x) (p (2|x|)^a + (1-p) 2|x| - 1/2).
inline constexpr double kLorenzMix = 0.5;

enum class Branch { outer_left, outer_right, inner_left, inner_right, lorenz_left, lorenz_right };

struct FiberMap {
    Family family = Family::quadratic;
    double alpha = 1.5;  ///< critical order (quadratic, > 1) or exponent (lorenz, in (0, 1/2))
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

double eval(const FiberMap& m, double x);

/// Exact derivative of the implemented formula; throws at c (quadratic) or 0 (lorenz).
double derivative(const FiberMap& m, double x);

/// The branch whose closed domain contains x (quadratic gluing points go to the inner branch).
Branch branch_of(const FiberMap& m, double x);

/// The unique x on `b` with eval(x) = y.
double branch_inverse(const FiberMap& m, Branch b, double y);

/// Safeguarded Newton on an increasing function with f(lo) <= y <= f(hi).
/// Iterates until the bracket is below both `abs_tol` and a few ulps of the root.
double solve_increasing(const std::function<double(double)>& f,
                        const std::function<double(double)>& df, double lo, double hi,
                        double y, double abs_tol = 1e-13);

/// Stable (1 - sqrt(1 - y)) / 2: the left preimage of y under 4x(1-x), and also
/// 1 minus the right preimage.
double quad_left_inverse(double y);

/// Lorenz half-branch h(u) = p u^a + (1-p) u on [0, 1] and its inverse.
double lorenz_h(double alpha, double u);
double lorenz_h_inverse(double alpha, double v);

}  // namespace towerlab

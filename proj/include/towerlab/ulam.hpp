#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "towerlab/tower.hpp"

namespace towerlab {

using Vec = Eigen::VectorXd;
using SparseRM = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

/// Ulam matrix of F from fiber k to fiber k+1:
/// E(i,j) = lam(C_i intersect F^{-1} C_j) / lam(C_i), rows indexed by grid(k).
struct TransferMatrix {
    long fiber = 0;
    int steps = 1;
    SparseRM E;
    std::vector<double> defect;  ///< per-row mass leaving the resolved grid
    double max_defect = 0.0;

    int rows() const { return static_cast<int>(E.rows()); }
    int cols() const { return static_cast<int>(E.cols()); }
};

TransferMatrix build_operator(const TowerChain& c, long k);

/// Operators along the chain, cached by fiber.
class Cocycle {
public:
    explicit Cocycle(const TowerChain& c, double defect_budget = 1e-3);

    const TowerChain& chain() const { return c_; }
    double defect_budget() const { return budget_; }

    const TransferMatrix& op(long k) const;
    /// Build fibers [lo, hi) (parallel over fibers).
    void prepare(long lo, long hi) const;
    void evict(long lo, long hi) const;

    /// L_k on a lambda-density over grid(k); result is over grid(k+1).
    Vec push(long k, const Vec& rho) const;
    Vec push_n(long k, int n, Vec rho) const;
    /// Cell average of phi o F: phi over grid(k+1), result over grid(k).
    Vec koopman(long k, const Vec& phi) const;
    Vec koopman_n(long k, int n, Vec phi) const;
    /// P_k psi = v^{-1} L_k (v psi) on m-densities.
    Vec normalized(long k, const Vec& psi) const;
    Vec normalized_n(long k, int n, Vec psi) const;

    /// Explicit product E_k E_{k+1} ... E_{k+n-1}; n = 0 gives the identity.
    /// Throws if the accumulated defect exceeds the budget.
    TransferMatrix compose(long k, int n) const;

private:
    const TowerChain& c_;
    double budget_;
    mutable std::mutex mu_;
    mutable std::map<long, std::shared_ptr<TransferMatrix>> ops_;
};

/// Integrals over a grid.
double lam_integral(const TowerGrid& g, const Vec& rho);
double m_integral(const TowerChain& c, const TowerGrid& g, const Vec& psi);
double l1_distance(const TowerGrid& g, const Vec& a, const Vec& b);
/// Density of lambda restricted to level 0, normalized to mass 1.
Vec level0_uniform(const TowerGrid& g);
Vec weights(const TowerChain& c);

struct DensityResult {
    Vec h;
    int n = 0;            ///< pullback depth used (or Cesaro length)
    double gap = 0.0;     ///< last convergence gap in L1
    double defect = 0.0;  ///< mass lost before normalization
    bool converged = false;
};

/// h = L^n_{sigma^{-n} omega} 1 (normalized), stopping at the first n with
/// |h^(n) - h^(n+5)|_1 <= tol, n stepping by 5.
DensityResult equivariant_density(const Cocycle& L, long k, int n_back, double tol);

/// (1/n) sum_{j<n} L^j_{sigma^{-j} omega} u, with u uniform on level 0.
DensityResult cesaro_density(const Cocycle& L, long k, int n);

/// h_k, L_k h_k, L_{k+1} L_k h_k, ... for count fibers.
std::vector<Vec> density_orbit(const Cocycle& L, long k, const Vec& h, int count);

/// |int (phi o F) psi dm - int (P psi) phi dm'| with the scale of both sides.
struct DualityGap {
    double gap = 0.0, scale = 0.0;
};
DualityGap duality_check(const Cocycle& L, long k, const Vec& phi_next, const Vec& psi);

/// Header level,cell_lo,cell_hi,value (17 significant digits).
void write_density_csv(const std::string& path, const TowerChain& c, long k, const Vec& h);

}  // namespace towerlab

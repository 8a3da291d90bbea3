#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "towerlab/tower.hpp"
#include "towerlab/ulam.hpp"

namespace towerlab {

struct ConeInfeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Cone C(a,b,c) together with the constants it was derived from.
struct ConeParams {
    double a = 0.0, b = 0.0, c = 0.0;
    double kappa = 0.5, eps_ly = 0.25;
    double alpha = 0.5, alpha_p = 1.5;
    double C = 1.0, D_F = 1.0, Dcal = 1.0, D1 = 0.0, D2 = 0.0;
    int depth = 0;    ///< cylinder depth of the good partition
    int horizon = 0;  ///< n of the bad set

    ConeParams scaled(double s) const {
        ConeParams q = *this;
        q.a *= s;
        q.b *= s;
        q.c *= s;
        return q;
    }
};

/// Partition and metric data for cones at one fiber.
struct ConeGeometry {
    struct Pair {
        int i, j;
        double d;
    };
    long fiber = 0;
    int horizon = 0, depth = 0, k_max = 0;
    std::vector<char> bad;
    std::vector<int> bad_cells;
    std::vector<std::vector<int>> groups;  ///< good cells with equal depth-k codes
    std::vector<double> mu_group, m_group;
    std::vector<Pair> pairs;               ///< same-element cell pairs
    std::vector<double> mw;                ///< v * lam per cell
    double D1 = 0.0, D2 = 0.0;
    double Dcal = 0.0;                     ///< max mu(A)/m(A) over good groups
};

/// Element codes (level * pieces + piece, -1 after escape) of cell centers for
/// steps 0..steps-1.
std::vector<std::vector<int>> cell_codes(const TowerChain& c, long k, int steps);

/// h is the equivariant lambda-density at fiber k (defines mu).
ConeGeometry cone_geometry(const TowerChain& c, long k, int horizon, int depth, int k_max,
                           const Vec& h);

double sup_norm(const Vec& psi);
/// max over same-element pairs of |psi_i - psi_j| / d_ij.
double lip_seminorm(const ConeGeometry& g, const Vec& psi);

enum ConeCondition { kAverage = 0, kLipschitz = 1, kBadSup = 2, kNonneg = 3 };
inline constexpr const char* kConditionNames[4] = {"average", "lipschitz", "bad_sup", "nonneg"};

struct ConeReport {
    bool member = false;
    double integral = 0.0;
    double slack[4] = {0, 0, 0, 0};  ///< margins relative to the m-integral
    int worst_cell[4] = {-1, -1, -1, -1};
};

/// Cone conditions on an m-density. Throws if the m-integral is not positive.
ConeReport membership(const Vec& psi, const ConeGeometry& g, const ConeParams& p);
/// Same test without the integral precondition (non-positive integral -> false).
bool is_member(const Vec& psi, const ConeGeometry& g, const ConeParams& p);

/// log( sup(phi/psi) * sup(psi/phi) ) for strictly positive vectors.
double hilbert_plus(const Vec& phi, const Vec& psi);

struct HilbertResult {
    double theta = 0.0;
    double a_frak = 0.0, b_frak = 0.0;
    bool finite = true;
};

/// Exact scan over the linear constraint functionals of the cone.
HilbertResult hilbert_cone(const Vec& phi, const Vec& psi, const ConeGeometry& g,
                           const ConeParams& p);
/// Independent oracle: bisection on rho with is_member.
HilbertResult hilbert_cone_bisection(const Vec& phi, const Vec& psi, const ConeGeometry& g,
                                     const ConeParams& p);

struct ConeInputs {
    double alpha = 0.5, alpha_p = 1.5;
    double kappa = 0.5, eps = 0.25;
    double C = 1.0, D_F = 1.0, Dcal = 1.0, D1 = 0.0, D2 = 0.0;
};

/// a with 10% margin, then (b, c) from the coupled inequalities with 10% margin.
/// Throws ConeInfeasible when a denominator is non-positive.
ConeParams default_params(const ConeInputs& in);

/// The three smallness constraints: alpha' D1 b < alpha/4, alpha' c D2 < alpha/4, D_F D2 < kappa.
bool smallness_ok(const ConeParams& p);

/// Re-check of a > (alpha'+alpha/2)/kappa, c > C(D a + D1 b)/(kappa - D_F D2), b > D_F C c/(kappa - eps).
bool header_inequalities_ok(const ConeParams& p);

/// log(d / min{d, 1 - kappa}), d = max{(4 alpha' + 2 alpha)/alpha, (1 + kappa)/(1 - kappa)}.
double diameter_bound(double alpha, double alpha_p, double kappa);

struct ContractionPair {
    bool member = false;
    double theta_before = 0.0, theta_after = 0.0, bound = 0.0;
    bool contracted = false;
    ConeReport report_phi, report_psi;
};
struct ContractionReport {
    std::vector<ContractionPair> pairs;
    double D = 0.0;
    bool ok = true;
};
/// For each pair in C(a,b,c) at fiber k0: images under P^k must lie in C(ka,kb,kc) at
/// fiber k0+k and satisfy Theta_after <= tanh(D/4) Theta_before + 1e-10.
ContractionReport contraction_check(const Cocycle& L, long k0, int k,
                                    const std::vector<std::pair<Vec, Vec>>& pairs,
                                    const ConeGeometry& g0, const ConeGeometry& gk,
                                    const ConeParams& p);

struct LYReport {
    int N = 0;
    double worst[3] = {0, 0, 0};  ///< max lhs / rhs per case (<= 1 passes)
    int pairs[3] = {0, 0, 0};
    bool ok = true;
};
/// Smallest N with e^{-theta' N / 2} max{1, C + D_F} < eps.
int ly_threshold(double theta_prime, double C, double D_F, double eps);
LYReport lasota_yorke_check(const Cocycle& L, long k0, int k, const Vec& psi,
                            const ConeGeometry& g0, const ConeGeometry& gk, double eps,
                            double D_F, double C, int N);

}  // namespace towerlab

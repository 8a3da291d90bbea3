#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "towerlab/cones.hpp"
#include "towerlab/ulam.hpp"

namespace towerlab {

/// A per-cell observable with cylinder-granular norms.
struct Observable {
    Vec values;
    double sup = 0.0, lip = 0.0;
    bool lipschitz = true;
    double norm() const { return sup + lip; }
};

Observable make_observable(const ConeGeometry& g, Vec values, bool lipschitz = true);

/// f(x, level) at the cell centers of fiber k (x in the base of fiber k - level).
using CellFunction = std::function<double(double x, int level)>;
Vec sample_observable(const TowerChain& c, long k, const CellFunction& f);

/// Observables selectable by name: inverse_level 1/(1+l), base_indicator 1{l = 0},
/// cos_x cos(4 pi x), x. Throws std::invalid_argument for other names.
CellFunction named_observable(const std::string& name);

/// Random smooth observable on fiber k: a few random x-harmonics over the base plus
/// random per-level offsets on the lowest levels. Deterministic in (seed, k).
Vec random_lipschitz(const TowerChain& c, long k, std::uint64_t seed);

/// Projection pi(x, l) = f^l_{sigma^{-l} omega}(x) of cell centers, fiber k.
Vec project_centers(const TowerChain& c, long k);

struct ShiftResult {
    Vec phi_tilde;  ///< m-view, unit m-integral
    double C_phi = 0.0;
    double K = 0.0;
    ConeReport report;
};

/// phi_tilde = (phi + C h) / (v (K + C)) with C the least admissible shift
/// (1e-6 relative margin). phi is a lambda-view observable, h the lambda-density.
ShiftResult cone_shift(const TowerChain& c, const ConeGeometry& g, const Vec& phi, const Vec& h,
                       const ConeParams& p);

struct CorrValue {
    int n = 0;
    double signed_value = 0.0;
    double value = 0.0;  ///< |signed_value|
    double bound = 0.0;
    double defect = 0.0;
};

/// Centered mean of psi under the density w, shifted by psi[0] so constant psi
/// gives its value exactly.
double centered_mean(const Vec& psi, const Vec& w, const TowerGrid& g);

/// int (psi o F^n) phi dlam - int psi dmu_{sigma^n} int phi dlam, in the mass-consistent
/// form int (psi - mean_mu psi) L^n phi dlam. h is the lambda-density at fiber k.
CorrValue operator_correlation(const Cocycle& L, long k, const Vec& phi, const Vec& psi,
                               const Vec& h, int n);

/// Series for n = 0..n_max; psi_at(m) gives psi over fiber m.
std::vector<CorrValue> operator_correlation_series(const Cocycle& L, long k, const Vec& phi,
                                                   const std::function<Vec(long)>& psi_at,
                                                   const Vec& h, int n_max);

struct McValue {
    int n = 0;
    double estimate = 0.0, stderr_ = 0.0;
};

/// Monte Carlo over the true tower dynamics: x ~ lambda on the truncated tower of
/// fiber k, per-n products (psi - mean)(F^n x) * phi(x), batch-means standard error.
/// Batches run in parallel with independent streams; output does not depend on the
/// thread count.
std::vector<McValue> mc_correlation_series(const TowerChain& c, long k, const Vec& phi,
                                           const std::function<Vec(long)>& psi_at,
                                           const std::vector<Vec>& h_orbit, int n_max,
                                           long samples, std::uint64_t seed, int batches = 32);

struct DecayFit {
    double beta = 0.0, C = 0.0, r2 = 0.0;
    int points = 0, lo = 0, hi = 0;
};
/// Log-linear fit of value on n over [lo, hi], skipping values <= floor.
DecayFit fit_decay(const std::vector<int>& n, const std::vector<double>& value, int lo, int hi,
                   double floor);

/// Coarse partition for mixing ratios: level-0 cells in `blocks` equal x-blocks of
/// the base, then one element per level 1..bands-1, then one for higher levels.
std::vector<int> mixing_partition(const TowerChain& c, long k, int blocks, int bands);

/// mu(A intersect F^{-k} A') / (mu(A) mu'(A')) with mu' from L^k h.
double mixing_ratio(const Cocycle& L, long k0, const Vec& h, const std::vector<char>& A,
                    const std::vector<char>& Aprime, int k);

/// max over element pairs of |rho - 1| and the extreme ratios, for each k = 0..k_max.
struct MixingSeries {
    std::vector<double> max_dev, min_ratio, max_ratio;
};
MixingSeries mixing_series(const Cocycle& L, long k0, const Vec& h, int blocks, int bands,
                           int k_max);

/// Interval-map correlation via the tower: phi_bar = phi_hat o pi weighted by h,
/// psi_bar = psi_hat o pi.
CorrValue project_correlation(const Cocycle& L, long k, const std::function<double(double)>& phi_hat,
                              const std::function<double(double)>& psi_hat, const Vec& h, int n);

}  // namespace towerlab
